from refsplat.losses.schemes.loss_config import LossConfig, LossBundle

__all__ = ["LossConfig", "LossBundle"]

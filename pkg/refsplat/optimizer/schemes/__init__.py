from refsplat.optimizer.schemes.train_config import TrainConfig, AblationPreset

__all__ = ["TrainConfig", "AblationPreset"]

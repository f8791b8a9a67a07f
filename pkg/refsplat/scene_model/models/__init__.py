from refsplat.scene_model.models.gaussian_cloud import GaussianCloud, RawGaussianParams, ActivatedGaussians, PARAM_NAMES

__all__ = ["GaussianCloud", "RawGaussianParams", "ActivatedGaussians", "PARAM_NAMES"]

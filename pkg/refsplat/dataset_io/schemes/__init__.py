from refsplat.dataset_io.schemes.dataset import Dataset, SyntheticSceneSpec, SyntheticScene

__all__ = ["Dataset", "SyntheticSceneSpec", "SyntheticScene"]

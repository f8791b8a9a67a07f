from refsplat.utils.common import get_project_base_directory, seed_everything, config_hash, resolve_dtype
from refsplat.utils.exceptions import (
    RefSplatError, ConfigError, DataError, UnsupportedCameraModelError, PlyFormatError, SplitMissingError,
    NumericalError, DegenerateRotationError, SingularCovarianceError, NonFiniteLossError, DensificationError,
    ShapeMismatchError, InvalidArgumentError,
)

__all__ = [
    # 通用工具函数
    "get_project_base_directory",
    "seed_everything",
    "config_hash",
    "resolve_dtype",
    # 异常类
    "RefSplatError",
    "ConfigError",
    "DataError",
    "UnsupportedCameraModelError",
    "PlyFormatError",
    "SplitMissingError",
    "NumericalError",
    "DegenerateRotationError",
    "SingularCovarianceError",
    "NonFiniteLossError",
    "DensificationError",
    "ShapeMismatchError",
    "InvalidArgumentError",
]

from typing import Any


class RefSplatError(Exception):
    """基础异常类"""
    exit_code: int = 1

    def __init__(self, message: str, code: str = None, details: Any = None):
        self.message = message
        self.code = code
        self.details = details
        super().__init__(self.message)


class ConfigError(RefSplatError):
    """配置错误"""
    exit_code = 2

    def __init__(self, message: str, details: Any = None):
        super().__init__(message, "CONFIG_ERROR", details)


class DataError(RefSplatError):
    """数据错误（文件缺失、格式不符等）"""
    exit_code = 3

    def __init__(self, message: str, details: Any = None):
        super().__init__(message, "DATA_ERROR", details)


class UnsupportedCameraModelError(DataError):
    """不支持的相机模型"""
    def __init__(self, model_name: str):
        super().__init__(f"不支持的相机模型: {model_name}", {"model": model_name})
        self.model_name = model_name


class PlyFormatError(DataError):
    """PLY 解析错误"""
    def __init__(self, message: str, offset: int = None, property_name: str = None):
        super().__init__(message, {"offset": offset, "property": property_name})
        self.offset = offset
        self.property_name = property_name


class SplitMissingError(DataError):
    """训练/测试划分缺失"""


class NumericalError(RefSplatError):
    """数值错误"""
    exit_code = 4

    def __init__(self, message: str, details: Any = None):
        super().__init__(message, "NUMERICAL_ERROR", details)


class DegenerateRotationError(NumericalError):
    """零范数四元数"""


class SingularCovarianceError(NumericalError):
    """协方差矩阵正则化后仍然奇异"""


class NonFiniteLossError(NumericalError):
    """损失出现非有限值"""
    def __init__(self, iteration: int, term: str, values: dict = None):
        super().__init__(
            f"第 {iteration} 次迭代损失非有限: {term}",
            {"iteration": iteration, "term": term, "values": values or {}},
        )
        self.iteration = iteration
        self.term = term


class DensificationError(NumericalError):
    """增密/剪枝后高斯数量为零"""


class ShapeMismatchError(RefSplatError, ValueError):
    """形状不匹配"""
    def __init__(self, message: str, details: Any = None):
        super().__init__(message, "SHAPE_MISMATCH", details)


class InvalidArgumentError(ConfigError, ValueError):
    """调用参数不合法（重复次数、系数等）"""

from pydantic_settings import BaseSettings
from pydantic import Field
from refsplat.utils.common import get_project_meta, get_project_base_directory


# 定义全局配置常量
_meta = get_project_meta()
APP_NAME = _meta["name"]
APP_VERSION = _meta["version"]
APP_DESCRIPTION = _meta["description"]

PROJECT_BASE_DIR = get_project_base_directory()


class Settings(BaseSettings):
    """运行环境配置类 - 平铺结构（训练/损失超参见 RunConfig）"""

    # 日志配置
    app_log_level: str = Field(default="INFO", description="日志级别", env="APP_LOG_LEVEL")
    log_dir: str = Field(default="logs", description="日志文件目录", env="LOG_DIR")
    log_to_file: bool = Field(default=True, description="是否写入日志文件", env="LOG_TO_FILE")

    # 计算配置
    num_threads: int = Field(default=0, description="torch 线程数，0 表示默认", env="NUM_THREADS")
    deterministic: bool = Field(default=True, description="确定性归约模式", env="DETERMINISTIC")
    default_dtype: str = Field(default="float32", description="训练精度: float32 或 float64", env="DEFAULT_DTYPE")

    class Config:
        env_file = "env"
        env_file_encoding = "utf-8"


# 全局配置实例
settings = Settings()

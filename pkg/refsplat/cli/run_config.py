import os
import io
import math
import logging
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError, field_validator
from ruamel.yaml import YAML, YAMLError

from refsplat.config.settings import settings
from refsplat.dataset_io.schemes.dataset import SyntheticSceneSpec
from refsplat.dataset_io.services.image_service import DEFAULT_TARGET_SIZE
from refsplat.evalkit.services.export_service import DEFAULT_RELIGHT_COEFFICIENTS
from refsplat.optimizer.schemes.train_config import AblationPreset, TrainConfig
from refsplat.utils.common import config_hash
from refsplat.utils.exceptions import ConfigError

RUN_CONFIG_FILE = "run_config.yaml"

# 命令行参数 -> RunConfig 中的键路径
FLAG_PATHS = {
    "data": ("data",),
    "out": ("out",),
    "checkpoint": ("checkpoint",),
    "seed": ("seed",),
    "iters": ("train", "total_iters"),
    "mode": ("train", "accumulation_mode"),
    "lambda_bi": ("train", "loss", "lambda_bi"),
    "lambda_ref": ("train", "loss", "lambda_ref"),
    "lambda_init": ("train", "loss", "lambda_init"),
    "gamma": ("train", "loss", "gamma"),
    "resolution": ("resolution",),
    "threads": ("threads",),
    "coefficients": ("relight_coefficients",),
    "views": ("synthetic", "n_views"),
}


class RunConfig(BaseModel):
    """一次命令运行的完整配置（默认值 < 配置文件 < 命令行参数）"""
    seed: int = Field(0, description="全局种子：划分、初始化噪声与相机打乱")
    data: Optional[str] = Field(None, description="数据目录")
    out: Optional[str] = Field(None, description="输出目录")
    checkpoint: Optional[str] = Field(None, description="检查点 PLY 或训练输出目录")
    resolution: Optional[Tuple[int, int]] = Field(DEFAULT_TARGET_SIZE, description="重采样目标 (宽, 高)，None 保持原尺寸")
    threads: int = Field(settings.num_threads, description="torch 线程数，0 表示默认")
    deterministic: bool = Field(settings.deterministic, description="确定性归约模式")
    dtype: str = Field(settings.default_dtype, description="训练精度 float32 | float64")
    max_sh_degree: int = Field(3, description="最大球谐阶数")
    ablation: AblationPreset = Field(AblationPreset.FULL, description="模型设计消融预设")
    ablation_applied: bool = Field(False, description="消融预设是否已合并进 train")
    relight_coefficients: List[float] = Field(
        default_factory=lambda: list(DEFAULT_RELIGHT_COEFFICIENTS), description="重光照系数"
    )
    train: TrainConfig = Field(default_factory=TrainConfig, description="训练配置")
    synthetic: SyntheticSceneSpec = Field(default_factory=SyntheticSceneSpec, description="合成场景参数")

    @field_validator("resolution")
    @classmethod
    def check_resolution(cls, value):
        if value is not None and (value[0] < 16 or value[1] < 16):
            raise ValueError(f"分辨率至少为 16x16: {value}")
        return value

    @field_validator("dtype")
    @classmethod
    def check_dtype(cls, value: str) -> str:
        if value not in ("float32", "float64"):
            raise ValueError(f"不支持的精度: {value}")
        return value

    @field_validator("relight_coefficients")
    @classmethod
    def check_coefficients(cls, value: List[float]) -> List[float]:
        if not value or any(not math.isfinite(c) or c < 0 for c in value):
            raise ValueError(f"重光照系数必须是非负有限数: {value}")
        return value

    def hash(self) -> str:
        return config_hash(self.model_dump(mode="json"))


def parse_resolution(text: Optional[str]) -> Optional[Tuple[int, int]]:
    """'WxH' -> (W, H)；'native' 表示保持原尺寸"""
    if text is None:
        return None
    if text.lower() in ("native", "none"):
        return None
    parts = text.lower().split("x")
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise ConfigError(f"分辨率格式应为 WxH: {text}")
    return int(parts[0]), int(parts[1])


def _yaml() -> YAML:
    yaml = YAML(typ="safe", pure=True)
    yaml.default_flow_style = False
    return yaml


def load_config_file(path: str) -> Dict[str, Any]:
    if not os.path.isfile(path):
        raise ConfigError(f"配置文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = _yaml().load(f)
    except YAMLError as e:
        logging.error(f"配置文件解析失败 {path}: {e}")
        raise ConfigError(f"配置文件解析失败 {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件顶层必须是映射: {path}")
    return data


def _set_path(data: Dict[str, Any], path: Tuple[str, ...], value: Any) -> None:
    node = data
    for key in path[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"配置键 {'.'.join(path)} 与已有值冲突")
    node[path[-1]] = value


def resolve_run_config(flags: Dict[str, Any], config_path: Optional[str] = None,
                       ablation: Optional[str] = None) -> RunConfig:
    """
    合并配置：模型默认值 < 配置文件 < 消融预设 < 显式给出的命令行参数

    Args:
        flags: 命令行参数，值为 None 表示未给出
        config_path: YAML 配置文件
        ablation: 消融预设名

    Returns:
        RunConfig: 完全解析的配置
    """
    data = load_config_file(config_path) if config_path else {}
    if ablation is not None:
        data["ablation"] = ablation
        data["ablation_applied"] = False
    try:
        run = RunConfig.model_validate(data)
        if run.ablation != AblationPreset.FULL and not run.ablation_applied:
            run = run.model_copy(update={"train": run.train.with_ablation(run.ablation), "ablation_applied": True})

        merged = run.model_dump(mode="json")
        for name, value in flags.items():
            if value is None or name not in FLAG_PATHS:
                continue
            if name == "resolution" and isinstance(value, str):
                value = parse_resolution(value)
            _set_path(merged, FLAG_PATHS[name], value)
        run = RunConfig.model_validate(merged)
    except ValidationError as e:
        logging.error(f"配置校验失败: {e}")
        raise ConfigError(f"配置校验失败: {e}") from e
    return run


def dump_run_config(run: RunConfig) -> str:
    stream = io.StringIO()
    _yaml().dump(run.model_dump(mode="json"), stream)
    return stream.getvalue()


def save_run_config(run: RunConfig, out_dir: str) -> str:
    """把完全解析的配置写到输出目录"""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, RUN_CONFIG_FILE)
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_run_config(run))
    logging.info(f"运行配置已写出: {path} (hash={run.hash()})")
    return path

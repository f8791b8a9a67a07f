import os
import json
import random
import logging
from pathlib import Path
from typing import Any, Dict, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import numpy as np
import torch
import xxhash


def get_project_meta(package_name: str = "refsplat"):
    """从 pyproject.toml 读取项目元数据"""
    toml_path = Path(__file__).parent.parent.parent / "pyproject.toml"
    if not toml_path.exists():
        return {
            "name": package_name,
            "version": "",
            "description": "",
        }

    with open(toml_path, "rb") as f:
        data = tomllib.load(f)
    poetry = data.get("tool", {}).get("poetry", {})
    return {
        "name": poetry.get("name", package_name),
        "version": poetry.get("version", "0.0.0"),
        "description": poetry.get("description", ""),
    }


def get_project_base_directory():
    # 通过查找包含pyproject.toml的目录来确定项目根目录
    current_dir = os.path.dirname(__file__)

    project_root = current_dir
    while project_root != os.path.dirname(project_root):  # 直到到达文件系统根目录
        if os.path.exists(os.path.join(project_root, "pyproject.toml")):
            break
        project_root = os.path.dirname(project_root)

    return project_root


def seed_everything(seed: int, deterministic: bool = True) -> None:
    """统一设置随机种子（python / numpy / torch）"""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
    logging.debug(f"随机种子已设置: {seed}, 确定性模式: {deterministic}")


def configure_threads(num_threads: Optional[int]) -> None:
    """设置 torch 线程数，0 或 None 表示使用默认值"""
    if num_threads:
        torch.set_num_threads(int(num_threads))
        logging.info(f"torch 线程数: {num_threads}")


def canonical_json(data: Dict[str, Any]) -> str:
    """稳定的 JSON 序列化（键排序，用于哈希）"""
    return json.dumps(data, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def config_hash(data: Dict[str, Any]) -> str:
    """配置哈希 (xxh64)"""
    return xxhash.xxh64(canonical_json(data).encode("utf-8")).hexdigest()


def resolve_dtype(name: str) -> torch.dtype:
    """将字符串精度名解析为 torch.dtype"""
    mapping = {"float32": torch.float32, "float64": torch.float64}
    if name not in mapping:
        raise ValueError(f"不支持的精度: {name}")
    return mapping[name]

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from refsplat.projection.schemes.camera import Camera
from refsplat.utils.exceptions import DataError

TRAIN = "train"
TEST = "test"

# 墙面纹理取值范围；物体纹理取 [0, 1]，反射强度上限保证合成图像不超过 1
WALL_TEXTURE_RANGE = (0.1, 0.6)
MAX_REFLECTION_STRENGTH = 1.0 - WALL_TEXTURE_RANGE[1]


@dataclass
class Dataset:
    """带位姿的图像集合与稀疏点"""
    cameras: List[Camera]
    images: List[np.ndarray]          # 每张 (H, W, 3) float32，取值 [0, 1]
    points: np.ndarray                # (P, 3)
    point_colors: np.ndarray          # (P, 3)，取值 [0, 1]
    split: List[str] = field(default_factory=list)
    name: str = "scene"
    split_seed: Optional[int] = None

    def __post_init__(self):
        if not self.split:
            self.split = [TRAIN] * len(self.cameras)

    @property
    def image_names(self) -> List[str]:
        return [cam.image_name or f"{i:05d}.png" for i, cam in enumerate(self.cameras)]

    def validate(self) -> None:
        if len(self.cameras) != len(self.images):
            raise DataError(f"相机数 {len(self.cameras)} 与图像数 {len(self.images)} 不一致")
        if len(self.split) != len(self.cameras):
            raise DataError("划分标签数与图像数不一致")
        if not self.train_indices():
            raise DataError("数据集中没有训练图像")
        for cam, image in zip(self.cameras, self.images):
            if image.shape != (cam.height, cam.width, 3):
                raise DataError(
                    f"图像 {cam.image_name} 尺寸 {image.shape} 与相机 {(cam.height, cam.width)} 不符"
                )

    def train_indices(self) -> List[int]:
        return [i for i, tag in enumerate(self.split) if tag == TRAIN]

    def test_indices(self) -> List[int]:
        return [i for i, tag in enumerate(self.split) if tag == TEST]

    def scene_extent(self) -> float:
        """相机中心到其均值的最大距离 × 1.1"""
        centers = np.stack([cam.camera_center().double().numpy() for cam in self.cameras])
        radius = float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()) * 1.1
        return radius if radius > 0 else 1.0


class SyntheticSceneSpec(BaseModel):
    """合成镜面场景：纹理墙面 + 墙面上的矩形镜子 + 相机后方的纹理物体"""
    n_views: int = Field(16, description="视角数")
    resolution: Tuple[int, int] = Field((128, 128), description="图像尺寸 (宽, 高)")
    fov_deg: float = Field(60.0, description="水平视场角（度）")
    wall_distance: float = Field(4.0, description="墙面所在平面 z")
    camera_spread: float = Field(0.6, description="相机在 z=0 平面上的分布半径")
    mirror_center: Tuple[float, float] = Field((0.3, -0.2), description="镜子中心 (x, y)，位于墙面")
    mirror_size: Tuple[float, float] = Field((1.4, 1.0), description="镜子宽高")
    object_distance: float = Field(-3.0, description="被反射物体平面 z（相机后方）")
    reflection_strength: float = Field(0.4, description="反射强度，取值 [0, MAX_REFLECTION_STRENGTH]")
    wall_seed: int = Field(0, description="墙面纹理种子")
    object_seed: int = Field(1, description="物体纹理种子")
    n_points: int = Field(2000, description="墙面稀疏点数")
    name: str = Field("synthetic_mirror", description="场景名")

    @field_validator("n_views")
    @classmethod
    def check_views(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"视角数至少为 1: {value}")
        return value

    @field_validator("reflection_strength")
    @classmethod
    def check_strength(cls, value: float) -> float:
        if not 0 <= value <= MAX_REFLECTION_STRENGTH:
            raise ValueError(f"反射强度必须在 [0, {MAX_REFLECTION_STRENGTH:g}] 内: {value}")
        return value

    @field_validator("fov_deg")
    @classmethod
    def check_fov(cls, value: float) -> float:
        if not 0 < value < 180:
            raise ValueError(f"视场角必须在 (0, 180) 内: {value}")
        return value


@dataclass
class SyntheticScene:
    """合成场景及其真值分解"""
    spec: SyntheticSceneSpec
    dataset: Dataset
    masks: List[np.ndarray]       # (H, W) bool，镜面像素
    diffuse: List[np.ndarray]     # (H, W, 3) 无镜面时的图像
    mirrored: List[np.ndarray]    # (H, W, 3) 镜中物体颜色（镜外为 0）
    fully_visible: List[bool]     # 镜子四角是否都在视野内

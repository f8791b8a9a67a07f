from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import torch
from pydantic import BaseModel, Field, field_validator, model_validator


class Camera(BaseModel):
    """针孔相机：内参 + 世界到相机的刚体变换 + 图像尺寸"""
    fx: float = Field(..., description="x 方向焦距（像素）")
    fy: float = Field(..., description="y 方向焦距（像素）")
    cx: float = Field(..., description="主点 x（像素）")
    cy: float = Field(..., description="主点 y（像素）")
    width: int = Field(..., description="图像宽度（像素）")
    height: int = Field(..., description="图像高度（像素）")
    rotation: List[List[float]] = Field(
        default_factory=lambda: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        description="世界到相机旋转矩阵 3x3",
    )
    translation: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0], description="世界到相机平移")
    image_name: Optional[str] = Field(None, description="对应图像文件名")

    @field_validator("fx", "fy")
    @classmethod
    def check_focal(cls, value: float) -> float:
        if not value > 0:
            raise ValueError(f"焦距必须为正: {value}")
        return value

    @field_validator("width", "height")
    @classmethod
    def check_size(cls, value: int) -> int:
        if value < 16:
            raise ValueError(f"图像尺寸至少为 16 像素: {value}")
        return value

    @model_validator(mode="after")
    def check_pose(self) -> "Camera":
        if np.asarray(self.rotation).shape != (3, 3):
            raise ValueError("rotation 必须是 3x3 矩阵")
        if len(self.translation) != 3:
            raise ValueError("translation 必须是 3 维向量")
        return self

    def rotation_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.tensor(self.rotation, dtype=dtype)

    def translation_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.tensor(self.translation, dtype=dtype)

    def camera_center(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """相机光心的世界坐标 -Rᵀt"""
        r = self.rotation_tensor(dtype)
        return -(r.transpose(0, 1) @ self.translation_tensor(dtype))

    def scaled(self, width: int, height: int) -> "Camera":
        """按新的图像尺寸等比缩放内参"""
        sx = width / self.width
        sy = height / self.height
        return self.model_copy(update={
            "fx": self.fx * sx,
            "fy": self.fy * sy,
            "cx": self.cx * sx,
            "cy": self.cy * sy,
            "width": width,
            "height": height,
        })

    @classmethod
    def look_at(cls, eye, target, up, fx: float, fy: float, width: int, height: int,
                image_name: Optional[str] = None) -> "Camera":
        """由位置与注视点构造相机（+z 朝前，+y 朝下）"""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.stack([right, down, forward])
        translation = -rotation @ eye
        return cls(
            fx=fx, fy=fy, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
            width=width, height=height,
            rotation=rotation.tolist(), translation=translation.tolist(),
            image_name=image_name,
        )


@dataclass
class Splat2D:
    """单个高斯在屏幕空间的投影"""
    mean2d: torch.Tensor  # (2,) 像素
    cov2d: torch.Tensor   # (2, 2) 像素²，已加低通膨胀
    depth: torch.Tensor   # () 相机空间 z
    gaussian_index: int


@dataclass
class ProjectedSplats:
    """可见高斯的批量投影结果，indices 指回点云下标"""
    indices: torch.Tensor     # (M,) long
    means2d: torch.Tensor     # (M, 2)
    cov2d: torch.Tensor       # (M, 2, 2)
    conics: torch.Tensor      # (M, 3) 逆协方差 (a, b, c)
    depths: torch.Tensor      # (M,)
    radii: torch.Tensor       # (M,) long

    @property
    def count(self) -> int:
        return int(self.indices.shape[0])

    def splat(self, i: int) -> Splat2D:
        return Splat2D(
            mean2d=self.means2d[i],
            cov2d=self.cov2d[i],
            depth=self.depths[i],
            gaussian_index=int(self.indices[i]),
        )

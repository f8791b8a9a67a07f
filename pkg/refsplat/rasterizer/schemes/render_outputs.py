from dataclasses import dataclass, field
from typing import Dict, Optional

import torch

from refsplat.scene_model.models.gaussian_cloud import GaussianCloud, PARAM_NAMES


@dataclass
class TileBins:
    """按 16x16 分块的排序列表：tile_splats[offsets[t]:offsets[t+1]] 为第 t 块按深度升序的泼溅位置"""
    tile_size: int
    tiles_x: int
    tiles_y: int
    tile_splats: torch.Tensor   # (L,) long，指向 ProjectedSplats 中的位置
    tile_offsets: torch.Tensor  # (tiles_x * tiles_y + 1,) long

    @property
    def num_tiles(self) -> int:
        return self.tiles_x * self.tiles_y

    def tile_id(self, tx: int, ty: int) -> int:
        return ty * self.tiles_x + tx

    def tile_list(self, tile_id: int) -> torch.Tensor:
        start = int(self.tile_offsets[tile_id])
        end = int(self.tile_offsets[tile_id + 1])
        return self.tile_splats[start:end]


@dataclass
class RenderOutputs:
    """一次前向渲染的全部输出与反向所需记录"""
    composed: torch.Tensor         # (H, W, 3) Ĉ，未截断
    transmitted: torch.Tensor      # (H, W, 3)
    reflected: torch.Tensor        # (H, W, 3)
    reflection_map: torch.Tensor   # (H, W)
    depth: torch.Tensor            # (H, W)
    alpha_accum: torch.Tensor      # (H, W)
    # 反向记录：本次前向使用的参数叶子与屏幕空间均值（计算图本身即合成记录）
    cloud: Optional[GaussianCloud] = None
    means2d: Optional[torch.Tensor] = None        # (M, 2)
    visible_indices: Optional[torch.Tensor] = None  # (M,)
    radii: Optional[torch.Tensor] = None          # (M,)
    bins: Optional[TileBins] = None
    mode: str = "paper"

    @property
    def height(self) -> int:
        return int(self.composed.shape[0])

    @property
    def width(self) -> int:
        return int(self.composed.shape[1])

    def fields(self) -> Dict[str, torch.Tensor]:
        """参与反向的四个渲染量"""
        return {
            "composed": self.composed,
            "transmitted": self.transmitted,
            "reflection_map": self.reflection_map,
            "depth": self.depth,
        }

    def detached(self) -> "RenderOutputs":
        return RenderOutputs(
            composed=self.composed.detach(),
            transmitted=self.transmitted.detach(),
            reflected=self.reflected.detach(),
            reflection_map=self.reflection_map.detach(),
            depth=self.depth.detach(),
            alpha_accum=self.alpha_accum.detach(),
            visible_indices=self.visible_indices,
            radii=self.radii,
            bins=self.bins,
            mode=self.mode,
        )


@dataclass
class ParamGradients:
    """与原始参数同形的梯度，外加屏幕空间均值梯度（增密统计用）"""
    means: torch.Tensor
    rotations: torch.Tensor
    log_scales: torch.Tensor
    opacity_logits: torch.Tensor
    sh_trans: torch.Tensor
    sh_ref: torch.Tensor
    ref_opacity_logits: torch.Tensor
    beta_logits: torch.Tensor
    means2d: torch.Tensor = field(default=None)  # (N, 2)，未见的高斯为 0

    @classmethod
    def zeros_like(cls, cloud: GaussianCloud) -> "ParamGradients":
        grads = {name: torch.zeros_like(t.detach()) for name, t in cloud.params().items()}
        return cls(**grads, means2d=torch.zeros((cloud.num_gaussians, 2), dtype=cloud.dtype))

    def as_dict(self) -> Dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def add_(self, other: "ParamGradients") -> "ParamGradients":
        """跨像素/相机的梯度累加"""
        for name in PARAM_NAMES + ("means2d",):
            getattr(self, name).add_(getattr(other, name))
        return self

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(t).all()) for t in self.as_dict().values())

import math
from typing import Tuple

import torch

from refsplat.rasterizer.schemes.render_outputs import TileBins

TILE_SIZE = 16


class BinningService:
    """泼溅分块与深度排序"""

    @staticmethod
    def depth_order(depths: torch.Tensor, gaussian_indices: torch.Tensor) -> torch.Tensor:
        """按深度升序、同深度按高斯下标升序的稳定排序"""
        by_index = torch.argsort(gaussian_indices, stable=True)
        by_depth = torch.argsort(depths[by_index], stable=True)
        return by_index[by_depth]

    @staticmethod
    def pixel_rect(means2d: torch.Tensor, radii: torch.Tensor, width: int, height: int) -> Tuple[torch.Tensor, ...]:
        """3σ 方框覆盖的像素范围 [x0, x1] x [y0, y1]（闭区间，已裁剪到图像内）"""
        r = radii.to(means2d.dtype)
        x0 = torch.clamp_min(torch.ceil(means2d[:, 0] - r), 0).long()
        x1 = torch.clamp_max(torch.floor(means2d[:, 0] + r), width - 1).long()
        y0 = torch.clamp_min(torch.ceil(means2d[:, 1] - r), 0).long()
        y1 = torch.clamp_max(torch.floor(means2d[:, 1] + r), height - 1).long()
        return x0, x1, y0, y1

    @staticmethod
    def bin_and_sort(
        means2d: torch.Tensor,
        radii: torch.Tensor,
        depths: torch.Tensor,
        gaussian_indices: torch.Tensor,
        width: int,
        height: int,
        tile_size: int = TILE_SIZE,
    ) -> TileBins:
        """
        把每个泼溅分配到其 3σ 方框覆盖的所有分块，块内按深度排序

        Args:
            means2d: (M, 2) 屏幕坐标
            radii: (M,) 3σ 半径
            depths: (M,) 相机空间深度
            gaussian_indices: (M,) 点云下标（同深度时的次序）
            width, height: 图像尺寸

        Returns:
            TileBins: 分块列表，元素为泼溅在输入数组中的位置
        """
        tiles_x = math.ceil(width / tile_size)
        tiles_y = math.ceil(height / tile_size)
        num_tiles = tiles_x * tiles_y

        with torch.no_grad():
            order = BinningService.depth_order(depths.detach(), gaussian_indices)
            x0, x1, y0, y1 = BinningService.pixel_rect(means2d.detach()[order], radii[order], width, height)
            valid = (x0 <= x1) & (y0 <= y1) & (radii[order] > 0)

            tx0 = torch.div(x0, tile_size, rounding_mode="floor")
            tx1 = torch.div(x1, tile_size, rounding_mode="floor")
            ty0 = torch.div(y0, tile_size, rounding_mode="floor")
            ty1 = torch.div(y1, tile_size, rounding_mode="floor")
            span_x = torch.where(valid, tx1 - tx0 + 1, torch.zeros_like(tx0))
            span_y = torch.where(valid, ty1 - ty0 + 1, torch.zeros_like(ty0))
            counts = span_x * span_y

            total = int(counts.sum())
            if total == 0:
                return TileBins(tile_size, tiles_x, tiles_y,
                                torch.zeros(0, dtype=torch.long),
                                torch.zeros(num_tiles + 1, dtype=torch.long))

            # 按排序次序展开 (泼溅, 分块) 对
            rank = torch.repeat_interleave(torch.arange(order.shape[0]), counts)
            starts = torch.cumsum(counts, 0) - counts
            local = torch.arange(total) - starts[rank]
            sx = span_x[rank]
            tile_x = tx0[rank] + local % sx
            tile_y = ty0[rank] + torch.div(local, sx, rounding_mode="floor")
            tile_ids = tile_y * tiles_x + tile_x

            # 稳定排序保留块内的深度次序
            by_tile = torch.argsort(tile_ids, stable=True)
            tile_splats = order[rank[by_tile]]
            per_tile = torch.bincount(tile_ids, minlength=num_tiles)
            offsets = torch.zeros(num_tiles + 1, dtype=torch.long)
            offsets[1:] = torch.cumsum(per_tile, 0)

        return TileBins(tile_size, tiles_x, tiles_y, tile_splats, offsets)

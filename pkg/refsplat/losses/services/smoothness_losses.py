import logging
from typing import List, Optional, Tuple

import torch

from refsplat.utils.exceptions import InvalidArgumentError

# 8 邻域：每个无序像素对只出现一次的四个方向
HALF_NEIGHBORHOOD: List[Tuple[int, int]] = [(0, 1), (1, 0), (1, 1), (1, -1)]
FULL_NEIGHBORHOOD: List[Tuple[int, int]] = HALF_NEIGHBORHOOD + [(-dy, -dx) for dy, dx in HALF_NEIGHBORHOOD]

# 累积 alpha 低于此值的像素视为背景
BACKGROUND_ALPHA = 1e-4


def shift_pair(t: torch.Tensor, dy: int, dx: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """返回 (t[p], t[p + (dy, dx)])，只保留两端都在图内的像素"""
    h, w = t.shape[0], t.shape[1]
    first = t[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    second = t[max(0, dy):h - max(0, -dy), max(0, dx):w - max(0, -dx)]
    return first, second


def neighborhood(both_orientations: bool) -> List[Tuple[int, int]]:
    return FULL_NEIGHBORHOOD if both_orientations else HALF_NEIGHBORHOOD


def edge_weight(color_diff_l1: torch.Tensor, gamma: float) -> torch.Tensor:
    """f = exp(-‖ΔC‖₁ / γ)"""
    return torch.exp(-color_diff_l1 / gamma)


def bilateral_smoothness(
    depth: torch.Tensor,
    composed: torch.Tensor,
    gamma: float = 0.1,
    alpha_accum: Optional[torch.Tensor] = None,
    both_orientations: bool = False,
) -> torch.Tensor:
    """
    颜色加权的 8 邻域深度差，按有效像素对数归一化

    Args:
        depth: (H, W) 深度
        composed: (H, W, 3) 合成图像（颜色保留在计算图中）
        gamma: 颜色尺度
        alpha_accum: (H, W) 累积不透明度；任一端低于阈值的像素对被跳过
        both_orientations: 每个像素对按两个方向各计一次
    """
    if gamma <= 0:
        logging.error(f"gamma 必须为正: {gamma}")
        raise InvalidArgumentError(f"gamma 必须为正: {gamma}")
    total = torch.zeros((), dtype=depth.dtype)
    count = 0
    for dy, dx in neighborhood(both_orientations):
        d_i, d_j = shift_pair(depth, dy, dx)
        if d_i.numel() == 0:
            continue
        c_i, c_j = shift_pair(composed, dy, dx)
        weight = edge_weight((c_i - c_j).abs().sum(dim=-1), gamma)
        term = weight * (d_i - d_j).abs()
        if alpha_accum is not None:
            with torch.no_grad():
                a_i, a_j = shift_pair(alpha_accum, dy, dx)
                valid = (a_i >= BACKGROUND_ALPHA) & (a_j >= BACKGROUND_ALPHA)
            term = term * valid.to(term.dtype)
            count += int(valid.sum())
        else:
            count += term.numel()
        total = total + term.sum()
    if count == 0:
        return total
    return total / count


def reflection_map_smoothness(reflection_map: torch.Tensor, both_orientations: bool = False) -> torch.Tensor:
    """8 邻域反射图差的均值"""
    total = torch.zeros((), dtype=reflection_map.dtype)
    count = 0
    for dy, dx in neighborhood(both_orientations):
        w_i, w_j = shift_pair(reflection_map, dy, dx)
        if w_i.numel() == 0:
            continue
        total = total + (w_i - w_j).abs().sum()
        count += w_i.numel()
    if count == 0:
        return total
    return total / count

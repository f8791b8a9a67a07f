import logging
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import torch

from refsplat.utils.exceptions import InvalidArgumentError

# 3D-GS 数值稳定常数
ALPHA_MAX = 0.99
EARLY_STOP_THRESHOLD = 1e-4
DEPTH_EPS = 1e-8

ACCUMULATION_MODES = ("paper", "alpha")


@dataclass
class CompositeResult:
    """一组像素的双分支合成结果"""
    transmitted: torch.Tensor     # (P, 3)
    reflected: torch.Tensor       # (P, 3)
    reflection_map: torch.Tensor  # (P,)
    depth: torch.Tensor           # (P,)
    alpha_accum: torch.Tensor     # (P,)


def exclusive_transmittance(alpha: torch.Tensor) -> torch.Tensor:
    """T_i = ∏_{j<i}(1 - alpha_j)，沿最后一维"""
    ones = torch.ones_like(alpha[..., :1])
    return torch.cat([ones, torch.cumprod(1.0 - alpha, dim=-1)[..., :-1]], dim=-1)


def check_mode(mode: str) -> None:
    if mode not in ACCUMULATION_MODES:
        logging.error(f"未知的反射图累积模式: {mode}，可选 {ACCUMULATION_MODES}")
        raise InvalidArgumentError(f"未知的反射图累积模式: {mode}，可选 {ACCUMULATION_MODES}")


class CompositeService:
    """按深度次序的双分支 alpha 合成"""

    @staticmethod
    def composite_contributions(
        alpha: torch.Tensor,
        alpha_ref: torch.Tensor,
        beta: torch.Tensor,
        colors: torch.Tensor,
        colors_ref: torch.Tensor,
        depths: torch.Tensor,
        mode: str = "paper",
        threshold: float = EARLY_STOP_THRESHOLD,
        reflect: bool = True,
    ) -> CompositeResult:
        """
        对 P 个像素、各自 K 个已排序贡献做合成

        Args:
            alpha: (P, K) θ·G，未截断；不覆盖该像素的贡献为 0
            alpha_ref: (P, K) θ_ref·G，未截断
            beta: (P, K) 反射置信度，不覆盖的位置为 0
            colors: (K, 3) 或 (P, K, 3) 透射颜色
            colors_ref: (K, 3) 或 (P, K, 3) 反射颜色
            depths: (K,) 或 (P, K) 深度
            mode: "paper" 使用 ∏(1-β_j)，"alpha" 使用 T_i
            threshold: 提前终止阈值，0 表示不终止
            reflect: False 时提前终止只看透射分支

        Returns:
            CompositeResult
        """
        check_mode(mode)
        alpha = torch.clamp(alpha, 0.0, ALPHA_MAX)
        alpha_ref = torch.clamp(alpha_ref, 0.0, ALPHA_MAX)

        trans = exclusive_transmittance(alpha)
        trans_ref = exclusive_transmittance(alpha_ref)
        beta_trans = exclusive_transmittance(beta)

        if threshold > 0:
            with torch.no_grad():
                remaining = trans
                if reflect:
                    remaining = torch.maximum(remaining, trans_ref)
                if reflect and mode == "paper":
                    remaining = torch.maximum(remaining, beta_trans)
                keep = (remaining >= threshold).to(alpha.dtype)
            alpha = alpha * keep
            alpha_ref = alpha_ref * keep

        weights = alpha * trans
        weights_ref = alpha_ref * trans_ref
        if colors.dim() == 2:
            transmitted = weights @ colors
            reflected = weights_ref @ colors_ref
        else:
            transmitted = (weights.unsqueeze(-1) * colors).sum(dim=-2)
            reflected = (weights_ref.unsqueeze(-1) * colors_ref).sum(dim=-2)

        if mode == "paper":
            reflection_map = (beta * alpha * beta_trans).sum(dim=-1)
        else:
            reflection_map = (beta * weights).sum(dim=-1)

        alpha_accum = weights.sum(dim=-1)
        depth_sum = (weights * depths).sum(dim=-1)
        depth = depth_sum / torch.clamp_min(alpha_accum, DEPTH_EPS)

        return CompositeResult(
            transmitted=transmitted,
            reflected=reflected,
            reflection_map=reflection_map,
            depth=depth,
            alpha_accum=alpha_accum,
        )

    @staticmethod
    def composite_pixel(
        contributions: Iterable[Sequence],
        mode: str = "paper",
        threshold: float = EARLY_STOP_THRESHOLD,
        dtype: torch.dtype = torch.float64,
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        单像素合成

        Args:
            contributions: 已按深度排序的 (color_trans, color_ref, α, α_ref, β, depth)

        Returns:
            (C_trans, C_ref, W, D, A)
        """
        rows = list(contributions)
        if not rows:
            zero3 = torch.zeros(3, dtype=dtype)
            zero = torch.zeros((), dtype=dtype)
            return zero3, zero3.clone(), zero, zero.clone(), zero.clone()

        def column(i):
            return torch.stack([torch.as_tensor(r[i], dtype=dtype) for r in rows])

        result = CompositeService.composite_contributions(
            alpha=column(2).unsqueeze(0),
            alpha_ref=column(3).unsqueeze(0),
            beta=column(4).unsqueeze(0),
            colors=column(0),
            colors_ref=column(1),
            depths=column(5),
            mode=mode,
            threshold=threshold,
        )
        return (result.transmitted[0], result.reflected[0], result.reflection_map[0],
                result.depth[0], result.alpha_accum[0])

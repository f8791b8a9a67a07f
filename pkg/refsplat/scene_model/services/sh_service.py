import logging

import torch

from refsplat.utils.exceptions import InvalidArgumentError, ShapeMismatchError

# 实球谐基常数（与 3D-GS 约定一致）
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
]
SH_C3 = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
]

# 颜色偏移：rgb = SH(dir) + 0.5
COLOR_SHIFT = 0.5


def sh_coeff_count(degree: int) -> int:
    """给定阶数的系数个数 (degree+1)^2"""
    return (degree + 1) ** 2


def eval_sh_basis(dirs: torch.Tensor, degree: int) -> torch.Tensor:
    """
    计算实球谐基函数值

    Args:
        dirs: (..., 3) 单位方向
        degree: 阶数 0..3

    Returns:
        torch.Tensor: (..., (degree+1)^2)
    """
    if degree < 0 or degree > 3:
        logging.error(f"球谐阶数超出范围 [0, 3]: {degree}")
        raise InvalidArgumentError(f"球谐阶数超出范围 [0, 3]: {degree}")
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    basis = [torch.full_like(x, SH_C0)]
    if degree > 0:
        basis += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree > 1:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        basis += [
            SH_C2[0] * xy,
            SH_C2[1] * yz,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * xz,
            SH_C2[4] * (xx - yy),
        ]
    if degree > 2:
        basis += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * xy * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    return torch.stack(basis, dim=-1)


def eval_sh(coeffs: torch.Tensor, view_dir: torch.Tensor, degree: int) -> torch.Tensor:
    """
    按视线方向计算球谐颜色：基函数与系数逐通道收缩，+0.5 后在 0 处截断

    Args:
        coeffs: (..., K, 3) 系数，K >= (degree+1)^2
        view_dir: (..., 3) 单位方向
        degree: 使用的阶数

    Returns:
        torch.Tensor: (..., 3) rgb
    """
    needed = sh_coeff_count(degree)
    if coeffs.shape[-2] < needed:
        raise ShapeMismatchError(
            f"球谐系数不足: 需要 {needed}, 实际 {coeffs.shape[-2]}",
            {"needed": needed, "actual": coeffs.shape[-2]},
        )
    basis = eval_sh_basis(view_dir, degree)
    rgb = (basis.unsqueeze(-1) * coeffs[..., :needed, :]).sum(dim=-2)
    return torch.clamp_min(rgb + COLOR_SHIFT, 0.0)


def rgb_to_sh(rgb: torch.Tensor) -> torch.Tensor:
    """颜色 -> DC 系数（偏移的逆）"""
    return (rgb - COLOR_SHIFT) / SH_C0


def sh_to_rgb(dc: torch.Tensor) -> torch.Tensor:
    return dc * SH_C0 + COLOR_SHIFT

import logging

import torch
import torch.nn.functional as F

from refsplat.utils.exceptions import InvalidArgumentError, ShapeMismatchError

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"图像形状不一致: {tuple(a.shape)} vs {tuple(b.shape)}",
            {"a": tuple(a.shape), "b": tuple(b.shape)},
        )


def gaussian_window(size: int, sigma: float, dtype: torch.dtype) -> torch.Tensor:
    """归一化的 size x size 高斯窗口"""
    coords = torch.arange(size, dtype=dtype) - size // 2
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def _to_nchw(image: torch.Tensor) -> torch.Tensor:
    """(H, W, C) 或 (H, W) -> (1, C, H, W)"""
    if image.dim() == 2:
        image = image.unsqueeze(-1)
    return image.permute(2, 0, 1).unsqueeze(0)


def ssim_map(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """
    逐像素 SSIM（高斯加权窗口，零填充，逐通道）

    Args:
        a, b: (H, W, C) 或 (H, W)

    Returns:
        torch.Tensor: (C, H, W)
    """
    check_same_shape(a, b)
    if a.shape[0] < window or a.shape[1] < window:
        logging.error(f"图像尺寸 {tuple(a.shape[:2])} 小于 SSIM 窗口 {window}")
        raise InvalidArgumentError(f"图像尺寸 {tuple(a.shape[:2])} 小于 SSIM 窗口 {window}")
    x, y = _to_nchw(a), _to_nchw(b)
    channels = x.shape[1]
    kernel = gaussian_window(window, sigma, a.dtype).expand(channels, 1, window, window).contiguous()
    pad = window // 2

    def blur(img):
        return F.conv2d(img, kernel, padding=pad, groups=channels)

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    sigma_x = blur(x * x) - mu_xx
    sigma_y = blur(y * y) - mu_yy
    sigma_xy = blur(x * y) - mu_xy

    numerator = (2.0 * mu_xy + SSIM_C1) * (2.0 * sigma_xy + SSIM_C2)
    denominator = (mu_xx + mu_yy + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2)
    return (numerator / denominator)[0]


def ssim(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """逐通道平均后再对通道平均"""
    return ssim_map(a, b, window, sigma).mean(dim=(1, 2)).mean()


def l1_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    check_same_shape(a, b)
    return (a - b).abs().mean()


def dssim_loss(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """(1 - SSIM) / 2"""
    return (1.0 - ssim(a, b, window, sigma)) / 2.0


def photometric_loss(gt: torch.Tensor, composed: torch.Tensor, balance: float = 0.8,
                     window: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """λ·L1 + (1-λ)·D-SSIM；λ 为 0 或 1 时只计算需要的一项"""
    if not 0.0 <= balance <= 1.0:
        logging.error(f"平衡系数必须在 [0, 1] 内: {balance}")
        raise InvalidArgumentError(f"平衡系数必须在 [0, 1] 内: {balance}")
    loss = torch.zeros((), dtype=composed.dtype)
    if balance > 0:
        loss = loss + balance * l1_loss(composed, gt)
    if balance < 1:
        loss = loss + (1.0 - balance) * dssim_loss(composed, gt, window, sigma)
    return loss


def init_alignment_loss(gt: torch.Tensor, transmitted: torch.Tensor) -> torch.Tensor:
    """透射图与真值的 L1 对齐"""
    return l1_loss(transmitted, gt)

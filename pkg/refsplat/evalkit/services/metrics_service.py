import os
import math
import time
import logging
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from tabulate import tabulate

from refsplat.dataset_io.schemes.dataset import Dataset
from refsplat.evalkit.schemes.metrics_report import MetricsReport, ViewMetrics
from refsplat.losses.services.image_losses import check_same_shape, ssim
from refsplat.projection.schemes.camera import Camera
from refsplat.rasterizer.services.render_service import RenderService
from refsplat.scene_model.models.gaussian_cloud import GaussianCloud
from refsplat.utils.exceptions import DataError, InvalidArgumentError

PSNR_CAP = 100.0


def _as_tensor(image) -> torch.Tensor:
    if isinstance(image, np.ndarray):
        image = torch.from_numpy(image)
    return image.detach().to(torch.float64)


def psnr(a, b) -> float:
    """10·log10(1 / MSE)，相同图像返回上限 100 dB"""
    a, b = _as_tensor(a), _as_tensor(b)
    check_same_shape(a, b)
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def ssim_metric(a, b, window: int = 11, sigma: float = 1.5) -> float:
    return float(ssim(_as_tensor(a), _as_tensor(b), window, sigma))


def measure_fps(cloud: GaussianCloud, cameras: Sequence[Camera], warmup: int = 2, reps: int = 10,
                mode: str = "paper", dual_branch: bool = True) -> float:
    """预热后 reps 次完整前向渲染的平均帧率"""
    if reps < 1:
        logging.error(f"reps 至少为 1: {reps}")
        raise InvalidArgumentError(f"reps 至少为 1: {reps}", {"reps": reps})
    if not cameras:
        logging.error("没有可用于测速的相机")
        raise InvalidArgumentError("没有可用于测速的相机")
    with torch.no_grad():
        for i in range(warmup):
            RenderService.render(cloud, cameras[i % len(cameras)], mode, dual_branch=dual_branch)
        start = time.perf_counter()
        for i in range(reps):
            RenderService.render(cloud, cameras[i % len(cameras)], mode, dual_branch=dual_branch)
        elapsed = time.perf_counter() - start
    return reps / elapsed if elapsed > 0 else float("inf")


def evaluate(
    cloud: GaussianCloud,
    dataset: Dataset,
    indices: Optional[List[int]] = None,
    mode: str = "paper",
    config_hash: str = "",
    out_dir: Optional[str] = None,
    fps_reps: int = 0,
    delimiter: str = ",",
) -> MetricsReport:
    """
    渲染指定视角（默认测试集）并计算 PSNR / SSIM

    Args:
        indices: 评估的视角下标，None 表示测试集
        fps_reps: >0 时额外测量渲染帧率
        out_dir: 写出 metrics.csv 与 metrics.json 的目录

    Returns:
        MetricsReport
    """
    indices = dataset.test_indices() if indices is None else list(indices)
    if not indices:
        raise DataError("评估视角为空（测试集为空）")

    names = dataset.image_names
    views = []
    with torch.no_grad():
        for idx in indices:
            outputs = RenderService.render(cloud, dataset.cameras[idx], mode)
            rendered = torch.clamp(outputs.composed, 0.0, 1.0)
            gt = torch.from_numpy(dataset.images[idx])
            views.append(ViewMetrics(image_name=names[idx], psnr=psnr(rendered, gt), ssim=ssim_metric(rendered, gt)))

    fps = None
    if fps_reps > 0:
        fps = measure_fps(cloud, [dataset.cameras[i] for i in indices], reps=fps_reps, mode=mode)
    report = MetricsReport.from_views(dataset.name, views, config_hash=config_hash, mode=mode, fps=fps)

    table = tabulate([[v.image_name, f"{v.psnr:.3f}", f"{v.ssim:.4f}"] for v in views]
                     + [["mean", f"{report.mean_psnr:.3f}", f"{report.mean_ssim:.4f}"]],
                     headers=["view", "PSNR", "SSIM"], tablefmt="github")
    logging.info(f"评估结果 ({dataset.name}, {len(views)} 个视角):\n{table}")

    if out_dir:
        save_report(report, out_dir, delimiter)
    return report


def save_report(report: MetricsReport, out_dir: str, delimiter: str = ",") -> None:
    os.makedirs(out_dir, exist_ok=True)
    frame = pd.DataFrame(report.rows(), columns=["image_name", "psnr", "ssim"])
    frame.to_csv(os.path.join(out_dir, "metrics.csv"), sep=delimiter, index=False)
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as f:
        f.write(report.model_dump_json(indent=2))
    logging.info(f"评估报告已写出: {out_dir}")

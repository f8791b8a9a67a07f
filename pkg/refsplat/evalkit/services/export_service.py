import os
import math
import logging
from typing import Dict, List, Optional, Sequence

import torch

from refsplat.dataset_io.services.image_service import ImageService
from refsplat.projection.schemes.camera import Camera
from refsplat.rasterizer.services.render_service import RenderService
from refsplat.scene_model.models.gaussian_cloud import GaussianCloud
from refsplat.utils.exceptions import InvalidArgumentError

DEFAULT_RELIGHT_COEFFICIENTS = (0.8, 0.9, 1.0, 1.1, 1.2)
DECOMPOSITION_FIELDS = ("composed", "transmitted", "reflected", "reflection_map", "depth")


def normalize_depth(depth: torch.Tensor) -> torch.Tensor:
    """最小值 -> 0，最大值 -> 1；常数深度映射为 0"""
    low, high = depth.min(), depth.max()
    if float(high - low) <= 0.0:
        return torch.zeros_like(depth)
    return (depth - low) / (high - low)


class ExportService:
    """分解图与重光照序列的导出"""

    @staticmethod
    def decomposition_images(cloud: GaussianCloud, camera: Camera, mode: str = "paper") -> Dict[str, torch.Tensor]:
        with torch.no_grad():
            outputs = RenderService.render(cloud, camera, mode)
        return {
            "composed": torch.clamp(outputs.composed, 0.0, 1.0),
            "transmitted": torch.clamp(outputs.transmitted, 0.0, 1.0),
            "reflected": torch.clamp(outputs.reflected, 0.0, 1.0),
            "reflection_map": outputs.reflection_map,
            "depth": normalize_depth(outputs.depth),
        }

    @staticmethod
    def export_decomposition(cloud: GaussianCloud, camera: Camera, out_dir: str, mode: str = "paper",
                             prefix: Optional[str] = None) -> Dict[str, str]:
        """
        写出 composed / transmitted / reflected / reflection_map / depth 五张 PNG

        Returns:
            Dict[str, str]: 字段名 -> 文件路径
        """
        stem = prefix or os.path.splitext(camera.image_name or "view")[0]
        paths = {}
        for name, image in ExportService.decomposition_images(cloud, camera, mode).items():
            path = os.path.join(out_dir, f"{stem}_{name}.png")
            ImageService.write_image(image.cpu().numpy(), path)
            paths[name] = path
        logging.info(f"分解图已写出: {out_dir}/{stem}_*.png")
        return paths

    @staticmethod
    def export_relit_sequence(cloud: GaussianCloud, camera: Camera,
                              coefficients: Sequence[float] = DEFAULT_RELIGHT_COEFFICIENTS,
                              out_dir: Optional[str] = None, mode: str = "paper") -> List[torch.Tensor]:
        """每个重光照系数渲染一帧；给定 out_dir 时写出 PNG"""
        for kappa in coefficients:
            if not math.isfinite(kappa) or kappa < 0:
                logging.error(f"重光照系数必须是非负有限数: {kappa}")
                raise InvalidArgumentError(f"重光照系数必须是非负有限数: {kappa}", {"kappa": kappa})
        with torch.no_grad():
            outputs = RenderService.render(cloud, camera, mode)
        frames = [RenderService.relight(outputs, kappa) for kappa in coefficients]
        if out_dir:
            stem = os.path.splitext(camera.image_name or "view")[0]
            for kappa, frame in zip(coefficients, frames):
                ImageService.write_image(frame.cpu().numpy(), os.path.join(out_dir, f"{stem}_relit_{kappa:.2f}.png"))
            logging.info(f"重光照序列已写出: {len(frames)} 帧 -> {out_dir}")
        return frames

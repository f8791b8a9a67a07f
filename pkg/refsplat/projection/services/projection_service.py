import math
from typing import Optional

import torch

from refsplat.projection.schemes.camera import Camera, ProjectedSplats, Splat2D

# 3D-GS 参考常数
NEAR_PLANE = 0.2
CULL_MARGIN = 1.3
LOWPASS_DILATION = 0.3
EXTENT_SIGMAS = 3.0
# ceil 前的容差，避免 3*sqrt(4) 之类的精确值因舍入进位
EXTENT_ROUNDING_TOL = 1e-6


class ProjectionService:
    """世界坐标高斯 -> 屏幕空间椭圆"""

    @staticmethod
    def to_camera_space(cam: Camera, means: torch.Tensor) -> torch.Tensor:
        r = cam.rotation_tensor(means.dtype)
        t = cam.translation_tensor(means.dtype)
        return means @ r.transpose(0, 1) + t

    @staticmethod
    def visibility_mask(cam: Camera, t_cam: torch.Tensor) -> torch.Tensor:
        """近平面与 1.3 倍视野外的剔除；不参与求导"""
        with torch.no_grad():
            z = t_cam[:, 2]
            in_front = z > NEAR_PLANE
            z_safe = torch.where(in_front, z, torch.ones_like(z))
            u = cam.fx * t_cam[:, 0] / z_safe + cam.cx
            v = cam.fy * t_cam[:, 1] / z_safe + cam.cy
            half_w = cam.width / 2.0
            half_h = cam.height / 2.0
            inside_u = (u - half_w).abs() <= CULL_MARGIN * half_w
            inside_v = (v - half_h).abs() <= CULL_MARGIN * half_h
            return in_front & inside_u & inside_v

    @staticmethod
    def splat_extent(cov2d: torch.Tensor) -> torch.Tensor:
        """
        3σ 半径：ceil(3·sqrt(最大特征值))

        Args:
            cov2d: (..., 2, 2)

        Returns:
            torch.Tensor: (...) long
        """
        with torch.no_grad():
            a = cov2d[..., 0, 0]
            b = 0.5 * (cov2d[..., 0, 1] + cov2d[..., 1, 0])
            c = cov2d[..., 1, 1]
            mid = 0.5 * (a + c)
            disc = torch.sqrt(torch.clamp_min(mid * mid - (a * c - b * b), 0.0))
            lambda_max = torch.clamp_min(mid + disc, 0.0)
            radius = torch.ceil(EXTENT_SIGMAS * torch.sqrt(lambda_max) - EXTENT_ROUNDING_TOL)
            return torch.clamp_min(radius, 0).long()

    @staticmethod
    def project_gaussians(cam: Camera, means: torch.Tensor, cov3d: torch.Tensor) -> ProjectedSplats:
        """
        批量 EWA 投影：只对未剔除的高斯建图，返回可见子集

        Args:
            cam: 相机
            means: (N, 3) 世界坐标均值
            cov3d: (N, 3, 3) 世界坐标协方差

        Returns:
            ProjectedSplats: 可见高斯（indices 指回输入顺序）
        """
        with torch.no_grad():
            visible = ProjectionService.visibility_mask(cam, ProjectionService.to_camera_space(cam, means))
        indices = torch.nonzero(visible, as_tuple=False).squeeze(-1)

        dtype = means.dtype
        w_rot = cam.rotation_tensor(dtype)
        t_cam = ProjectionService.to_camera_space(cam, means[indices])
        x, y, z = t_cam.unbind(-1)
        inv_z = 1.0 / z

        means2d = torch.stack([cam.fx * x * inv_z + cam.cx, cam.fy * y * inv_z + cam.cy], dim=-1)

        zeros = torch.zeros_like(z)
        jac = torch.stack([
            torch.stack([cam.fx * inv_z, zeros, -cam.fx * x * inv_z * inv_z], dim=-1),
            torch.stack([zeros, cam.fy * inv_z, -cam.fy * y * inv_z * inv_z], dim=-1),
        ], dim=-2)
        transform = jac @ w_rot
        cov2d = transform @ cov3d[indices] @ transform.transpose(-1, -2)
        cov2d = 0.5 * (cov2d + cov2d.transpose(-1, -2))
        cov2d = cov2d + LOWPASS_DILATION * torch.eye(2, dtype=dtype)

        a = cov2d[:, 0, 0]
        b = cov2d[:, 0, 1]
        c = cov2d[:, 1, 1]
        det = a * c - b * b
        conics = torch.stack([c / det, -b / det, a / det], dim=-1)

        return ProjectedSplats(
            indices=indices,
            means2d=means2d,
            cov2d=cov2d,
            conics=conics,
            depths=z,
            radii=ProjectionService.splat_extent(cov2d),
        )

    @staticmethod
    def project_gaussian(cam: Camera, mean: torch.Tensor, cov3d: torch.Tensor,
                         gaussian_index: int = 0) -> Optional[Splat2D]:
        """单个高斯投影；被剔除时返回 None"""
        projected = ProjectionService.project_gaussians(cam, mean.reshape(1, 3), cov3d.reshape(1, 3, 3))
        if projected.count == 0:
            return None
        splat = projected.splat(0)
        splat.gaussian_index = gaussian_index
        return splat


def focal_from_fov(fov_rad: float, size: int) -> float:
    return size / (2.0 * math.tan(fov_rad / 2.0))

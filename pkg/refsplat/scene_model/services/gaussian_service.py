import math
import logging
from typing import Union

import numpy as np
import torch
from sklearn.neighbors import NearestNeighbors

from refsplat.scene_model.models.gaussian_cloud import (
    ActivatedGaussians,
    DEFAULT_MAX_SH_DEGREE,
    GaussianCloud,
    RawGaussianParams,
)
from refsplat.scene_model.services.sh_service import rgb_to_sh, sh_coeff_count
from refsplat.utils.exceptions import DegenerateRotationError, InvalidArgumentError, SingularCovarianceError

# 密度求值时协方差对角正则
COV_EPS = 1e-10
# 初始不透明度 / 反射不透明度 / 反射置信度
INIT_PROBABILITY = 0.1
# 单点时的默认尺度
SINGLE_POINT_SCALE = 0.01
MIN_NEIGHBOR_DIST_SQ = 1e-7


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


class GaussianService:
    """RefGaussian 几何与激活服务"""

    @staticmethod
    def quaternion_to_rotation(rotation: torch.Tensor) -> torch.Tensor:
        """
        四元数 (w, x, y, z) -> 旋转矩阵，使用前先归一化

        Args:
            rotation: (..., 4)

        Returns:
            torch.Tensor: (..., 3, 3)
        """
        norm = torch.linalg.vector_norm(rotation, dim=-1, keepdim=True)
        if (norm == 0).any():
            raise DegenerateRotationError("四元数范数为零，无法构造旋转", {"count": int((norm == 0).sum())})
        q = rotation / norm
        w, x, y, z = q.unbind(-1)
        rows = [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ]
        return torch.stack(rows, dim=-1).reshape(rotation.shape[:-1] + (3, 3))

    @staticmethod
    def build_covariance(rotation: torch.Tensor, log_scale: torch.Tensor) -> torch.Tensor:
        """Σ = R S Sᵀ Rᵀ，S = diag(exp(log_scale))；支持批量"""
        r = GaussianService.quaternion_to_rotation(rotation)
        m = r * torch.exp(log_scale).unsqueeze(-2)
        cov = m @ m.transpose(-1, -2)
        return 0.5 * (cov + cov.transpose(-1, -2))

    @staticmethod
    def eval_gaussian_density(offset: torch.Tensor, cov3d: torch.Tensor) -> torch.Tensor:
        """
        G = exp(-½ offsetᵀ Σ⁻¹ offset)

        Args:
            offset: (..., 3) 相对均值的偏移
            cov3d: (..., 3, 3) 协方差

        Returns:
            torch.Tensor: (...) 密度值
        """
        eye = torch.eye(3, dtype=cov3d.dtype, device=cov3d.device)
        regularized = cov3d + COV_EPS * eye
        det = torch.linalg.det(regularized)
        if not torch.isfinite(det).all() or (det <= 0).any():
            raise SingularCovarianceError("协方差正则化后仍奇异", {"min_det": float(det.min())})
        solved = torch.linalg.solve(regularized, offset.unsqueeze(-1)).squeeze(-1)
        mahalanobis = (offset * solved).sum(dim=-1)
        return torch.exp(-0.5 * mahalanobis)

    @staticmethod
    def activate(params: Union[GaussianCloud, RawGaussianParams]) -> ActivatedGaussians:
        """logit -> sigmoid，旋转/尺度 -> 协方差"""
        if isinstance(params, RawGaussianParams):
            return ActivatedGaussians(
                means=params.mean,
                cov3d=GaussianService.build_covariance(params.rotation, params.log_scale),
                opacity=torch.sigmoid(torch.as_tensor(params.opacity_logit)),
                ref_opacity=torch.sigmoid(torch.as_tensor(params.ref_opacity_logit)),
                beta=torch.sigmoid(torch.as_tensor(params.beta_logit)),
            )
        return ActivatedGaussians(
            means=params.means,
            cov3d=GaussianService.build_covariance(params.rotations, params.log_scales),
            opacity=torch.sigmoid(params.opacity_logits),
            ref_opacity=torch.sigmoid(params.ref_opacity_logits),
            beta=torch.sigmoid(params.beta_logits),
        )

    @staticmethod
    def initial_log_scales(points: np.ndarray) -> np.ndarray:
        """各点到最近 3 个邻居的平均距离取对数（邻居不足时用现有邻居）"""
        count = points.shape[0]
        if count == 1:
            return np.full((1,), math.log(SINGLE_POINT_SCALE))
        k = min(3, count - 1)
        nn = NearestNeighbors(n_neighbors=k + 1).fit(points)
        distances, _ = nn.kneighbors(points)
        # 第 0 列是自身
        mean_dist = distances[:, 1:].mean(axis=1)
        mean_dist = np.maximum(mean_dist, math.sqrt(MIN_NEIGHBOR_DIST_SQ))
        return np.log(mean_dist)

    @staticmethod
    def init_from_points(
        points: Union[np.ndarray, torch.Tensor],
        colors: Union[np.ndarray, torch.Tensor],
        max_sh_degree: int = DEFAULT_MAX_SH_DEGREE,
        dtype: torch.dtype = torch.float32,
    ) -> GaussianCloud:
        """由稀疏点云初始化点云：每点一个高斯"""
        points = np.asarray(points.detach().cpu() if isinstance(points, torch.Tensor) else points,
                            dtype=np.float64).reshape(-1, 3)
        colors = np.asarray(colors.detach().cpu() if isinstance(colors, torch.Tensor) else colors,
                            dtype=np.float64).reshape(-1, 3)
        if points.shape[0] == 0:
            logging.error("初始化点云为空")
            raise InvalidArgumentError("初始化点云为空")
        if colors.shape[0] != points.shape[0]:
            logging.error(f"点数 {points.shape[0]} 与颜色数 {colors.shape[0]} 不一致")
            raise InvalidArgumentError(f"点数 {points.shape[0]} 与颜色数 {colors.shape[0]} 不一致")

        n = points.shape[0]
        k = sh_coeff_count(max_sh_degree)
        log_scale = GaussianService.initial_log_scales(points)

        sh_trans = torch.zeros((n, k, 3), dtype=dtype)
        sh_trans[:, 0, :] = rgb_to_sh(torch.as_tensor(colors, dtype=dtype))
        rotations = torch.zeros((n, 4), dtype=dtype)
        rotations[:, 0] = 1.0
        init_logit = logit(INIT_PROBABILITY)

        cloud = GaussianCloud(
            means=torch.as_tensor(points, dtype=dtype).clone(),
            rotations=rotations,
            log_scales=torch.as_tensor(log_scale, dtype=dtype).unsqueeze(-1).repeat(1, 3),
            opacity_logits=torch.full((n,), init_logit, dtype=dtype),
            sh_trans=sh_trans,
            sh_ref=torch.zeros((n, k, 3), dtype=dtype),
            ref_opacity_logits=torch.full((n,), init_logit, dtype=dtype),
            beta_logits=torch.full((n,), init_logit, dtype=dtype),
            active_sh_degree=0,
            max_sh_degree=max_sh_degree,
        )
        logging.info(f"由 {n} 个稀疏点初始化高斯点云")
        return cloud

import logging

import numpy as np
import pytest
import torch

from refsplat.config.settings import settings
from refsplat.dataset_io.schemes.dataset import SyntheticSceneSpec
from refsplat.dataset_io.services.split_service import SplitService
from refsplat.dataset_io.services.synthetic_service import SyntheticService
from refsplat.losses.services.image_losses import gaussian_window
from refsplat.projection.schemes.camera import Camera
from refsplat.scene_model.models.gaussian_cloud import GaussianCloud
from refsplat.scene_model.services.gaussian_service import GaussianService
from refsplat.scene_model.services.sh_service import sh_coeff_count


@pytest.fixture(autouse=True)
def quiet_logging(monkeypatch):
    """测试期间不写日志文件，并在结束后恢复根 logger 的处理器"""
    monkeypatch.setattr(settings, "log_to_file", False)
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def camera() -> Camera:
    """32x32 单位位姿相机，沿 +z 观察"""
    return Camera(fx=24.0, fy=24.0, cx=15.5, cy=15.5, width=32, height=32, image_name="view.png")


@pytest.fixture
def make_cloud():
    """随机点云工厂：高斯都位于 camera 前方 z ∈ [2, 4]"""

    def factory(n: int = 8, seed: int = 0, dtype: torch.dtype = torch.float64,
                max_sh_degree: int = 1, active_sh_degree: int = 1) -> GaussianCloud:
        g = torch.Generator().manual_seed(seed)

        def uniform(shape, low, high):
            return low + (high - low) * torch.rand(shape, generator=g, dtype=dtype)

        k = sh_coeff_count(max_sh_degree)
        means = torch.cat([uniform((n, 2), -0.8, 0.8), uniform((n, 1), 2.0, 4.0)], dim=1)
        return GaussianCloud(
            means=means,
            rotations=torch.randn((n, 4), generator=g, dtype=dtype),
            log_scales=torch.log(uniform((n, 3), 0.05, 0.15)),
            opacity_logits=uniform((n,), -2.0, 2.0),
            sh_trans=0.3 * torch.randn((n, k, 3), generator=g, dtype=dtype),
            sh_ref=0.3 * torch.randn((n, k, 3), generator=g, dtype=dtype),
            ref_opacity_logits=uniform((n,), -2.0, 2.0),
            beta_logits=uniform((n,), -2.0, 2.0),
            active_sh_degree=active_sh_degree,
            max_sh_degree=max_sh_degree,
        )

    return factory


@pytest.fixture
def tiny_spec() -> SyntheticSceneSpec:
    return SyntheticSceneSpec(n_views=8, resolution=(32, 32), n_points=150)


@pytest.fixture
def tiny_scene(tiny_spec):
    return SyntheticService.generate_synthetic_mirror_scene(tiny_spec)


@pytest.fixture
def ssim_oracle():
    """逐窗口暴力 SSIM（零填充，高斯窗口），与卷积实现独立"""

    def oracle(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
        c1, c2 = 0.01 ** 2, 0.03 ** 2
        w = gaussian_window(window, sigma, torch.float64).numpy()
        pad = window // 2
        if a.ndim == 2:
            a, b = a[..., None], b[..., None]
        h, wd, channels = a.shape
        per_channel = []
        for ch in range(channels):
            x = np.pad(a[..., ch], pad)
            y = np.pad(b[..., ch], pad)
            values = []
            for i in range(h):
                for j in range(wd):
                    px = x[i:i + window, j:j + window]
                    py = y[i:i + window, j:j + window]
                    mx, my = (w * px).sum(), (w * py).sum()
                    vx = (w * px * px).sum() - mx * mx
                    vy = (w * py * py).sum() - my * my
                    cxy = (w * px * py).sum() - mx * my
                    values.append(((2 * mx * my + c1) * (2 * cxy + c2))
                                  / ((mx * mx + my * my + c1) * (vx + vy + c2)))
            per_channel.append(np.mean(values))
        return float(np.mean(per_channel))

    return oracle


@pytest.fixture
def split_dataset(tiny_scene):
    return SplitService.split_train_test(tiny_scene.dataset, seed=0)


@pytest.fixture
def initial_cloud(split_dataset) -> GaussianCloud:
    return GaussianService.init_from_points(split_dataset.points, split_dataset.point_colors, max_sh_degree=1)

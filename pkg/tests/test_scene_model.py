import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from refsplat.rasterizer.services.render_service import RenderService
from refsplat.scene_model.models.gaussian_cloud import GaussianCloud
from refsplat.scene_model.services.gaussian_service import GaussianService, logit
from refsplat.scene_model.services.sh_service import SH_C0, eval_sh, rgb_to_sh, sh_to_rgb
from refsplat.utils.exceptions import DegenerateRotationError, ShapeMismatchError

IDENTITY_Q = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64)

finite = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False, allow_infinity=False)
quaternions = st.lists(finite, min_size=4, max_size=4).filter(lambda q: sum(v * v for v in q) > 1e-3)
log_scales = st.lists(finite, min_size=3, max_size=3)


class TestCovariance:
    def test_identity(self):
        cov = GaussianService.build_covariance(IDENTITY_Q, torch.zeros(3, dtype=torch.float64))
        torch.testing.assert_close(cov, torch.eye(3, dtype=torch.float64))

    def test_axis_scale(self):
        log_scale = torch.tensor([math.log(2.0), 0.0, 0.0], dtype=torch.float64)
        cov = GaussianService.build_covariance(IDENTITY_Q, log_scale)
        torch.testing.assert_close(cov, torch.diag(torch.tensor([4.0, 1.0, 1.0], dtype=torch.float64)))

    def test_quarter_turn_about_z(self):
        half = math.sqrt(0.5)
        q = torch.tensor([half, 0.0, 0.0, half], dtype=torch.float64)
        log_scale = torch.tensor([math.log(2.0), 0.0, 0.0], dtype=torch.float64)
        cov = GaussianService.build_covariance(q, log_scale)
        expected = torch.diag(torch.tensor([1.0, 4.0, 1.0], dtype=torch.float64))
        torch.testing.assert_close(cov, expected, atol=1e-12, rtol=0)

    def test_zero_quaternion_rejected(self):
        with pytest.raises(DegenerateRotationError):
            GaussianService.build_covariance(torch.zeros(4, dtype=torch.float64), torch.zeros(3, dtype=torch.float64))

    @settings(max_examples=50, deadline=None)
    @given(quaternions, log_scales)
    def test_symmetric_psd(self, q, s):
        cov = GaussianService.build_covariance(torch.tensor(q, dtype=torch.float64),
                                               torch.tensor(s, dtype=torch.float64))
        scale = float(cov.abs().max())
        assert torch.allclose(cov, cov.T, atol=1e-12 * max(scale, 1.0), rtol=0)
        assert float(torch.linalg.eigvalsh(cov).min()) >= -1e-12 * max(scale, 1.0)

    @settings(max_examples=50, deadline=None)
    @given(quaternions, log_scales)
    def test_quaternion_scale_invariance(self, q, s):
        q = torch.tensor(q, dtype=torch.float64)
        s = torch.tensor(s, dtype=torch.float64)
        a = GaussianService.build_covariance(q, s)
        b = GaussianService.build_covariance(2.0 * q, s)
        scale = max(float(a.abs().max()), 1.0)
        torch.testing.assert_close(a, b, atol=1e-12 * scale, rtol=0)


class TestDensity:
    def test_at_mean(self):
        cov = torch.diag(torch.tensor([0.3, 2.0, 5.0], dtype=torch.float64))
        value = GaussianService.eval_gaussian_density(torch.zeros(3, dtype=torch.float64), cov)
        assert float(value) == pytest.approx(1.0)

    def test_unit_mahalanobis(self):
        value = GaussianService.eval_gaussian_density(torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64),
                                                      torch.eye(3, dtype=torch.float64))
        assert float(value) == pytest.approx(math.exp(-0.5), rel=1e-9)

    def test_anisotropic(self):
        cov = torch.diag(torch.tensor([4.0, 1.0, 1.0], dtype=torch.float64))
        value = GaussianService.eval_gaussian_density(torch.tensor([1.0, 1.0, 0.0], dtype=torch.float64), cov)
        assert float(value) == pytest.approx(math.exp(-0.625), rel=1e-9)


class TestSphericalHarmonics:
    def test_dc_only(self):
        coeffs = torch.tensor([[0.4, 1.0, 2.0]], dtype=torch.float64)
        rgb = eval_sh(coeffs, torch.tensor([0.0, 0.6, 0.8], dtype=torch.float64), 0)
        torch.testing.assert_close(rgb, SH_C0 * coeffs[0] + 0.5)

    def test_zero_coefficients_give_mid_gray(self):
        rgb = eval_sh(torch.zeros(4, 3, dtype=torch.float64), torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64), 1)
        torch.testing.assert_close(rgb, torch.full((3,), 0.5, dtype=torch.float64))

    def test_degree_one_against_basis_table(self):
        gen = torch.Generator().manual_seed(3)
        coeffs = torch.randn(4, 3, generator=gen, dtype=torch.float64)
        direction = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
        # Y00 = 1/(2√π)，Y1m = √(3/4π)·(-y, z, -x)
        y00 = 0.5 / math.sqrt(math.pi)
        y1 = math.sqrt(3.0 / (4.0 * math.pi))
        basis = torch.tensor([y00, 0.0, y1, 0.0], dtype=torch.float64)
        expected = torch.clamp_min((basis[:, None] * coeffs).sum(0) + 0.5, 0.0)
        torch.testing.assert_close(eval_sh(coeffs, direction, 1), expected, atol=1e-12, rtol=0)

    def test_degree_zero_direction_independent(self):
        gen = torch.Generator().manual_seed(7)
        coeffs = torch.randn(16, 3, generator=gen, dtype=torch.float64)
        dirs = torch.randn(100, 3, generator=gen, dtype=torch.float64)
        dirs = dirs / dirs.norm(dim=-1, keepdim=True)
        rgb = eval_sh(coeffs.expand(100, 16, 3), dirs, 0)
        assert torch.equal(rgb, rgb[:1].expand(100, 3))

    def test_rgb_round_trip(self):
        rgb = torch.tensor([0.1, 0.5, 0.9], dtype=torch.float64)
        torch.testing.assert_close(sh_to_rgb(rgb_to_sh(rgb)), rgb)

    def test_not_enough_coefficients(self):
        with pytest.raises(ShapeMismatchError):
            eval_sh(torch.zeros(1, 3), torch.tensor([0.0, 0.0, 1.0]), 1)


class TestActivate:
    def test_sigmoid_values(self, make_cloud):
        cloud = make_cloud(n=3)
        cloud.opacity_logits = torch.zeros(3, dtype=torch.float64)
        cloud.beta_logits = torch.tensor([logit(0.1), -30.0, 0.0], dtype=torch.float64)
        activated = GaussianService.activate(cloud)
        torch.testing.assert_close(activated.opacity, torch.full((3,), 0.5, dtype=torch.float64))
        assert float(activated.beta[0]) == pytest.approx(0.1)
        assert 0.0 < float(activated.beta[1]) < 1e-12

    def test_single_raw_params(self, make_cloud):
        raw = make_cloud(n=2).gaussian(1)
        activated = GaussianService.activate(raw)
        assert activated.cov3d.shape == (3, 3)
        assert 0.0 < float(activated.ref_opacity) < 1.0

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-20, 20), st.floats(0.01, 5.0))
    def test_monotone(self, value, delta):
        low = GaussianService.activate(self._single(value))
        high = GaussianService.activate(self._single(value + delta))
        assert float(high.opacity) > float(low.opacity)
        assert float(high.beta) > float(low.beta)
        assert float(high.ref_opacity) > float(low.ref_opacity)

    @staticmethod
    def _single(value: float) -> GaussianCloud:
        logit_value = torch.tensor([value], dtype=torch.float64)
        return GaussianCloud(
            means=torch.zeros(1, 3, dtype=torch.float64),
            rotations=IDENTITY_Q[None].clone(),
            log_scales=torch.zeros(1, 3, dtype=torch.float64),
            opacity_logits=logit_value,
            sh_trans=torch.zeros(1, 1, 3, dtype=torch.float64),
            sh_ref=torch.zeros(1, 1, 3, dtype=torch.float64),
            ref_opacity_logits=logit_value.clone(),
            beta_logits=logit_value.clone(),
            max_sh_degree=0,
        )


class TestInitFromPoints:
    def test_gray_point(self):
        cloud = GaussianService.init_from_points(np.zeros((1, 3)), np.full((1, 3), 0.5), dtype=torch.float64)
        assert cloud.num_gaussians == 1
        assert torch.equal(cloud.sh_trans[0, 0], torch.zeros(3, dtype=torch.float64))
        assert torch.count_nonzero(cloud.sh_ref) == 0
        assert torch.equal(cloud.rotations[0], IDENTITY_Q)

    def test_two_points_unit_apart(self):
        cloud = GaussianService.init_from_points(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
                                                 np.full((2, 3), 0.3), dtype=torch.float64)
        torch.testing.assert_close(cloud.log_scales, torch.zeros(2, 3, dtype=torch.float64))

    def test_initial_probabilities(self):
        cloud = GaussianService.init_from_points(np.random.default_rng(0).normal(size=(20, 3)),
                                                 np.full((20, 3), 0.5), dtype=torch.float64)
        for probs in (torch.sigmoid(cloud.opacity_logits), torch.sigmoid(cloud.ref_opacity_logits),
                      torch.sigmoid(cloud.beta_logits)):
            torch.testing.assert_close(probs, torch.full((20,), 0.1, dtype=torch.float64))
        assert cloud.active_sh_degree == 0
        assert cloud.max_sh_degree == 3

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            GaussianService.init_from_points(np.zeros((0, 3)), np.zeros((0, 3)))

    def test_isolated_beta_map_bounded(self, camera):
        cloud = GaussianService.init_from_points(np.array([[0.0, 0.0, 3.0]]), np.array([[0.8, 0.2, 0.2]]),
                                                 max_sh_degree=0, dtype=torch.float64)
        cloud.log_scales = torch.full((1, 3), math.log(0.1), dtype=torch.float64)
        outputs = RenderService.render(cloud, camera)
        assert float(outputs.alpha_accum.max()) > 0.0
        assert torch.all(outputs.reflection_map <= 0.1 * outputs.alpha_accum + 1e-12)


class TestCloud:
    def test_shape_validation(self, make_cloud):
        cloud = make_cloud(n=4)
        params = cloud.params()
        params["beta_logits"] = torch.zeros(3, dtype=torch.float64)
        with pytest.raises(ShapeMismatchError):
            GaussianCloud.from_params(params, active_sh_degree=1, max_sh_degree=1)

    def test_stack_and_select(self, make_cloud):
        cloud = make_cloud(n=5)
        rebuilt = GaussianCloud.stack([cloud.gaussian(i) for i in range(5)], active_sh_degree=1, max_sh_degree=1)
        assert rebuilt.equals(cloud)
        subset = cloud.select([0, 3])
        assert subset.num_gaussians == 2
        assert torch.equal(subset.beta_logits, cloud.beta_logits[[0, 3]])

    def test_oneup_sh_degree_saturates(self, make_cloud):
        cloud = make_cloud(n=1, max_sh_degree=1, active_sh_degree=0)
        cloud.oneup_sh_degree()
        cloud.oneup_sh_degree()
        assert cloud.active_sh_degree == 1

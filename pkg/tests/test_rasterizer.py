import itertools

import pytest
import torch
from hypothesis import given, settings, strategies as st

from refsplat.rasterizer.schemes.render_outputs import ParamGradients, RenderOutputs
from refsplat.rasterizer.services.binning_service import BinningService
from refsplat.rasterizer.services.composite_service import CompositeService
from refsplat.rasterizer.services.render_service import RenderService
from refsplat.scene_model.models.gaussian_cloud import PARAM_NAMES
from refsplat.utils.exceptions import ShapeMismatchError

RED = (1.0, 0.0, 0.0)
BLACK = (0.0, 0.0, 0.0)
OUTPUT_FIELDS = ("composed", "transmitted", "reflected", "reflection_map", "depth", "alpha_accum")


def contribution(alpha, beta=0.0, alpha_ref=0.0, depth=1.0, color=RED, color_ref=BLACK):
    return color, color_ref, alpha, alpha_ref, beta, depth


class TestCompositePixel:
    def test_single_opaque(self):
        c_trans, _, _, d, a = CompositeService.composite_pixel([contribution(1.0, depth=2.0)])
        torch.testing.assert_close(c_trans, 0.99 * torch.tensor(RED, dtype=torch.float64))
        assert float(a) == pytest.approx(0.99)
        assert float(d) == pytest.approx(2.0)

    def test_empty_is_background(self):
        c_trans, c_ref, w, d, a = CompositeService.composite_pixel([])
        assert torch.count_nonzero(c_trans) == 0 and torch.count_nonzero(c_ref) == 0
        assert float(w) == 0.0 and float(d) == 0.0 and float(a) == 0.0

    @pytest.mark.parametrize("mode", ["paper", "alpha"])
    def test_equal_alpha_and_beta(self, mode):
        rows = [contribution(0.5, beta=0.5), contribution(0.5, beta=0.5)]
        _, _, w, _, _ = CompositeService.composite_pixel(rows, mode=mode)
        assert float(w) == pytest.approx(0.375)

    @pytest.mark.parametrize("mode, expected", [("paper", 0.171), ("alpha", 0.099)])
    def test_modes_disagree(self, mode, expected):
        rows = [contribution(0.9, beta=0.1), contribution(0.9, beta=0.1)]
        _, _, w, _, _ = CompositeService.composite_pixel(rows, mode=mode)
        assert float(w) == pytest.approx(expected)

    def test_reflected_branch_has_own_transmittance(self):
        rows = [contribution(0.9, alpha_ref=0.5, color_ref=(0.0, 1.0, 0.0)),
                contribution(0.9, alpha_ref=0.5, color_ref=(0.0, 1.0, 0.0))]
        _, c_ref, _, _, _ = CompositeService.composite_pixel(rows)
        assert float(c_ref[1]) == pytest.approx(0.5 + 0.5 * 0.5)

    def test_depth_normalized_by_alpha(self):
        rows = [contribution(0.5, depth=1.0), contribution(0.5, depth=3.0)]
        _, _, _, d, a = CompositeService.composite_pixel(rows)
        assert float(a) == pytest.approx(0.75)
        assert float(d) == pytest.approx((0.5 * 1.0 + 0.25 * 3.0) / 0.75)

    def test_early_stop(self):
        saturated = {"beta": 0.99, "alpha_ref": 0.99}
        rows = [contribution(0.99, **saturated), contribution(0.99, **saturated),
                contribution(0.99, color=(0.0, 0.0, 1.0), **saturated)]
        with_stop, *_ = CompositeService.composite_pixel(rows, threshold=1e-3)
        without_stop, *_ = CompositeService.composite_pixel(rows, threshold=0.0)
        assert float(with_stop[2]) == 0.0
        assert float(without_stop[2]) > 0.0

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            CompositeService.composite_pixel([contribution(0.5)], mode="nope")

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0)),
                    min_size=1, max_size=12),
           st.sampled_from(["paper", "alpha"]))
    def test_transmittance_bound(self, rows, mode):
        contributions = [contribution(a, beta=b, alpha_ref=r) for a, b, r in rows]
        _, _, w, _, a = CompositeService.composite_pixel(contributions, mode=mode, threshold=0.0)
        assert 0.0 <= float(a) <= 1.0 + 1e-12
        assert 0.0 <= float(w) <= 1.0 + 1e-12

    def test_beta_gradient_matches_finite_difference(self):
        def reflection_map(beta_logits):
            beta = torch.sigmoid(beta_logits)[None]
            alpha = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
            result = CompositeService.composite_contributions(
                alpha, torch.zeros_like(alpha), beta, torch.zeros(2, 3, dtype=torch.float64),
                torch.zeros(2, 3, dtype=torch.float64), torch.ones(2, dtype=torch.float64), mode="paper")
            return result.reflection_map.sum()

        logits = torch.zeros(2, dtype=torch.float64, requires_grad=True)
        (analytic,) = torch.autograd.grad(reflection_map(logits), logits)
        h = 1e-5
        numeric = []
        for i in range(2):
            step = torch.zeros(2, dtype=torch.float64)
            step[i] = h
            with torch.no_grad():
                numeric.append((reflection_map(logits + step) - reflection_map(logits - step)) / (2 * h))
        torch.testing.assert_close(analytic, torch.stack(numeric), rtol=1e-5, atol=1e-10)


class TestBinning:
    @staticmethod
    def bins(means2d, radii, depths, indices=None, size=32):
        means2d = torch.tensor(means2d, dtype=torch.float64)
        indices = torch.arange(len(depths)) if indices is None else torch.tensor(indices)
        return BinningService.bin_and_sort(means2d, torch.tensor(radii), torch.tensor(depths, dtype=torch.float64),
                                           indices, size, size)

    def test_single_tile(self):
        bins = self.bins([[8.0, 8.0]], [2], [1.0])
        assert bins.num_tiles == 4
        assert bins.tile_list(0).tolist() == [0]
        assert all(bins.tile_list(t).numel() == 0 for t in range(1, 4))

    def test_straddles_boundary(self):
        bins = self.bins([[15.5, 8.0]], [2], [1.0])
        assert bins.tile_list(bins.tile_id(0, 0)).tolist() == [0]
        assert bins.tile_list(bins.tile_id(1, 0)).tolist() == [0]
        assert bins.tile_list(bins.tile_id(0, 1)).numel() == 0

    def test_depth_sorted(self):
        bins = self.bins([[8.0, 8.0]] * 3, [2, 2, 2], [3.0, 1.0, 2.0])
        assert bins.tile_list(0).tolist() == [1, 2, 0]

    def test_ties_by_gaussian_index(self):
        bins = self.bins([[8.0, 8.0]] * 3, [2, 2, 2], [1.0, 1.0, 1.0], indices=[5, 2, 9])
        assert bins.tile_list(0).tolist() == [1, 0, 2]

    def test_zero_radius_skipped(self):
        bins = self.bins([[8.0, 8.0]], [0], [1.0])
        assert bins.tile_splats.numel() == 0

    def test_offscreen_skipped(self):
        bins = self.bins([[-20.0, 8.0]], [2], [1.0])
        assert bins.tile_splats.numel() == 0


class TestRender:
    @pytest.mark.parametrize("mode", ["paper", "alpha"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_reference(self, camera, make_cloud, mode, seed):
        cloud = make_cloud(n=40, seed=seed)
        with torch.no_grad():
            tiled = RenderService.render(cloud, camera, mode, threshold=0.0)
            reference = RenderService.render_reference(cloud, camera, mode)
        for name in OUTPUT_FIELDS:
            torch.testing.assert_close(getattr(tiled, name), getattr(reference, name), atol=1e-5, rtol=0)

    def test_tile_size_independent(self, camera, make_cloud):
        cloud = make_cloud(n=30, seed=5)
        with torch.no_grad():
            a = RenderService.render(cloud, camera, threshold=0.0, tile_size=16)
            b = RenderService.render(cloud, camera, threshold=0.0, tile_size=8)
        for name in OUTPUT_FIELDS:
            torch.testing.assert_close(getattr(a, name), getattr(b, name), atol=1e-10, rtol=0)

    def test_early_stop_close_to_reference(self, camera, make_cloud):
        cloud = make_cloud(n=60, seed=9)
        with torch.no_grad():
            stopped = RenderService.render(cloud, camera)
            reference = RenderService.render_reference(cloud, camera)
        torch.testing.assert_close(stopped.transmitted, reference.transmitted, atol=1e-3, rtol=0)

    @pytest.mark.parametrize("mode", ["paper", "alpha"])
    def test_output_invariants(self, camera, make_cloud, mode):
        outputs = RenderService.render(make_cloud(n=50, seed=3), camera, mode)
        composed = outputs.transmitted + outputs.reflection_map.unsqueeze(-1) * outputs.reflected
        torch.testing.assert_close(outputs.composed, composed, atol=1e-6, rtol=0)
        for field in (outputs.reflection_map, outputs.alpha_accum):
            assert float(field.min()) >= 0.0
            assert float(field.max()) <= 1.0 + 1e-12

    def test_frozen_beta_removes_reflection(self, camera, make_cloud):
        cloud = make_cloud(n=30, seed=4)
        cloud.beta_logits = torch.full_like(cloud.beta_logits, -30.0)
        outputs = RenderService.render(cloud, camera)
        assert float(outputs.reflection_map.max()) < 1e-10
        torch.testing.assert_close(outputs.composed, outputs.transmitted, atol=1e-5, rtol=0)

    def test_transparent_reflected_branch(self, camera, make_cloud):
        cloud = make_cloud(n=30, seed=4)
        cloud.ref_opacity_logits = torch.full_like(cloud.ref_opacity_logits, -30.0)
        outputs = RenderService.render(cloud, camera)
        assert float(outputs.reflected.abs().max()) < 1e-10
        torch.testing.assert_close(outputs.composed, outputs.transmitted, atol=1e-5, rtol=0)

    def test_single_branch(self, camera, make_cloud):
        outputs = RenderService.render(make_cloud(n=20, seed=2), camera, dual_branch=False)
        assert torch.equal(outputs.composed, outputs.transmitted)

    def test_modes_differ(self, camera, make_cloud):
        cloud = make_cloud(n=40, seed=6)
        with torch.no_grad():
            paper = RenderService.render(cloud, camera, "paper")
            alpha = RenderService.render(cloud, camera, "alpha")
        assert not torch.allclose(paper.reflection_map, alpha.reflection_map)
        torch.testing.assert_close(paper.transmitted, alpha.transmitted)

    def test_nothing_visible(self, camera, make_cloud):
        cloud = make_cloud(n=5)
        cloud.means = cloud.means * torch.tensor([1.0, 1.0, -1.0], dtype=torch.float64)
        outputs = RenderService.render(cloud, camera)
        for name in OUTPUT_FIELDS:
            assert torch.count_nonzero(getattr(outputs, name)) == 0
        assert outputs.composed.shape == (32, 32, 3)


class TestRelight:
    def test_unit_coefficient_is_clamped_composed(self, camera, make_cloud):
        outputs = RenderService.render(make_cloud(n=30, seed=8), camera)
        assert torch.equal(RenderService.relight(outputs, 1.0), torch.clamp(outputs.composed, 0.0, 1.0))

    def test_zero_coefficient_is_transmitted(self, camera, make_cloud):
        outputs = RenderService.render(make_cloud(n=30, seed=8), camera)
        assert torch.equal(RenderService.relight(outputs, 0.0), torch.clamp(outputs.transmitted, 0.0, 1.0))

    def test_hand_example(self):
        def field(value, channels=True):
            shape = (1, 1, 3) if channels else (1, 1)
            return torch.full(shape, value, dtype=torch.float64)

        outputs = RenderOutputs(composed=field(0.5), transmitted=field(0.3), reflected=field(0.4),
                                reflection_map=field(0.5, channels=False), depth=field(1.0, channels=False),
                                alpha_accum=field(1.0, channels=False))
        torch.testing.assert_close(RenderService.relight(outputs, 2.0), field(0.7))

    def test_negative_coefficient_rejected(self, camera, make_cloud):
        outputs = RenderService.render(make_cloud(n=3), camera)
        with pytest.raises(ValueError):
            RenderService.relight(outputs, -0.5)

    def test_render_relit(self, camera, make_cloud):
        cloud = make_cloud(n=10, seed=1)
        expected = torch.clamp(RenderService.render(cloud, camera).composed, 0.0, 1.0).detach()
        assert torch.equal(RenderService.render_relit(cloud, camera, 1.0), expected)


def field_weights(camera, seed: int):
    g = torch.Generator().manual_seed(seed)
    h, w = camera.height, camera.width
    return {
        "d_composed": torch.randn((h, w, 3), generator=g, dtype=torch.float64),
        "d_transmitted": torch.randn((h, w, 3), generator=g, dtype=torch.float64),
        "d_reflection_map": torch.randn((h, w), generator=g, dtype=torch.float64),
        "d_depth": 0.1 * torch.randn((h, w), generator=g, dtype=torch.float64),
    }


def weighted_objective(cloud, camera, weights, mode) -> float:
    with torch.no_grad():
        out = RenderService.render(cloud, camera, mode, threshold=0.0)
        return float((weights["d_composed"] * out.composed).sum()
                     + (weights["d_transmitted"] * out.transmitted).sum()
                     + (weights["d_reflection_map"] * out.reflection_map).sum()
                     + (weights["d_depth"] * out.depth).sum())


def central_difference(cloud, camera, weights, mode, name, index, h=1e-6) -> float:
    values = []
    for sign in (1.0, -1.0):
        shifted = cloud.clone()
        shifted.params()[name][index] += sign * h
        values.append(weighted_objective(shifted, camera, weights, mode))
    return (values[0] - values[1]) / (2.0 * h)


class TestBackward:
    @pytest.mark.parametrize("mode", ["paper", "alpha"])
    def test_matches_finite_differences(self, camera, make_cloud, mode):
        cloud = make_cloud(n=4, seed=11)
        weights = field_weights(camera, seed=12)
        leaves = cloud.clone(requires_grad=True)
        grads = RenderService.backward(RenderService.render(leaves, camera, mode, threshold=0.0), **weights)

        for name in PARAM_NAMES:
            analytic = getattr(grads, name)
            numeric = torch.zeros_like(analytic)
            for index in itertools.product(*(range(s) for s in analytic.shape)):
                numeric[index] = central_difference(cloud, camera, weights, mode, name, index)
            torch.testing.assert_close(analytic, numeric, rtol=1e-5, atol=1e-7, msg=lambda m: f"{name}: {m}")

    def test_single_pixel_opacity(self, camera, make_cloud):
        cloud = make_cloud(n=1, seed=2)
        cloud.means = torch.tensor([[0.0, 0.0, 3.0]], dtype=torch.float64)
        cloud.sh_trans = torch.zeros_like(cloud.sh_trans)
        d_composed = torch.zeros((32, 32, 3), dtype=torch.float64)
        d_composed[16, 15] = 1.0
        weights = {"d_composed": d_composed, "d_transmitted": torch.zeros_like(d_composed),
                   "d_reflection_map": torch.zeros((32, 32), dtype=torch.float64),
                   "d_depth": torch.zeros((32, 32), dtype=torch.float64)}
        leaves = cloud.clone(requires_grad=True)
        grads = RenderService.backward(RenderService.render(leaves, camera), **weights)
        numeric = central_difference(cloud, camera, weights, "paper", "opacity_logits", (0,), h=1e-5)
        assert float(grads.opacity_logits[0]) == pytest.approx(numeric, rel=1e-5)
        assert float(grads.opacity_logits[0]) != 0.0

    def test_zero_upstream_gives_zero(self, camera, make_cloud):
        leaves = make_cloud(n=6, seed=3).clone(requires_grad=True)
        outputs = RenderService.render(leaves, camera)
        grads = RenderService.backward(outputs, d_composed=torch.zeros_like(outputs.composed),
                                       d_reflection_map=torch.zeros_like(outputs.reflection_map))
        for tensor in list(grads.as_dict().values()) + [grads.means2d]:
            assert torch.count_nonzero(tensor) == 0

    def test_screen_space_gradients(self, camera, make_cloud):
        leaves = make_cloud(n=6, seed=3).clone(requires_grad=True)
        outputs = RenderService.render(leaves, camera)
        grads = RenderService.backward(outputs, d_composed=torch.ones_like(outputs.composed))
        assert grads.means2d.shape == (6, 2)
        assert torch.count_nonzero(grads.means2d) > 0

    def test_shape_mismatch(self, camera, make_cloud):
        outputs = RenderService.render(make_cloud(n=3).clone(requires_grad=True), camera)
        with pytest.raises(ShapeMismatchError):
            RenderService.backward(outputs, d_composed=torch.zeros((4, 4, 3), dtype=torch.float64))

    def test_accumulation(self, camera, make_cloud):
        cloud = make_cloud(n=5, seed=1)
        total = ParamGradients.zeros_like(cloud)
        single = None
        for _ in range(2):
            leaves = cloud.clone(requires_grad=True)
            outputs = RenderService.render(leaves, camera)
            single = RenderService.backward(outputs, d_composed=torch.ones_like(outputs.composed))
            total.add_(single)
        torch.testing.assert_close(total.opacity_logits, 2.0 * single.opacity_logits)
        assert total.all_finite()

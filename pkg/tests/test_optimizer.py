import json
import logging
import math
import os

import numpy as np
import pandas as pd
import pytest
import torch
from pydantic import ValidationError

from refsplat.cli.run_config import resolve_run_config
from refsplat.dataset_io.services.ply_service import PlyService
from refsplat.optimizer.schemes.train_config import AblationPreset, TrainConfig
from refsplat.optimizer.services.adam_service import RefGaussianOptimizer, get_expon_lr_func
from refsplat.optimizer.services.densify_service import DensifyService
from refsplat.optimizer.services.train_service import TrainService
from refsplat.rasterizer.schemes.render_outputs import ParamGradients
from refsplat.rasterizer.services.render_service import RenderService
from refsplat.scene_model.models.gaussian_cloud import PARAM_NAMES
from refsplat.scene_model.services.gaussian_service import logit
from refsplat.utils.exceptions import ConfigError, DataError, DensificationError, NonFiniteLossError


def snapshot(cloud):
    return {name: t.detach().clone() for name, t in cloud.params().items()}


class TestAdam:
    def test_first_step_moves_by_learning_rate(self, make_cloud):
        cloud = make_cloud(n=2)
        cloud.opacity_logits = torch.tensor([0.3, -0.2], dtype=torch.float64)
        optimizer = RefGaussianOptimizer(cloud, TrainConfig(lr_opacity=0.1))
        before = snapshot(cloud)
        grads = ParamGradients.zeros_like(cloud)
        grads.opacity_logits = torch.tensor([1.0, -2.0], dtype=torch.float64)

        updated = optimizer.adam_step(grads)
        torch.testing.assert_close(cloud.opacity_logits.detach(), torch.tensor([0.2, -0.1], dtype=torch.float64),
                                   atol=1e-9, rtol=0)
        for name in PARAM_NAMES:
            if name != "opacity_logits":
                assert torch.equal(getattr(cloud, name).detach(), before[name])
        assert all(updated.values())

    def test_non_finite_group_skipped(self, make_cloud):
        cloud = make_cloud(n=3)
        optimizer = RefGaussianOptimizer(cloud, TrainConfig())
        before = snapshot(cloud)
        grads = ParamGradients.zeros_like(cloud)
        grads.beta_logits = torch.tensor([float("nan"), 1.0, 1.0], dtype=torch.float64)
        grads.means = torch.ones_like(grads.means)

        updated = optimizer.adam_step(grads)
        assert updated["beta_logits"] is False and updated["means"] is True
        assert optimizer.skipped_updates == 1
        assert torch.equal(cloud.beta_logits.detach(), before["beta_logits"])
        assert not torch.equal(cloud.means.detach(), before["means"])

    def test_frozen_group_untouched(self, make_cloud):
        cloud = make_cloud(n=3)
        optimizer = RefGaussianOptimizer(cloud, TrainConfig(frozen_groups=["beta_logits", "sh_ref"]))
        before = snapshot(cloud)
        grads = ParamGradients.zeros_like(cloud)
        grads.beta_logits = torch.ones_like(grads.beta_logits)
        grads.sh_ref = torch.ones_like(grads.sh_ref)

        optimizer.adam_step(grads)
        assert optimizer.learning_rates()["beta_logits"] == 0.0
        assert torch.equal(cloud.beta_logits.detach(), before["beta_logits"])
        assert torch.equal(cloud.sh_ref.detach(), before["sh_ref"])

    def test_gradient_shape_checked(self, make_cloud):
        cloud = make_cloud(n=3)
        optimizer = RefGaussianOptimizer(cloud, TrainConfig())
        grads = ParamGradients.zeros_like(cloud)
        grads.means = torch.zeros(2, 3, dtype=torch.float64)
        with pytest.raises(ValueError):
            optimizer.adam_step(grads)

    def test_exponential_schedule(self):
        schedule = get_expon_lr_func(1e-2, 1e-4, 100)
        assert schedule(0) == pytest.approx(1e-2)
        assert schedule(50) == pytest.approx(1e-3)
        assert schedule(100) == pytest.approx(1e-4)
        assert schedule(500) == pytest.approx(1e-4)

    def test_means_learning_rate_scaled_by_extent(self, make_cloud):
        cfg = TrainConfig(total_iters=100)
        optimizer = RefGaussianOptimizer(make_cloud(n=2), cfg, spatial_lr_scale=2.0)
        assert optimizer.update_learning_rate(0) == pytest.approx(2.0 * cfg.lr_means_init)
        assert optimizer.update_learning_rate(100) == pytest.approx(2.0 * cfg.lr_means_final)
        assert optimizer.group("means")["lr"] == pytest.approx(2.0 * cfg.lr_means_final)


@pytest.fixture
def densify_setup(make_cloud):
    """三个高斯：0 小尺度高梯度，1 大尺度高梯度，2 低梯度"""
    cloud = make_cloud(n=3)
    cloud.log_scales = torch.log(torch.tensor([[0.005] * 3, [0.1, 0.05, 0.05], [0.05] * 3], dtype=torch.float64))
    cfg = TrainConfig()
    optimizer = RefGaussianOptimizer(cloud, cfg)
    densify = DensifyService(3, torch.float64)
    densify.grad_accum = torch.tensor([2.0, 2.0, 0.0], dtype=torch.float64)
    densify.denom = torch.tensor([2.0, 2.0, 0.0], dtype=torch.float64)
    return cloud, cfg, optimizer, densify


class TestDensify:
    def test_mean_grads_handle_unseen(self, densify_setup):
        _, _, _, densify = densify_setup
        assert densify.mean_grads().tolist() == [1.0, 1.0, 0.0]

    def test_clone_copies_every_group(self, densify_setup):
        cloud, cfg, optimizer, densify = densify_setup
        before = snapshot(cloud)
        assert densify.densify_and_clone(optimizer, densify.mean_grads(), cfg, extent=1.0) == 1
        assert cloud.num_gaussians == 4
        for name in PARAM_NAMES:
            assert torch.equal(getattr(cloud, name).detach()[3], before[name][0])
        assert densify.grad_accum.shape == (4,)

    def test_split_shrinks_children(self, densify_setup):
        cloud, cfg, optimizer, densify = densify_setup
        before = snapshot(cloud)
        generator = torch.Generator().manual_seed(0)
        assert densify.densify_and_split(optimizer, densify.mean_grads(), cfg, 1.0, generator) == 1
        assert cloud.num_gaussians == 4
        children = slice(2, 4)
        expected_scales = before["log_scales"][1] - math.log(1.6)
        torch.testing.assert_close(cloud.log_scales.detach()[children], expected_scales.expand(2, 3))
        for name in ("beta_logits", "ref_opacity_logits", "sh_ref", "opacity_logits"):
            parent = before[name][1]
            assert torch.equal(getattr(cloud, name).detach()[children], parent.expand_as(getattr(cloud, name)[children]))
        assert not torch.equal(cloud.means.detach()[2], before["means"][1])
        # 未选中的高斯保持在前面
        assert torch.equal(cloud.means.detach()[:2], before["means"][[0, 2]])

    def test_new_moments_start_at_zero(self, densify_setup):
        cloud, cfg, optimizer, densify = densify_setup
        grads = ParamGradients.zeros_like(cloud)
        grads.means = torch.ones_like(grads.means)
        optimizer.adam_step(grads)
        densify.densify_and_clone(optimizer, densify.mean_grads(), cfg, extent=1.0)

        assert set(optimizer.moment_lengths().values()) == {4}
        state = optimizer.optimizer.state[optimizer.group("means")["params"][0]]
        assert torch.count_nonzero(state["exp_avg"][3]) == 0
        assert torch.count_nonzero(state["exp_avg"][0]) == 3

    def test_prune_low_opacity(self, densify_setup):
        cloud, cfg, optimizer, densify = densify_setup
        with torch.no_grad():
            cloud.opacity_logits[1] = -10.0
        kept_beta = cloud.beta_logits.detach()[[0, 2]].clone()
        assert densify.prune(optimizer, cfg, extent=1.0, check_screen_size=False) == 1
        assert cloud.num_gaussians == 2
        assert torch.equal(cloud.beta_logits.detach(), kept_beta)
        assert densify.denom.shape == (2,)

    def test_prune_large_on_screen(self, densify_setup):
        cloud, cfg, optimizer, densify = densify_setup
        densify.max_radii = torch.tensor([0.0, 25.0, 0.0], dtype=torch.float64)
        assert densify.prune(optimizer, cfg, extent=10.0, check_screen_size=False) == 0
        assert densify.prune(optimizer, cfg, extent=10.0, check_screen_size=True) == 1

    def test_prune_everything_fails(self, densify_setup):
        cloud, cfg, optimizer, densify = densify_setup
        with torch.no_grad():
            cloud.opacity_logits.fill_(-10.0)
        with pytest.raises(DensificationError):
            densify.prune(optimizer, cfg, extent=1.0, check_screen_size=False)

    def test_reset_opacity(self, densify_setup):
        cloud, cfg, optimizer, densify = densify_setup
        grads = ParamGradients.zeros_like(cloud)
        grads.opacity_logits = torch.ones_like(grads.opacity_logits)
        grads.ref_opacity_logits = torch.ones_like(grads.ref_opacity_logits)
        optimizer.adam_step(grads)
        with torch.no_grad():
            cloud.opacity_logits.copy_(torch.tensor([2.0, -10.0, 0.0], dtype=torch.float64))

        densify.reset_opacity(optimizer, cfg)
        ceiling = logit(0.01)
        assert torch.all(torch.sigmoid(cloud.opacity_logits.detach()) <= 0.01 + 1e-12)
        assert float(cloud.opacity_logits[1]) == -10.0
        assert float(cloud.opacity_logits[0]) == pytest.approx(ceiling)
        assert torch.all(cloud.ref_opacity_logits.detach() <= ceiling + 1e-12)
        for name in ("opacity_logits", "ref_opacity_logits"):
            state = optimizer.optimizer.state[optimizer.group(name)["params"][0]]
            assert torch.count_nonzero(state["exp_avg"]) == 0

    @pytest.mark.parametrize("iteration, expected", [(0, False), (400, False), (500, True), (550, False),
                                                     (15000, True), (15100, False)])
    def test_densify_schedule(self, iteration, expected):
        assert DensifyService.should_densify(TrainConfig(), iteration) is expected

    @pytest.mark.parametrize("iteration, expected", [(3000, True), (4500, False), (18000, False)])
    def test_reset_schedule(self, iteration, expected):
        assert DensifyService.should_reset_opacity(TrainConfig(), iteration) is expected


class TestTrainConfig:
    def test_densify_end_clamped_for_short_runs(self, caplog):
        with caplog.at_level(logging.WARNING):
            cfg = TrainConfig(total_iters=1000)
        assert cfg.densify_end == 15000
        assert cfg.effective_densify_end == 1000
        assert cfg.densify_enabled
        assert "densify_end" in caplog.text

    def test_densify_disabled_for_short_runs(self):
        assert not TrainConfig(total_iters=100).densify_enabled

    @pytest.mark.parametrize("start, end", [(5000, 1000), (800, 800)])
    def test_inverted_schedule_rejected(self, start, end):
        with pytest.raises(ValidationError, match="densify_start"):
            TrainConfig(densify_start=start, densify_end=end)

    def test_inverted_schedule_is_config_error(self, tmp_path):
        config = tmp_path / "run.yaml"
        config.write_text("train:\n  densify_start: 900\n  densify_end: 100\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            resolve_run_config({}, str(config))

    def test_beta_alias(self):
        assert TrainConfig(accumulation_mode="beta").accumulation_mode == "paper"

    def test_ablation_a(self):
        cfg = TrainConfig().with_ablation(AblationPreset.A)
        assert cfg.freeze_reflection
        assert {"beta_logits", "sh_ref"} <= set(cfg.frozen_groups)
        assert cfg.loss.lambda_bi == 0.0 and cfg.loss.lambda_ref == 0.0

    @pytest.mark.parametrize("preset, lambda_bi, lambda_ref", [
        ("B", 0.0, 0.0), ("C", 1e-4, 0.0), ("D", 0.0, 1e-4), ("full", 1e-4, 1e-4),
    ])
    def test_ablation_weights(self, preset, lambda_bi, lambda_ref):
        cfg = TrainConfig().with_ablation(preset)
        assert not cfg.freeze_reflection
        assert (cfg.loss.lambda_bi, cfg.loss.lambda_ref) == (lambda_bi, lambda_ref)

    @pytest.mark.parametrize("override", [{"accumulation_mode": "sum"}, {"frozen_groups": ["colors"]},
                                          {"total_iters": -1}, {"densify_interval": 0}])
    def test_validation(self, override):
        with pytest.raises(ValidationError):
            TrainConfig(**override)


class TestTraining:
    def test_zero_iterations_returns_input(self, split_dataset, initial_cloud):
        before = initial_cloud.clone()
        result = TrainService.train(split_dataset, initial_cloud, TrainConfig(total_iters=0))
        assert result.cloud is initial_cloud
        assert result.iterations == 0
        assert result.cloud.equals(before)

    def test_short_run_writes_artifacts(self, split_dataset, initial_cloud, tmp_path):
        cfg = TrainConfig(total_iters=3, log_interval=1)
        result = TrainService.train(split_dataset, initial_cloud, cfg, out_dir=str(tmp_path), seed=1)

        assert result.iterations == 3
        assert len(result.loss_curve) == 3 and len(result.records) == 3
        assert {row["view"] for row in result.loss_curve} <= set(split_dataset.train_indices())
        for name in ("point_cloud.ply", "optimizer_state.pt", "loss_curve.csv"):
            assert os.path.isfile(tmp_path / name)

        curve = pd.read_csv(tmp_path / "loss_curve.csv")
        assert list(curve["iteration"]) == [1, 2, 3]
        state = TrainService.load_checkpoint_state(str(tmp_path / "optimizer_state.pt"))
        assert state["iteration"] == 3
        reloaded = PlyService.import_ply(str(tmp_path / "point_cloud.ply"))
        assert reloaded.num_gaussians == result.cloud.num_gaussians

    def test_parameters_change(self, split_dataset, initial_cloud):
        before = initial_cloud.clone()
        TrainService.train(split_dataset, initial_cloud, TrainConfig(total_iters=2))
        assert not torch.equal(initial_cloud.means.detach(), before.means)

    def test_densify_events_recorded(self, split_dataset, initial_cloud):
        cfg = TrainConfig(total_iters=4, densify_start=2, densify_interval=2)
        result = TrainService.train(split_dataset, initial_cloud, cfg)
        assert [event["iteration"] for event in result.densify_events] == [2, 4]
        assert result.densify_events[-1]["total"] == initial_cloud.num_gaussians

    def test_non_finite_loss_aborts(self, split_dataset, initial_cloud, tmp_path):
        for idx in split_dataset.train_indices():
            split_dataset.images[idx] = np.full_like(split_dataset.images[idx], np.nan)
        with pytest.raises(NonFiniteLossError) as excinfo:
            TrainService.train(split_dataset, initial_cloud, TrainConfig(total_iters=3), out_dir=str(tmp_path))
        assert excinfo.value.exit_code == 4
        with open(tmp_path / "abort_dump.json", encoding="utf-8") as f:
            dump = json.load(f)
        assert dump["iteration"] == 1

    def test_frozen_reflection_renders_no_reflection(self, split_dataset, initial_cloud):
        cfg = TrainConfig(total_iters=2).with_ablation("A")
        result = TrainService.train(split_dataset, initial_cloud, cfg)
        assert torch.all(result.cloud.beta_logits.detach() == -30.0)
        assert torch.count_nonzero(result.cloud.sh_ref.detach()) == 0
        with torch.no_grad():
            outputs = RenderService.render(result.cloud, split_dataset.cameras[0])
        assert float(outputs.reflection_map.max()) < 1e-10

    def test_bad_checkpoint_rejected(self, tmp_path):
        path = tmp_path / "optimizer_state.pt"
        torch.save({"format": "other"}, path)
        with pytest.raises(DataError):
            TrainService.load_checkpoint_state(str(path))
        with pytest.raises(DataError):
            TrainService.load_checkpoint_state(str(tmp_path / "missing.pt"))

    @pytest.mark.slow
    def test_loss_decreases(self, split_dataset, initial_cloud):
        result = TrainService.train(split_dataset, initial_cloud, TrainConfig(total_iters=300), seed=0)
        totals = [row["total"] for row in result.loss_curve]
        assert np.mean(totals[-20:]) < np.mean(totals[:20])

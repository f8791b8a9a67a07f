import logging
import math
from typing import Dict, Optional

import torch

from refsplat.optimizer.schemes.train_config import TrainConfig
from refsplat.optimizer.services.adam_service import RefGaussianOptimizer
from refsplat.rasterizer.schemes.render_outputs import ParamGradients, RenderOutputs
from refsplat.scene_model.services.gaussian_service import GaussianService, logit
from refsplat.utils.exceptions import DensificationError


class DensifyService:
    """屏幕空间梯度统计与克隆/分裂/剪枝"""

    def __init__(self, num_gaussians: int, dtype: torch.dtype = torch.float32):
        self.dtype = dtype
        self.reset_stats(num_gaussians)

    def reset_stats(self, num_gaussians: int) -> None:
        self.grad_accum = torch.zeros(num_gaussians, dtype=self.dtype)
        self.denom = torch.zeros(num_gaussians, dtype=self.dtype)
        self.max_radii = torch.zeros(num_gaussians, dtype=self.dtype)

    @property
    def num_gaussians(self) -> int:
        return int(self.grad_accum.shape[0])

    # ------------------------------ 调度 ------------------------------
    @staticmethod
    def should_densify(cfg: TrainConfig, iteration: int) -> bool:
        return (cfg.densify_enabled and cfg.densify_start <= iteration <= cfg.effective_densify_end
                and iteration > 0 and iteration % cfg.densify_interval == 0)

    @staticmethod
    def should_reset_opacity(cfg: TrainConfig, iteration: int) -> bool:
        return (cfg.densify_enabled and 0 < iteration <= cfg.effective_densify_end
                and iteration % cfg.opacity_reset_interval == 0)

    # ------------------------------ 统计 ------------------------------
    def add_stats(self, grads: ParamGradients, outputs: RenderOutputs) -> None:
        """累积 NDC 单位的屏幕空间均值梯度范数"""
        if outputs.visible_indices is None or outputs.visible_indices.numel() == 0:
            return
        idx = outputs.visible_indices
        scale = torch.tensor([outputs.width / 2.0, outputs.height / 2.0], dtype=self.dtype)
        ndc_grad = grads.means2d[idx].to(self.dtype) * scale
        self.grad_accum[idx] += torch.linalg.vector_norm(ndc_grad, dim=-1)
        self.denom[idx] += 1
        self.max_radii[idx] = torch.maximum(self.max_radii[idx], outputs.radii.to(self.dtype))

    def mean_grads(self) -> torch.Tensor:
        grads = self.grad_accum / self.denom
        grads[grads.isnan()] = 0.0
        return grads

    # ------------------------------ 增密 ------------------------------
    def _append(self, optimizer: RefGaussianOptimizer, new_tensors: Dict[str, torch.Tensor]) -> None:
        count = int(new_tensors["means"].shape[0])
        optimizer.extend(new_tensors)
        pad = torch.zeros(count, dtype=self.dtype)
        self.grad_accum = torch.cat([self.grad_accum, pad])
        self.denom = torch.cat([self.denom, pad])
        self.max_radii = torch.cat([self.max_radii, pad])

    def _remove(self, optimizer: RefGaussianOptimizer, remove_mask: torch.Tensor) -> None:
        keep = ~remove_mask
        optimizer.prune(keep)
        self.grad_accum = self.grad_accum[keep]
        self.denom = self.denom[keep]
        self.max_radii = self.max_radii[keep]

    def densify_and_clone(self, optimizer: RefGaussianOptimizer, grads: torch.Tensor,
                          cfg: TrainConfig, extent: float) -> int:
        cloud = optimizer.cloud
        max_scale = torch.exp(cloud.log_scales.detach()).max(dim=1).values
        selected = (grads >= cfg.grad_threshold) & (max_scale <= cfg.percent_dense * extent)
        count = int(selected.sum())
        if count:
            self._append(optimizer, {name: t.detach()[selected] for name, t in cloud.params().items()})
        return count

    def densify_and_split(self, optimizer: RefGaussianOptimizer, grads: torch.Tensor, cfg: TrainConfig,
                          extent: float, generator: Optional[torch.Generator] = None) -> int:
        cloud = optimizer.cloud
        n_total = cloud.num_gaussians
        padded = torch.zeros(n_total, dtype=grads.dtype)
        padded[:grads.shape[0]] = grads
        max_scale = torch.exp(cloud.log_scales.detach()).max(dim=1).values
        selected = (padded >= cfg.grad_threshold) & (max_scale > cfg.percent_dense * extent)
        count = int(selected.sum())
        if not count:
            return 0

        n = cfg.split_count
        params = {name: t.detach() for name, t in cloud.params().items()}
        stds = torch.exp(params["log_scales"][selected]).repeat(n, 1)
        samples = torch.normal(torch.zeros_like(stds), stds, generator=generator)
        rots = GaussianService.quaternion_to_rotation(params["rotations"][selected]).repeat(n, 1, 1)
        new_tensors = {name: t[selected].repeat((n,) + (1,) * (t.dim() - 1)) for name, t in params.items()}
        new_tensors["means"] = (rots @ samples.unsqueeze(-1)).squeeze(-1) + new_tensors["means"]
        new_tensors["log_scales"] = new_tensors["log_scales"] - math.log(cfg.split_scale_divisor)
        self._append(optimizer, new_tensors)

        remove = torch.cat([selected, torch.zeros(n * count, dtype=torch.bool)])
        self._remove(optimizer, remove)
        return count

    def prune(self, optimizer: RefGaussianOptimizer, cfg: TrainConfig, extent: float,
              check_screen_size: bool) -> int:
        cloud = optimizer.cloud
        remove = torch.sigmoid(cloud.opacity_logits.detach()) < cfg.prune_opacity
        if check_screen_size and cfg.max_screen_size:
            big_on_screen = self.max_radii > cfg.max_screen_size
            big_in_world = torch.exp(cloud.log_scales.detach()).max(dim=1).values > 0.1 * extent
            remove = remove | big_on_screen | big_in_world
        count = int(remove.sum())
        if count == cloud.num_gaussians:
            raise DensificationError(
                f"剪枝后高斯数量为零（剪枝 {count} 个）",
                {"pruned": count, "prune_opacity": cfg.prune_opacity},
            )
        if count:
            self._remove(optimizer, remove)
        return count

    def densify_and_prune(self, optimizer: RefGaussianOptimizer, cfg: TrainConfig, iteration: int,
                          extent: float, generator: Optional[torch.Generator] = None) -> Dict[str, int]:
        """
        克隆小尺度高梯度高斯、分裂大尺度高梯度高斯，再剪除低不透明度高斯

        子高斯复制全部属性组（含 sh_ref、ref_opacity_logits、beta_logits）；新矩估计为零
        """
        grads = self.mean_grads()
        cloned = self.densify_and_clone(optimizer, grads, cfg, extent)
        split = self.densify_and_split(optimizer, grads, cfg, extent, generator)
        pruned = self.prune(optimizer, cfg, extent, check_screen_size=iteration > cfg.opacity_reset_interval)
        self.reset_stats(optimizer.cloud.num_gaussians)
        summary = {"cloned": cloned, "split": split, "pruned": pruned,
                   "total": optimizer.cloud.num_gaussians}
        logging.info(f"第 {iteration} 次迭代增密: 克隆 {cloned}, 分裂 {split}, 剪枝 {pruned}, "
                     f"当前 {summary['total']} 个高斯")
        return summary

    def reset_opacity(self, optimizer: RefGaussianOptimizer, cfg: TrainConfig) -> None:
        """两组不透明度 logit 压到 logit(reset_opacity_value) 以下"""
        ceiling = logit(cfg.reset_opacity_value)
        for name in ("opacity_logits", "ref_opacity_logits"):
            if optimizer.is_frozen(name):
                continue
            current = getattr(optimizer.cloud, name).detach()
            optimizer.replace_tensor(name, torch.clamp_max(current, ceiling))
        logging.info(f"不透明度已重置到 {cfg.reset_opacity_value}")

    # ------------------------------ 序列化 ------------------------------
    def state_dict(self) -> dict:
        return {"grad_accum": self.grad_accum, "denom": self.denom, "max_radii": self.max_radii}

    def load_state_dict(self, state: dict) -> None:
        self.grad_accum = state["grad_accum"].to(self.dtype)
        self.denom = state["denom"].to(self.dtype)
        self.max_radii = state["max_radii"].to(self.dtype)

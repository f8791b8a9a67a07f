import math
import logging
from typing import Callable, Dict, Optional

import torch

from refsplat.optimizer.schemes.train_config import TrainConfig
from refsplat.rasterizer.schemes.render_outputs import ParamGradients
from refsplat.scene_model.models.gaussian_cloud import GaussianCloud, PARAM_NAMES
from refsplat.utils.exceptions import InvalidArgumentError

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-15


def get_expon_lr_func(lr_init: float, lr_final: float, max_steps: int) -> Callable[[int], float]:
    """对数线性插值的指数衰减学习率"""
    def helper(step: int) -> float:
        if step < 0 or (lr_init == 0.0 and lr_final == 0.0):
            return 0.0
        if max_steps <= 0:
            return lr_init
        t = min(max(step / max_steps, 0.0), 1.0)
        return math.exp(math.log(lr_init) * (1 - t) + math.log(lr_final) * t)
    return helper


class RefGaussianOptimizer:
    """按参数组的 Adam，负责与点云同步的矩估计增删"""

    def __init__(self, cloud: GaussianCloud, cfg: TrainConfig, spatial_lr_scale: float = 1.0):
        self.cloud = cloud
        self.cfg = cfg
        self.spatial_lr_scale = spatial_lr_scale
        self.skipped_updates = 0
        cloud.requires_grad_(True)

        base_lrs = cfg.learning_rates()
        base_lrs["means"] *= spatial_lr_scale
        self.base_lrs = base_lrs
        groups = [
            {"params": [tensor], "lr": 0.0 if name in cfg.frozen_groups else base_lrs[name], "name": name}
            for name, tensor in cloud.params().items()
        ]
        self.optimizer = torch.optim.Adam(groups, lr=0.0, betas=ADAM_BETAS, eps=ADAM_EPS)
        self.means_scheduler = get_expon_lr_func(
            cfg.lr_means_init * spatial_lr_scale,
            cfg.lr_means_final * spatial_lr_scale,
            cfg.total_iters,
        )

    # ------------------------------ 学习率 ------------------------------
    def group(self, name: str) -> dict:
        for group in self.optimizer.param_groups:
            if group["name"] == name:
                return group
        raise KeyError(f"未知参数组: {name}")

    def is_frozen(self, name: str) -> bool:
        return name in self.cfg.frozen_groups

    def update_learning_rate(self, iteration: int) -> float:
        """均值学习率按迭代指数衰减"""
        lr = 0.0 if self.is_frozen("means") else self.means_scheduler(iteration)
        self.group("means")["lr"] = lr
        return lr

    def learning_rates(self) -> Dict[str, float]:
        return {group["name"]: group["lr"] for group in self.optimizer.param_groups}

    # ------------------------------ 更新 ------------------------------
    def adam_step(self, grads: ParamGradients) -> Dict[str, bool]:
        """
        标准 Adam 一步；非有限梯度的参数组跳过本次更新并计数

        Returns:
            Dict[str, bool]: 各参数组是否已更新
        """
        updated = {}
        for group in self.optimizer.param_groups:
            name = group["name"]
            param = group["params"][0]
            grad = getattr(grads, name)
            if self.is_frozen(name):
                param.grad = None
                updated[name] = False
                continue
            if grad.shape != param.shape:
                logging.error(f"参数组 {name} 梯度形状 {tuple(grad.shape)} 与参数 {tuple(param.shape)} 不符")
                raise InvalidArgumentError(f"参数组 {name} 梯度形状 {tuple(grad.shape)} 与参数 {tuple(param.shape)} 不符")
            if not torch.isfinite(grad).all():
                self.skipped_updates += 1
                param.grad = None
                updated[name] = False
                logging.warning(f"参数组 {name} 梯度含非有限值，跳过本次更新（累计 {self.skipped_updates} 次）")
                continue
            param.grad = grad.to(param.dtype)
            updated[name] = True
        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)
        return updated

    # ------------------------------ 状态手术 ------------------------------
    def _sync_cloud(self, tensors: Dict[str, torch.Tensor]) -> None:
        for name, tensor in tensors.items():
            self.cloud.set_param(name, tensor)
        self.cloud.validate_shapes()

    def replace_tensor(self, name: str, tensor: torch.Tensor) -> None:
        """替换某参数组并清零其矩估计（用于不透明度重置）"""
        group = self.group(name)
        old = group["params"][0]
        stored_state = self.optimizer.state.pop(old, None)
        new_param = tensor.detach().clone().requires_grad_(True)
        group["params"][0] = new_param
        if stored_state is not None:
            stored_state["exp_avg"] = torch.zeros_like(new_param)
            stored_state["exp_avg_sq"] = torch.zeros_like(new_param)
            self.optimizer.state[new_param] = stored_state
        self._sync_cloud({name: new_param})

    def prune(self, keep_mask: torch.Tensor) -> None:
        """按掩码保留高斯，矩估计同步裁剪"""
        tensors = {}
        for group in self.optimizer.param_groups:
            old = group["params"][0]
            stored_state = self.optimizer.state.pop(old, None)
            new_param = old.detach()[keep_mask].clone().requires_grad_(True)
            group["params"][0] = new_param
            if stored_state is not None:
                stored_state["exp_avg"] = stored_state["exp_avg"][keep_mask]
                stored_state["exp_avg_sq"] = stored_state["exp_avg_sq"][keep_mask]
                self.optimizer.state[new_param] = stored_state
            tensors[group["name"]] = new_param
        self._sync_cloud(tensors)

    def extend(self, new_tensors: Dict[str, torch.Tensor]) -> None:
        """追加新高斯，其矩估计以零初始化"""
        tensors = {}
        for group in self.optimizer.param_groups:
            name = group["name"]
            extension = new_tensors[name].detach().to(group["params"][0].dtype)
            old = group["params"][0]
            stored_state = self.optimizer.state.pop(old, None)
            new_param = torch.cat((old.detach(), extension), dim=0).requires_grad_(True)
            group["params"][0] = new_param
            if stored_state is not None:
                stored_state["exp_avg"] = torch.cat((stored_state["exp_avg"], torch.zeros_like(extension)), dim=0)
                stored_state["exp_avg_sq"] = torch.cat((stored_state["exp_avg_sq"], torch.zeros_like(extension)), dim=0)
                self.optimizer.state[new_param] = stored_state
            tensors[name] = new_param
        self._sync_cloud(tensors)

    def moment_lengths(self) -> Dict[str, Optional[int]]:
        """各参数组矩估计的长度，未初始化时为 None"""
        lengths = {}
        for group in self.optimizer.param_groups:
            state = self.optimizer.state.get(group["params"][0])
            lengths[group["name"]] = None if not state else int(state["exp_avg"].shape[0])
        return lengths

    # ------------------------------ 序列化 ------------------------------
    def state_dict(self) -> dict:
        return {
            "optimizer": self.optimizer.state_dict(),
            "skipped_updates": self.skipped_updates,
            "spatial_lr_scale": self.spatial_lr_scale,
            "param_names": list(PARAM_NAMES),
        }

    def load_state_dict(self, state: dict) -> None:
        self.optimizer.load_state_dict(state["optimizer"])
        self.skipped_updates = int(state.get("skipped_updates", 0))

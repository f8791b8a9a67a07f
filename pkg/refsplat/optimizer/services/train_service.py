import os
import json
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch

from refsplat.dataset_io.schemes.dataset import Dataset
from refsplat.dataset_io.services.ply_service import PlyService
from refsplat.evalkit.services.metrics_service import psnr
from refsplat.losses.services.overall_loss import loss_and_field_gradients
from refsplat.optimizer.schemes.train_config import TrainConfig
from refsplat.optimizer.services.adam_service import RefGaussianOptimizer
from refsplat.optimizer.services.densify_service import DensifyService
from refsplat.rasterizer.services.render_service import RenderService
from refsplat.scene_model.models.gaussian_cloud import GaussianCloud
from refsplat.utils.exceptions import DataError, NonFiniteLossError

CHECKPOINT_FORMAT = "refsplat-optimizer"
CHECKPOINT_VERSION = 1
FROZEN_BETA_LOGIT = -30.0
LOSS_TERMS = ("l_rgb", "l_init", "l_bi", "l_ref", "total")


@dataclass
class TrainResult:
    """训练结果：点云、周期性日志与逐迭代损失曲线"""
    cloud: GaussianCloud
    iterations: int = 0
    records: List[dict] = field(default_factory=list)
    loss_curve: List[dict] = field(default_factory=list)
    skipped_updates: int = 0
    densify_events: List[dict] = field(default_factory=list)


class TrainService:
    """训练主循环与检查点"""

    @staticmethod
    def freeze_reflection(cloud: GaussianCloud, cfg: TrainConfig) -> TrainConfig:
        """β logit 固定为 -30、sh_ref 固定为 0，并冻结这两组参数"""
        with torch.no_grad():
            cloud.set_param("beta_logits", torch.full_like(cloud.beta_logits.detach(), FROZEN_BETA_LOGIT))
            cloud.set_param("sh_ref", torch.zeros_like(cloud.sh_ref.detach()))
        frozen = sorted(set(cfg.frozen_groups) | {"beta_logits", "sh_ref"})
        return cfg.model_copy(update={"frozen_groups": frozen})

    @staticmethod
    def camera_schedule(train_ids: List[int], rng: np.random.Generator):
        """逐轮无放回打乱的相机序列"""
        while True:
            for idx in rng.permutation(train_ids):
                yield int(idx)

    @staticmethod
    def _check_finite(bundle, iteration: int, out_dir: Optional[str]) -> None:
        terms = bundle.terms()
        for name in LOSS_TERMS:
            if not math.isfinite(terms[name]):
                if out_dir:
                    TrainService.write_abort_dump(out_dir, iteration, terms, name)
                logging.error(f"第 {iteration} 次迭代损失非有限: {name}={terms[name]}")
                raise NonFiniteLossError(iteration, name, {k: repr(v) for k, v in terms.items()})

    @staticmethod
    def write_abort_dump(out_dir: str, iteration: int, terms: Dict[str, float], term: str) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "abort_dump.json")
        record = {
            "iteration": iteration,
            "term": term,
            "terms": {k: (v if math.isfinite(v) else repr(v)) for k, v in terms.items()},
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(record, f, ensure_ascii=False, indent=2)
        return path

    # ------------------------------ 检查点 ------------------------------
    @staticmethod
    def save_checkpoint(out_dir: str, iteration: int, optimizer: RefGaussianOptimizer,
                        densify: DensifyService) -> Tuple[str, str]:
        """写扩展 PLY 与带版本头的优化器状态"""
        os.makedirs(out_dir, exist_ok=True)
        ply_path = os.path.join(out_dir, "point_cloud.ply")
        state_path = os.path.join(out_dir, "optimizer_state.pt")
        PlyService.export_ply(optimizer.cloud, ply_path)
        torch.save({
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "iteration": iteration,
            "optimizer": optimizer.state_dict(),
            "densify_stats": densify.state_dict(),
        }, state_path)
        logging.info(f"检查点已写出 (iteration={iteration}): {out_dir}")
        return ply_path, state_path

    @staticmethod
    def load_checkpoint_state(path: str) -> dict:
        if not os.path.isfile(path):
            raise DataError(f"优化器状态文件不存在: {path}")
        state = torch.load(path, map_location="cpu", weights_only=False)
        if not isinstance(state, dict) or state.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"无法识别的优化器状态文件: {path}")
        if state.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"优化器状态版本不支持: {state.get('version')}", {"path": path})
        return state

    @staticmethod
    def write_loss_curve(loss_curve: List[dict], out_dir: str) -> str:
        path = os.path.join(out_dir, "loss_curve.csv")
        pd.DataFrame(loss_curve).to_csv(path, index=False)
        return path

    # ------------------------------ 主循环 ------------------------------
    @staticmethod
    def train(dataset: Dataset, cloud: GaussianCloud, cfg: TrainConfig,
              out_dir: Optional[str] = None, seed: int = 0) -> TrainResult:
        """
        render -> loss -> backward -> adam_step，按计划增密/剪枝、重置不透明度、提升球谐阶数

        点云原地更新；0 次迭代时直接返回输入点云

        Args:
            dataset: 已划分的数据集
            cloud: 初始点云
            cfg: 训练配置
            out_dir: 检查点、损失曲线与诊断文件目录，None 表示不落盘
            seed: 相机打乱与分裂采样的种子

        Returns:
            TrainResult
        """
        dataset.validate()
        train_ids = dataset.train_indices()
        if cfg.total_iters == 0:
            logging.info("迭代次数为 0，返回初始点云")
            return TrainResult(cloud=cloud)

        if cfg.freeze_reflection:
            cfg = TrainService.freeze_reflection(cloud, cfg)
        extent = dataset.scene_extent()
        optimizer = RefGaussianOptimizer(cloud, cfg, spatial_lr_scale=extent)
        densify = DensifyService(cloud.num_gaussians, cloud.dtype)
        generator = torch.Generator().manual_seed(seed)
        cameras = TrainService.camera_schedule(train_ids, np.random.default_rng(seed))
        gts = {idx: torch.from_numpy(dataset.images[idx]).to(cloud.dtype) for idx in train_ids}
        result = TrainResult(cloud=cloud)
        logging.info(f"开始训练: {cfg.total_iters} 次迭代, {len(train_ids)} 张训练图像, "
                     f"{cloud.num_gaussians} 个初始高斯, 场景尺度 {extent:.4f}")

        for iteration in range(1, cfg.total_iters + 1):
            lr_means = optimizer.update_learning_rate(iteration)
            if iteration % cfg.sh_degree_interval == 0:
                cloud.oneup_sh_degree()

            idx = next(cameras)
            gt = gts[idx]
            outputs = RenderService.render(cloud, dataset.cameras[idx], cfg.accumulation_mode,
                                           cfg.early_stop_threshold)
            bundle, field_grads = loss_and_field_gradients(gt, outputs, cfg.loss, iteration)
            TrainService._check_finite(bundle, iteration, out_dir)

            grads = RenderService.backward(
                outputs,
                d_composed=field_grads["composed"],
                d_transmitted=field_grads["transmitted"],
                d_reflection_map=field_grads["reflection_map"],
                d_depth=field_grads["depth"],
            )
            if cfg.densify_enabled and iteration <= cfg.effective_densify_end:
                densify.add_stats(grads, outputs)
            optimizer.adam_step(grads)

            if DensifyService.should_densify(cfg, iteration):
                summary = densify.densify_and_prune(optimizer, cfg, iteration, extent, generator)
                result.densify_events.append({"iteration": iteration, **summary})
            if DensifyService.should_reset_opacity(cfg, iteration):
                densify.reset_opacity(optimizer, cfg)

            terms = bundle.terms()
            result.loss_curve.append({"iteration": iteration, "view": idx,
                                      **{name: terms[name] for name in LOSS_TERMS}})
            if iteration % cfg.log_interval == 0 or iteration == 1 or iteration == cfg.total_iters:
                train_psnr = psnr(torch.clamp(outputs.composed.detach(), 0.0, 1.0), gt)
                record = {"iteration": iteration, **terms, "num_gaussians": cloud.num_gaussians,
                          "train_psnr": train_psnr, "lr_means": lr_means}
                result.records.append(record)
                logging.info(
                    f"[{iteration}/{cfg.total_iters}] total={terms['total']:.6f} l_rgb={terms['l_rgb']:.6f} "
                    f"l_init={terms['l_init']:.6f} l_bi={terms['l_bi']:.6f} l_ref={terms['l_ref']:.6f} "
                    f"gaussians={cloud.num_gaussians} psnr={train_psnr:.3f}"
                )

            if out_dir and cfg.checkpoint_interval and iteration % cfg.checkpoint_interval == 0 \
                    and iteration != cfg.total_iters:
                TrainService.save_checkpoint(os.path.join(out_dir, "checkpoints", f"iter_{iteration:06d}"),
                                             iteration, optimizer, densify)

        result.iterations = cfg.total_iters
        result.skipped_updates = optimizer.skipped_updates
        if out_dir:
            TrainService.save_checkpoint(out_dir, cfg.total_iters, optimizer, densify)
            TrainService.write_loss_curve(result.loss_curve, out_dir)
        logging.info(f"训练完成: {cloud.num_gaussians} 个高斯, 跳过非有限梯度更新 {optimizer.skipped_updates} 次")
        return result

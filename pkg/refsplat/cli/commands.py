import os
import sys
import logging
import functools
from typing import List, Optional, Tuple

import click

from refsplat.cli.run_config import (
    RUN_CONFIG_FILE, RunConfig, parse_resolution, resolve_run_config, save_run_config,
)
from refsplat.dataset_io.schemes.dataset import Dataset
from refsplat.dataset_io.services.colmap_service import ColmapService
from refsplat.dataset_io.services.image_service import ImageService
from refsplat.dataset_io.services.ply_service import PlyService
from refsplat.dataset_io.services.split_service import SPLIT_FILE, SplitService
from refsplat.dataset_io.services.synthetic_service import SyntheticService
from refsplat.evalkit.services.export_service import ExportService
from refsplat.evalkit.services.metrics_service import evaluate
from refsplat.optimizer.schemes.train_config import AblationPreset
from refsplat.optimizer.services.train_service import TrainService
from refsplat.scene_model.models.gaussian_cloud import GaussianCloud
from refsplat.scene_model.services.gaussian_service import GaussianService
from refsplat.utils.common import configure_threads, resolve_dtype, seed_everything
from refsplat.utils.exceptions import ConfigError, DataError, RefSplatError

CHECKPOINT_PLY = "point_cloud.ply"


def handle_errors(func):
    """模块异常 -> 退出码（配置 2，数据 3，数值 4，其他 1）"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except RefSplatError as e:
            logging.error(f"[{e.code}] {e.message}")
            click.echo(f"错误 [{e.code}]: {e.message}", err=True)
            sys.exit(e.exit_code)
        except click.exceptions.Exit:
            raise
        except Exception as e:
            logging.error(f"未处理的异常: {e}")
            click.echo(f"错误: {e}", err=True)
            sys.exit(1)
    return wrapper


def shared_options(func):
    """所有命令共享的参数"""
    options = [
        click.option("--data", type=str, default=None, help="数据目录（SfM 模型 + images/）"),
        click.option("--out", type=str, default=None, help="输出目录"),
        click.option("--config", "config_path", type=str, default=None, help="YAML 配置文件"),
        click.option("--seed", type=int, default=None, help="全局随机种子"),
        click.option("--iters", type=int, default=None, help="训练迭代次数"),
        click.option("--mode", type=click.Choice(["paper", "alpha"]), default=None, help="反射图累积模式"),
        click.option("--lambda-bi", type=float, default=None, help="双边深度平滑权重"),
        click.option("--lambda-ref", type=float, default=None, help="反射图平滑权重"),
        click.option("--lambda-init", type=float, default=None, help="初始对齐损失权重"),
        click.option("--gamma", type=float, default=None, help="双边权重颜色尺度"),
        click.option("--resolution", type=str, default=None, help="重采样尺寸 WxH，native 保持原尺寸"),
        click.option("--threads", type=int, default=None, help="torch 线程数"),
        click.option("--ablation", type=click.Choice([p.value for p in AblationPreset]), default=None,
                     help="模型设计消融预设"),
        click.option("--checkpoint", type=str, default=None, help="检查点 PLY 或训练输出目录"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def build_run_config(flags: dict, config_path: Optional[str], ablation: Optional[str],
                     fallback_config: Optional[str] = None) -> RunConfig:
    if config_path is None and fallback_config and os.path.isfile(fallback_config):
        config_path = fallback_config
    run = resolve_run_config(flags, config_path, ablation)
    seed_everything(run.seed, run.deterministic)
    configure_threads(run.threads)
    return run


def require(value: Optional[str], flag: str) -> str:
    if not value:
        raise ConfigError(f"缺少必需参数 {flag}")
    return value


def load_dataset(run: RunConfig) -> Dataset:
    dataset = ColmapService.load_colmap(require(run.data, "--data"))
    return ImageService.preprocess_dataset(dataset, run.resolution)


def locate_checkpoint(path: str) -> Tuple[str, str]:
    """检查点参数 -> (PLY 路径, 训练输出目录)"""
    if os.path.isdir(path):
        return os.path.join(path, CHECKPOINT_PLY), path
    return path, os.path.dirname(os.path.abspath(path))


def load_checkpoint_cloud(run: RunConfig) -> Tuple[GaussianCloud, str]:
    ply_path, run_dir = locate_checkpoint(require(run.checkpoint, "--checkpoint"))
    return PlyService.import_ply(ply_path), run_dir


def fallback_config_path(checkpoint: Optional[str]) -> Optional[str]:
    if not checkpoint:
        return None
    return os.path.join(locate_checkpoint(checkpoint)[1], RUN_CONFIG_FILE)


def selected_views(dataset: Dataset, run_dir: str) -> List[int]:
    """有划分记录时取测试集，否则取全部视角"""
    if os.path.isfile(os.path.join(run_dir, SPLIT_FILE)):
        SplitService.load_split(dataset, run_dir)
        if dataset.test_indices():
            return dataset.test_indices()
    return list(range(len(dataset.cameras)))


@click.command("train")
@shared_options
@handle_errors
def train_cmd(config_path, ablation, **flags):
    """训练：加载数据 -> 划分 -> 初始化 -> 优化，写出 PLY、检查点与损失曲线"""
    run = build_run_config(flags, config_path, ablation)
    out_dir = require(run.out, "--out")
    dataset = SplitService.split_train_test(load_dataset(run), run.seed)
    save_run_config(run, out_dir)
    SplitService.save_split(dataset, out_dir)

    cloud = GaussianService.init_from_points(dataset.points, dataset.point_colors, run.max_sh_degree,
                                             resolve_dtype(run.dtype))
    result = TrainService.train(dataset, cloud, run.train, out_dir, run.seed)
    if run.train.total_iters == 0:
        PlyService.export_ply(result.cloud, os.path.join(out_dir, CHECKPOINT_PLY))
    click.echo(f"训练完成: {result.cloud.num_gaussians} 个高斯 -> {out_dir}")


@click.command("eval")
@shared_options
@handle_errors
def eval_cmd(config_path, ablation, **flags):
    """评估：渲染训练时记录的测试集并写出指标报告"""
    run = build_run_config(flags, config_path, ablation, fallback_config_path(flags.get("checkpoint")))
    cloud, run_dir = load_checkpoint_cloud(run)
    dataset = SplitService.load_split(load_dataset(run), run_dir)
    if not dataset.test_indices():
        raise DataError("测试集为空，无法评估")
    out_dir = flags.get("out") or os.path.join(run_dir, "eval")
    save_run_config(run, out_dir)
    report = evaluate(cloud, dataset, mode=run.train.accumulation_mode, config_hash=run.hash(), out_dir=out_dir)
    click.echo(f"PSNR {report.mean_psnr:.3f} dB, SSIM {report.mean_ssim:.4f} ({len(report.views)} 个视角)")


@click.command("decompose")
@shared_options
@handle_errors
def decompose_cmd(config_path, ablation, **flags):
    """导出透射/反射分解：每个视角 5 张 PNG"""
    run = build_run_config(flags, config_path, ablation, fallback_config_path(flags.get("checkpoint")))
    cloud, run_dir = load_checkpoint_cloud(run)
    dataset = load_dataset(run)
    out_dir = flags.get("out") or os.path.join(run_dir, "decomposition")
    save_run_config(run, out_dir)
    views = selected_views(dataset, run_dir)
    for idx in views:
        ExportService.export_decomposition(cloud, dataset.cameras[idx], out_dir, run.train.accumulation_mode)
    click.echo(f"分解图已写出: {len(views)} 个视角 -> {out_dir}")


@click.command("relight")
@shared_options
@click.option("--coefficients", type=str, default=None, help="逗号分隔的重光照系数，默认 0.8,0.9,1.0,1.1,1.2")
@handle_errors
def relight_cmd(config_path, ablation, coefficients, **flags):
    """按系数缩放反射分量的重光照序列"""
    if coefficients is not None:
        try:
            flags["coefficients"] = [float(c) for c in coefficients.split(",") if c.strip()]
        except ValueError as e:
            raise ConfigError(f"无法解析重光照系数: {coefficients}") from e
    run = build_run_config(flags, config_path, ablation, fallback_config_path(flags.get("checkpoint")))
    cloud, run_dir = load_checkpoint_cloud(run)
    dataset = load_dataset(run)
    out_dir = flags.get("out") or os.path.join(run_dir, "relight")
    save_run_config(run, out_dir)
    views = selected_views(dataset, run_dir)
    for idx in views:
        ExportService.export_relit_sequence(cloud, dataset.cameras[idx], run.relight_coefficients, out_dir,
                                            run.train.accumulation_mode)
    click.echo(f"重光照序列已写出: {len(views)} 个视角 x {len(run.relight_coefficients)} 帧 -> {out_dir}")


@click.command("synth")
@shared_options
@click.option("--views", type=int, default=None, help="合成视角数")
@handle_errors
def synth_cmd(config_path, ablation, views, **flags):
    """生成合成镜面场景（SfM 文本模型 + 图像 + 镜面掩码 + scene.json）"""
    flags["views"] = views
    explicit_resolution = flags.pop("resolution", None)
    run = build_run_config(flags, config_path, ablation)
    out_dir = require(run.out, "--out")
    update = {"wall_seed": run.seed, "object_seed": run.seed + 1}
    if explicit_resolution is not None:
        resolution = parse_resolution(explicit_resolution)
        if resolution is None:
            raise ConfigError("合成场景需要明确的分辨率 WxH")
        update["resolution"] = resolution
    spec = run.synthetic.model_copy(update=update)
    scene = SyntheticService.generate_synthetic_mirror_scene(spec)
    SyntheticService.save_synthetic_scene(scene, out_dir)
    save_run_config(run.model_copy(update={"synthetic": spec}), out_dir)
    click.echo(f"合成场景已写出: {spec.n_views} 个视角 -> {out_dir}")

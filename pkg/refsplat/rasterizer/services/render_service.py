import math
import logging
from dataclasses import dataclass
from typing import Optional

import torch

from refsplat.projection.schemes.camera import Camera, ProjectedSplats
from refsplat.projection.services.projection_service import ProjectionService
from refsplat.rasterizer.schemes.render_outputs import ParamGradients, RenderOutputs, TileBins
from refsplat.rasterizer.services.binning_service import BinningService, TILE_SIZE
from refsplat.rasterizer.services.composite_service import (
    CompositeService,
    EARLY_STOP_THRESHOLD,
    check_mode,
)
from refsplat.scene_model.models.gaussian_cloud import GaussianCloud
from refsplat.scene_model.services.gaussian_service import GaussianService
from refsplat.scene_model.services.sh_service import eval_sh
from refsplat.utils.exceptions import InvalidArgumentError, ShapeMismatchError


@dataclass
class _SplatAttributes:
    """可见泼溅的逐高斯属性，下标与 ProjectedSplats 对齐"""
    projected: ProjectedSplats
    colors: torch.Tensor       # (M, 3)
    colors_ref: torch.Tensor   # (M, 3)
    opacity: torch.Tensor      # (M,)
    ref_opacity: torch.Tensor  # (M,)
    beta: torch.Tensor         # (M,)


class RenderService:
    """双分支分块渲染、重光照与反向"""

    @staticmethod
    def prepare(cloud: GaussianCloud, cam: Camera, dual_branch: bool = True) -> _SplatAttributes:
        """激活、投影并按视线方向计算两组球谐颜色"""
        activated = GaussianService.activate(cloud)
        projected = ProjectionService.project_gaussians(cam, activated.means, activated.cov3d)
        idx = projected.indices

        means = activated.means[idx]
        view_dir = means - cam.camera_center(cloud.dtype)
        view_dir = view_dir / torch.linalg.vector_norm(view_dir, dim=-1, keepdim=True)
        colors = eval_sh(cloud.sh_trans[idx], view_dir, cloud.active_sh_degree)
        if dual_branch:
            colors_ref = eval_sh(cloud.sh_ref[idx], view_dir, cloud.active_sh_degree)
            ref_opacity = activated.ref_opacity[idx]
            beta = activated.beta[idx]
        else:
            colors_ref = torch.zeros_like(colors)
            ref_opacity = torch.zeros_like(activated.ref_opacity[idx])
            beta = torch.zeros_like(activated.beta[idx])

        return _SplatAttributes(
            projected=projected,
            colors=colors,
            colors_ref=colors_ref,
            opacity=activated.opacity[idx],
            ref_opacity=ref_opacity,
            beta=beta,
        )

    @staticmethod
    def _composite_block(
        attrs: _SplatAttributes,
        splat_ids: torch.Tensor,
        pixel_x: torch.Tensor,
        pixel_y: torch.Tensor,
        mode: str,
        threshold: float,
        reflect: bool = True,
    ):
        """一组像素 × 一组已排序泼溅的合成"""
        proj = attrs.projected
        dtype = proj.means2d.dtype
        mean2d = proj.means2d[splat_ids]
        conic = proj.conics[splat_ids]
        radius = proj.radii[splat_ids].to(dtype)

        dx = pixel_x.to(dtype).unsqueeze(-1) - mean2d[:, 0]
        dy = pixel_y.to(dtype).unsqueeze(-1) - mean2d[:, 1]
        with torch.no_grad():
            support = ((dx.abs() <= radius) & (dy.abs() <= radius)).to(dtype)
        power = -0.5 * (conic[:, 0] * dx * dx + 2.0 * conic[:, 1] * dx * dy + conic[:, 2] * dy * dy)
        density = torch.exp(torch.clamp_max(power, 0.0)) * support

        return CompositeService.composite_contributions(
            alpha=attrs.opacity[splat_ids] * density,
            alpha_ref=attrs.ref_opacity[splat_ids] * density,
            beta=attrs.beta[splat_ids] * support,
            colors=attrs.colors[splat_ids],
            colors_ref=attrs.colors_ref[splat_ids],
            depths=proj.depths[splat_ids],
            mode=mode,
            threshold=threshold,
            reflect=reflect,
        )

    @staticmethod
    def _assemble(cloud: GaussianCloud, cam: Camera, attrs: Optional[_SplatAttributes], pixel_ids, results,
                  mode: str, bins: Optional[TileBins]) -> RenderOutputs:
        """按像素下标写回整幅图像；未覆盖的像素为黑色背景"""
        h, w = cam.height, cam.width
        dtype = cloud.dtype
        flat_rgb = torch.zeros((h * w, 3), dtype=dtype)
        flat_scalar = torch.zeros((h * w,), dtype=dtype)
        if results:
            index = torch.cat(pixel_ids)
            transmitted = flat_rgb.index_copy(0, index, torch.cat([r.transmitted for r in results]))
            reflected = flat_rgb.index_copy(0, index, torch.cat([r.reflected for r in results]))
            reflection_map = flat_scalar.index_copy(0, index, torch.cat([r.reflection_map for r in results]))
            depth = flat_scalar.index_copy(0, index, torch.cat([r.depth for r in results]))
            alpha_accum = flat_scalar.index_copy(0, index, torch.cat([r.alpha_accum for r in results]))
        else:
            transmitted, reflected = flat_rgb, flat_rgb.clone()
            reflection_map, depth, alpha_accum = flat_scalar, flat_scalar.clone(), flat_scalar.clone()

        transmitted = transmitted.reshape(h, w, 3)
        reflected = reflected.reshape(h, w, 3)
        reflection_map = reflection_map.reshape(h, w)
        composed = transmitted + reflection_map.unsqueeze(-1) * reflected

        return RenderOutputs(
            composed=composed,
            transmitted=transmitted,
            reflected=reflected,
            reflection_map=reflection_map,
            depth=depth.reshape(h, w),
            alpha_accum=alpha_accum.reshape(h, w),
            cloud=cloud,
            means2d=attrs.projected.means2d if attrs is not None else None,
            visible_indices=attrs.projected.indices if attrs is not None else None,
            radii=attrs.projected.radii if attrs is not None else None,
            bins=bins,
            mode=mode,
        )

    @staticmethod
    def render(
        cloud: GaussianCloud,
        cam: Camera,
        mode: str = "paper",
        threshold: float = EARLY_STOP_THRESHOLD,
        dual_branch: bool = True,
        tile_size: int = TILE_SIZE,
    ) -> RenderOutputs:
        """
        投影 -> 分块排序 -> 逐块合成 -> Ĉ = Ĉ_trans + W ⊙ Ĉ_ref

        Args:
            cloud: 高斯点云
            cam: 相机
            mode: 反射图累积模式 "paper" | "alpha"
            threshold: 提前终止透射率阈值，0 表示关闭
            dual_branch: False 时只渲染透射分支
            tile_size: 分块边长

        Returns:
            RenderOutputs
        """
        check_mode(mode)
        if cloud.num_gaussians == 0:
            logging.error("点云为空，无法渲染")
            raise InvalidArgumentError("点云为空，无法渲染")

        attrs = RenderService.prepare(cloud, cam, dual_branch)
        proj = attrs.projected
        if proj.count == 0:
            return RenderService._assemble(cloud, cam, None, [], [], mode, None)

        bins = BinningService.bin_and_sort(proj.means2d, proj.radii, proj.depths, proj.indices,
                                           cam.width, cam.height, tile_size)
        pixel_ids, results = [], []
        for tile_id in range(bins.num_tiles):
            splat_ids = bins.tile_list(tile_id)
            if splat_ids.numel() == 0:
                continue
            tx, ty = tile_id % bins.tiles_x, tile_id // bins.tiles_x
            xs = torch.arange(tx * tile_size, min((tx + 1) * tile_size, cam.width))
            ys = torch.arange(ty * tile_size, min((ty + 1) * tile_size, cam.height))
            grid_y, grid_x = torch.meshgrid(ys, xs, indexing="ij")
            grid_x, grid_y = grid_x.reshape(-1), grid_y.reshape(-1)
            results.append(RenderService._composite_block(attrs, splat_ids, grid_x, grid_y, mode, threshold,
                                                           reflect=dual_branch))
            pixel_ids.append(grid_y * cam.width + grid_x)

        return RenderService._assemble(cloud, cam, attrs, pixel_ids, results, mode, bins)

    @staticmethod
    def render_reference(
        cloud: GaussianCloud,
        cam: Camera,
        mode: str = "paper",
        dual_branch: bool = True,
    ) -> RenderOutputs:
        """逐像素暴力渲染：全局深度排序、不分块、不提前终止"""
        check_mode(mode)
        attrs = RenderService.prepare(cloud, cam, dual_branch)
        proj = attrs.projected
        if proj.count == 0:
            return RenderService._assemble(cloud, cam, None, [], [], mode, None)

        order = BinningService.depth_order(proj.depths.detach(), proj.indices)
        grid_y, grid_x = torch.meshgrid(torch.arange(cam.height), torch.arange(cam.width), indexing="ij")
        grid_x, grid_y = grid_x.reshape(-1), grid_y.reshape(-1)
        result = RenderService._composite_block(attrs, order, grid_x, grid_y, mode, threshold=0.0,
                                                 reflect=dual_branch)
        return RenderService._assemble(cloud, cam, attrs, [grid_y * cam.width + grid_x], [result], mode, None)

    @staticmethod
    def relight(outputs: RenderOutputs, kappa: float) -> torch.Tensor:
        """Ĉ_trans + κ·(W ⊙ Ĉ_ref)，截断到 [0, 1]"""
        if not math.isfinite(kappa) or kappa < 0:
            logging.error(f"重光照系数必须是非负有限数: {kappa}")
            raise InvalidArgumentError(f"重光照系数必须是非负有限数: {kappa}", {"kappa": kappa})
        reflection = outputs.reflection_map.unsqueeze(-1) * outputs.reflected
        return torch.clamp(outputs.transmitted + kappa * reflection, 0.0, 1.0)

    @staticmethod
    def render_relit(cloud: GaussianCloud, cam: Camera, kappa: float, mode: str = "paper") -> torch.Tensor:
        with torch.no_grad():
            outputs = RenderService.render(cloud, cam, mode)
        return RenderService.relight(outputs, kappa)

    @staticmethod
    def backward(
        outputs: RenderOutputs,
        d_composed: Optional[torch.Tensor] = None,
        d_transmitted: Optional[torch.Tensor] = None,
        d_reflection_map: Optional[torch.Tensor] = None,
        d_depth: Optional[torch.Tensor] = None,
        retain_graph: bool = False,
    ) -> ParamGradients:
        """
        四个渲染量的上游梯度 -> 全部原始参数的梯度（经合成、投影与激活的链式法则）

        Returns:
            ParamGradients: 含按点云下标展开的屏幕空间均值梯度
        """
        cloud = outputs.cloud
        if cloud is None:
            logging.error("渲染输出缺少反向记录")
            raise InvalidArgumentError("渲染输出缺少反向记录")
        upstream = {
            "composed": d_composed,
            "transmitted": d_transmitted,
            "reflection_map": d_reflection_map,
            "depth": d_depth,
        }
        targets, grad_outputs = [], []
        for name, field_value in outputs.fields().items():
            grad = upstream[name]
            if grad is None:
                continue
            if tuple(grad.shape) != tuple(field_value.shape):
                raise ShapeMismatchError(
                    f"{name} 梯度形状 {tuple(grad.shape)} 与渲染输出 {tuple(field_value.shape)} 不符",
                    {"field": name},
                )
            if field_value.requires_grad:
                targets.append(field_value)
                grad_outputs.append(grad.to(field_value.dtype))

        result = ParamGradients.zeros_like(cloud)
        params = cloud.params()
        inputs = [(name, t) for name, t in params.items() if t.requires_grad]
        track_means2d = outputs.means2d is not None and outputs.means2d.requires_grad
        if track_means2d:
            inputs.append(("means2d", outputs.means2d))
        if not targets or not inputs:
            return result

        grads = torch.autograd.grad(
            targets, [t for _, t in inputs], grad_outputs=grad_outputs,
            retain_graph=retain_graph, allow_unused=True,
        )
        for (name, _), grad in zip(inputs, grads):
            if grad is None:
                continue
            if name == "means2d":
                result.means2d[outputs.visible_indices] = grad.detach()
            else:
                setattr(result, name, grad.detach())
        logging.debug(f"反向完成: 可见高斯 {0 if outputs.visible_indices is None else outputs.visible_indices.numel()}")
        return result

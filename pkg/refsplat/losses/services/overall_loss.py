from typing import Dict, Tuple

import torch

from refsplat.losses.schemes.loss_config import LossBundle, LossConfig
from refsplat.losses.services.image_losses import check_same_shape, init_alignment_loss, photometric_loss
from refsplat.losses.services.smoothness_losses import bilateral_smoothness, reflection_map_smoothness
from refsplat.rasterizer.schemes.render_outputs import RenderOutputs

FIELD_NAMES = ("composed", "transmitted", "reflection_map", "depth")


def _assemble(gt: torch.Tensor, fields: Dict[str, torch.Tensor], alpha_accum: torch.Tensor,
              cfg: LossConfig, iteration: int) -> LossBundle:
    check_same_shape(gt, fields["composed"])
    zero = torch.zeros((), dtype=fields["composed"].dtype)
    l_rgb = photometric_loss(gt, fields["composed"], cfg.lambda_balance, cfg.ssim_window, cfg.ssim_sigma)

    use_init = iteration < cfg.init_cutoff_iter and cfg.lambda_init > 0
    l_init = init_alignment_loss(gt, fields["transmitted"]) if use_init else zero
    l_bi = bilateral_smoothness(fields["depth"], fields["composed"], cfg.gamma, alpha_accum, cfg.both_orientations)
    l_ref = reflection_map_smoothness(fields["reflection_map"], cfg.both_orientations)

    return LossBundle(
        l_rgb=l_rgb,
        l_init=l_init,
        l_bi=l_bi,
        l_ref=l_ref,
        lambda_init=cfg.lambda_init if use_init else 0.0,
        lambda_bi=cfg.lambda_bi,
        lambda_ref=cfg.lambda_ref,
        lambda_balance=cfg.lambda_balance,
    )


def overall_loss(gt: torch.Tensor, outputs: RenderOutputs, cfg: LossConfig, iteration: int) -> LossBundle:
    """
    L = L_rgb + λ_init·L_init + λ_bi·L_bi + λ_ref·L_ref

    L_init 只在 iteration < init_cutoff_iter 时计入，之后该项与其权重均为 0
    """
    fields = {name: getattr(outputs, name) for name in FIELD_NAMES}
    return _assemble(gt, fields, outputs.alpha_accum.detach(), cfg, iteration)


def loss_and_field_gradients(
    gt: torch.Tensor, outputs: RenderOutputs, cfg: LossConfig, iteration: int
) -> Tuple[LossBundle, Dict[str, torch.Tensor]]:
    """
    在渲染量的独立副本上求总损失及其对四个渲染量的偏导

    偏导交给 RenderService.backward 回传到高斯参数

    Returns:
        (LossBundle, {"composed": ..., "transmitted": ..., "reflection_map": ..., "depth": ...})
    """
    leaves = {name: getattr(outputs, name).detach().clone().requires_grad_(True) for name in FIELD_NAMES}
    with torch.enable_grad():
        bundle = _assemble(gt.detach(), leaves, outputs.alpha_accum.detach(), cfg, iteration)
        grads = torch.autograd.grad(bundle.total, [leaves[n] for n in FIELD_NAMES], allow_unused=True)
    field_grads = {
        name: (g if g is not None else torch.zeros_like(leaves[name]))
        for name, g in zip(FIELD_NAMES, grads)
    }
    detached = LossBundle(
        l_rgb=bundle.l_rgb.detach(),
        l_init=bundle.l_init.detach(),
        l_bi=bundle.l_bi.detach(),
        l_ref=bundle.l_ref.detach(),
        lambda_init=bundle.lambda_init,
        lambda_bi=bundle.lambda_bi,
        lambda_ref=bundle.lambda_ref,
        lambda_balance=bundle.lambda_balance,
        total=bundle.total.detach(),
    )
    return detached, field_grads

from refsplat.losses.services.image_losses import l1_loss, ssim, dssim_loss, photometric_loss, init_alignment_loss
from refsplat.losses.services.smoothness_losses import bilateral_smoothness, reflection_map_smoothness
from refsplat.losses.services.overall_loss import overall_loss, loss_and_field_gradients

__all__ = [
    "l1_loss", "ssim", "dssim_loss", "photometric_loss", "init_alignment_loss",
    "bilateral_smoothness", "reflection_map_smoothness",
    "overall_loss", "loss_and_field_gradients",
]

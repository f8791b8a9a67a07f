from refsplat.scene_model.services.gaussian_service import GaussianService
from refsplat.scene_model.services.sh_service import eval_sh, rgb_to_sh, sh_to_rgb

__all__ = ["GaussianService", "eval_sh", "rgb_to_sh", "sh_to_rgb"]

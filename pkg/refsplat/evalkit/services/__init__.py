from refsplat.evalkit.services.metrics_service import psnr, ssim_metric, measure_fps, evaluate
from refsplat.evalkit.services.export_service import ExportService

__all__ = ["psnr", "ssim_metric", "measure_fps", "evaluate", "ExportService"]

from refsplat.rasterizer.services.binning_service import BinningService
from refsplat.rasterizer.services.composite_service import CompositeService
from refsplat.rasterizer.services.render_service import RenderService

__all__ = ["BinningService", "CompositeService", "RenderService"]

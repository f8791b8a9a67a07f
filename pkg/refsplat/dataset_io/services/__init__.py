from refsplat.dataset_io.services.image_service import ImageService
from refsplat.dataset_io.services.colmap_service import ColmapService
from refsplat.dataset_io.services.split_service import SplitService
from refsplat.dataset_io.services.ply_service import PlyService
from refsplat.dataset_io.services.synthetic_service import SyntheticService

__all__ = ["ImageService", "ColmapService", "SplitService", "PlyService", "SyntheticService"]

from refsplat.projection.services.projection_service import ProjectionService, focal_from_fov

__all__ = ["ProjectionService", "focal_from_fov"]

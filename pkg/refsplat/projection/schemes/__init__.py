from refsplat.projection.schemes.camera import Camera, Splat2D, ProjectedSplats

__all__ = ["Camera", "Splat2D", "ProjectedSplats"]

from refsplat.rasterizer.schemes.render_outputs import TileBins, RenderOutputs, ParamGradients

__all__ = ["TileBins", "RenderOutputs", "ParamGradients"]

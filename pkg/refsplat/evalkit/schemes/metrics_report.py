from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field


class ViewMetrics(BaseModel):
    """单视角指标"""
    image_name: str = Field(..., description="图像名")
    psnr: float = Field(..., description="PSNR (dB)，相同图像记为上限 100")
    ssim: float = Field(..., description="单尺度 SSIM")


class MetricsReport(BaseModel):
    """评估报告：逐视角指标、均值、渲染帧率与配置哈希"""
    scene: str = Field(..., description="场景名")
    config_hash: str = Field("", description="解析后运行配置的 xxh64 哈希")
    mode: str = Field("paper", description="反射图累积模式")
    views: List[ViewMetrics] = Field(default_factory=list, description="逐视角指标")
    mean_psnr: float = Field(0.0, description="PSNR 均值")
    mean_ssim: float = Field(0.0, description="SSIM 均值")
    fps: Optional[float] = Field(None, description="前向渲染帧率")

    @classmethod
    def from_views(cls, scene: str, views: List[ViewMetrics], config_hash: str = "",
                   mode: str = "paper", fps: Optional[float] = None) -> "MetricsReport":
        if not views:
            raise ValueError("评估视角为空")
        return cls(
            scene=scene,
            config_hash=config_hash,
            mode=mode,
            views=views,
            mean_psnr=float(np.mean([v.psnr for v in views])),
            mean_ssim=float(np.mean([v.ssim for v in views])),
            fps=fps,
        )

    def rows(self) -> List[dict]:
        return [view.model_dump() for view in self.views]

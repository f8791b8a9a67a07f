from dataclasses import dataclass, field
from typing import Dict

import torch
from pydantic import BaseModel, Field, field_validator


class LossConfig(BaseModel):
    """损失权重与常数"""
    lambda_balance: float = Field(0.8, description="L1 与 D-SSIM 的平衡系数 λ")
    lambda_init: float = Field(0.1, description="初始对齐损失权重")
    lambda_bi: float = Field(0.0001, description="双边深度平滑权重")
    lambda_ref: float = Field(0.0001, description="反射图平滑权重")
    gamma: float = Field(0.1, description="双边权重的颜色尺度 γ")
    init_cutoff_iter: int = Field(3000, description="初始对齐损失生效的迭代上限")
    ssim_window: int = Field(11, description="SSIM 高斯窗口边长")
    ssim_sigma: float = Field(1.5, description="SSIM 高斯窗口标准差")
    both_orientations: bool = Field(False, description="邻域像素对是否按两个方向各计一次")

    @field_validator("lambda_balance")
    @classmethod
    def check_balance(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"lambda_balance 必须在 [0, 1] 内: {value}")
        return value

    @field_validator("gamma")
    @classmethod
    def check_gamma(cls, value: float) -> float:
        if not value > 0:
            raise ValueError(f"gamma 必须为正: {value}")
        return value

    @field_validator("lambda_init", "lambda_bi", "lambda_ref")
    @classmethod
    def check_weight(cls, value: float) -> float:
        if value < 0:
            raise ValueError(f"损失权重不能为负: {value}")
        return value

    @field_validator("ssim_window")
    @classmethod
    def check_window(cls, value: int) -> int:
        if value < 1 or value % 2 == 0:
            raise ValueError(f"SSIM 窗口必须为正奇数: {value}")
        return value


@dataclass
class LossBundle:
    """总损失的各项、权重与合计"""
    l_rgb: torch.Tensor
    l_init: torch.Tensor
    l_bi: torch.Tensor
    l_ref: torch.Tensor
    lambda_init: float
    lambda_bi: float
    lambda_ref: float
    lambda_balance: float
    total: torch.Tensor = field(default=None)

    def __post_init__(self):
        if self.total is None:
            self.total = (self.l_rgb + self.lambda_init * self.l_init
                          + self.lambda_bi * self.l_bi + self.lambda_ref * self.l_ref)

    @property
    def weights(self) -> Dict[str, float]:
        return {
            "lambda": self.lambda_balance,
            "lambda_init": self.lambda_init,
            "lambda_bi": self.lambda_bi,
            "lambda_ref": self.lambda_ref,
        }

    def terms(self) -> Dict[str, float]:
        """日志与诊断用的标量值"""
        return {
            "l_rgb": float(self.l_rgb),
            "l_init": float(self.l_init),
            "l_bi": float(self.l_bi),
            "l_ref": float(self.l_ref),
            "total": float(self.total),
        }

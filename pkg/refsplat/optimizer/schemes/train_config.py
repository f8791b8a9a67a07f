import logging
from enum import Enum
from typing import List

from pydantic import BaseModel, Field, field_validator, model_validator

from refsplat.losses.schemes.loss_config import LossConfig
from refsplat.rasterizer.services.composite_service import ACCUMULATION_MODES
from refsplat.scene_model.models.gaussian_cloud import PARAM_NAMES


class AblationPreset(str, Enum):
    """模型设计消融预设"""
    A = "A"        # 无反射分支：β 固定为 ~0，sh_ref 固定为 0
    B = "B"        # 仅反射球谐
    C = "C"        # 反射 + 双边平滑
    D = "D"        # 反射 + 反射图平滑
    FULL = "full"


class TrainConfig(BaseModel):
    """训练调度、学习率与增密参数"""
    total_iters: int = Field(30000, description="总迭代次数")

    # 学习率
    lr_means_init: float = Field(1.6e-4, description="均值初始学习率（乘场景尺度）")
    lr_means_final: float = Field(1.6e-6, description="均值最终学习率（乘场景尺度）")
    lr_sh: float = Field(2.5e-3, description="两组球谐系数学习率")
    lr_opacity: float = Field(5e-2, description="不透明度 logit 学习率")
    lr_ref_opacity: float = Field(5e-2, description="反射不透明度 logit 学习率")
    lr_beta: float = Field(5e-2, description="反射置信度 logit 学习率")
    lr_scales: float = Field(5e-3, description="对数尺度学习率")
    lr_rotations: float = Field(1e-3, description="四元数学习率")
    frozen_groups: List[str] = Field(default_factory=list, description="冻结的参数组（学习率为 0）")

    # 增密
    densify_interval: int = Field(100, description="增密间隔")
    densify_start: int = Field(500, description="增密起始迭代")
    densify_end: int = Field(15000, description="增密结束迭代")
    grad_threshold: float = Field(2e-4, description="屏幕空间位置梯度阈值（NDC 单位）")
    prune_opacity: float = Field(5e-3, description="剪枝不透明度阈值")
    opacity_reset_interval: int = Field(3000, description="不透明度重置间隔")
    reset_opacity_value: float = Field(0.01, description="重置后的不透明度上限")
    percent_dense: float = Field(0.01, description="克隆/分裂的尺度分界（乘场景尺度）")
    split_count: int = Field(2, description="分裂子高斯个数")
    split_scale_divisor: float = Field(1.6, description="分裂后尺度的缩小倍数")
    max_screen_size: float = Field(20.0, description="首次重置后按屏幕半径剪枝的阈值（像素）")

    # 渲染与日志
    sh_degree_interval: int = Field(1000, description="球谐阶数提升间隔")
    accumulation_mode: str = Field("paper", description="反射图累积模式 paper | alpha")
    early_stop_threshold: float = Field(1e-4, description="合成提前终止阈值")
    log_interval: int = Field(100, description="日志记录间隔")
    checkpoint_interval: int = Field(5000, description="检查点间隔，0 表示只保存最终结果")
    freeze_reflection: bool = Field(False, description="β 固定在 logit -30、sh_ref 固定为 0（消融 A）")

    loss: LossConfig = Field(default_factory=LossConfig, description="损失配置")

    @field_validator("total_iters")
    @classmethod
    def check_iters(cls, value: int) -> int:
        if value < 0:
            raise ValueError(f"迭代次数不能为负: {value}")
        return value

    @field_validator("accumulation_mode")
    @classmethod
    def check_mode(cls, value: str) -> str:
        if value == "beta":
            logging.warning("累积模式 beta 已更名为 paper")
            value = "paper"
        if value not in ACCUMULATION_MODES:
            raise ValueError(f"未知的累积模式: {value}，可选 {ACCUMULATION_MODES}")
        return value

    @field_validator("frozen_groups")
    @classmethod
    def check_groups(cls, value: List[str]) -> List[str]:
        unknown = [name for name in value if name not in PARAM_NAMES]
        if unknown:
            raise ValueError(f"未知参数组: {unknown}")
        return value

    @field_validator("densify_interval", "opacity_reset_interval", "sh_degree_interval", "log_interval")
    @classmethod
    def check_positive(cls, value: int) -> int:
        if value <= 0:
            raise ValueError(f"间隔必须为正: {value}")
        return value

    @model_validator(mode="after")
    def check_schedule(self) -> "TrainConfig":
        if self.densify_start < 0:
            raise ValueError(f"densify_start 不能为负: {self.densify_start}")
        if self.densify_start >= self.densify_end:
            raise ValueError(f"增密区间为空: densify_start={self.densify_start} >= densify_end={self.densify_end}")
        if self.total_iters < self.densify_end:
            logging.warning(f"total_iters={self.total_iters} 小于 densify_end={self.densify_end}，增密截止到 {self.total_iters}")
        return self

    @property
    def effective_densify_end(self) -> int:
        return min(self.densify_end, self.total_iters)

    @property
    def densify_enabled(self) -> bool:
        """短训练截断后区间为空时不增密"""
        return self.densify_start < self.effective_densify_end

    def learning_rates(self) -> dict:
        """参数组 -> 初始学习率（均值另乘场景尺度）"""
        return {
            "means": self.lr_means_init,
            "rotations": self.lr_rotations,
            "log_scales": self.lr_scales,
            "opacity_logits": self.lr_opacity,
            "sh_trans": self.lr_sh,
            "sh_ref": self.lr_sh,
            "ref_opacity_logits": self.lr_ref_opacity,
            "beta_logits": self.lr_beta,
        }

    def with_ablation(self, preset: AblationPreset) -> "TrainConfig":
        """在当前配置上套用消融预设，返回新配置"""
        preset = AblationPreset(preset)
        loss = self.loss.model_copy()
        update = {}
        if preset == AblationPreset.A:
            loss.lambda_bi = 0.0
            loss.lambda_ref = 0.0
            update["freeze_reflection"] = True
            update["frozen_groups"] = sorted(set(self.frozen_groups) | {"beta_logits", "sh_ref"})
        elif preset == AblationPreset.B:
            loss.lambda_bi = 0.0
            loss.lambda_ref = 0.0
        elif preset == AblationPreset.C:
            loss.lambda_ref = 0.0
        elif preset == AblationPreset.D:
            loss.lambda_bi = 0.0
        update["loss"] = loss
        return self.model_copy(update=update)

from dataclasses import dataclass
from typing import Dict, Iterable, List, Union

import torch

from refsplat.utils.exceptions import ShapeMismatchError, NumericalError

# 参数组名称，顺序即 PLY / 优化器 / 梯度的统一顺序
PARAM_NAMES = (
    "means",
    "rotations",
    "log_scales",
    "opacity_logits",
    "sh_trans",
    "sh_ref",
    "ref_opacity_logits",
    "beta_logits",
)

DEFAULT_MAX_SH_DEGREE = 3


@dataclass
class RawGaussianParams:
    """单个 RefGaussian 的原始（未激活）参数"""
    mean: torch.Tensor               # (3,)
    rotation: torch.Tensor           # (4,) 未归一化四元数 (w, x, y, z)
    log_scale: torch.Tensor          # (3,)
    opacity_logit: torch.Tensor      # ()
    sh_trans: torch.Tensor           # (K, 3)
    sh_ref: torch.Tensor             # (K, 3)
    ref_opacity_logit: torch.Tensor  # ()
    beta_logit: torch.Tensor         # ()


@dataclass
class ActivatedGaussians:
    """激活后的几何与不透明度（结构数组）"""
    means: torch.Tensor        # (N, 3)
    cov3d: torch.Tensor        # (N, 3, 3)
    opacity: torch.Tensor      # (N,)
    ref_opacity: torch.Tensor  # (N,)
    beta: torch.Tensor         # (N,)


class GaussianCloud:
    """RefGaussian 点云：结构数组布局，几何 + 双外观"""

    def __init__(
        self,
        means: torch.Tensor,
        rotations: torch.Tensor,
        log_scales: torch.Tensor,
        opacity_logits: torch.Tensor,
        sh_trans: torch.Tensor,
        sh_ref: torch.Tensor,
        ref_opacity_logits: torch.Tensor,
        beta_logits: torch.Tensor,
        active_sh_degree: int = 0,
        max_sh_degree: int = DEFAULT_MAX_SH_DEGREE,
    ):
        self.means = means
        self.rotations = rotations
        self.log_scales = log_scales
        self.opacity_logits = opacity_logits
        self.sh_trans = sh_trans
        self.sh_ref = sh_ref
        self.ref_opacity_logits = ref_opacity_logits
        self.beta_logits = beta_logits
        self.max_sh_degree = max_sh_degree
        self.active_sh_degree = active_sh_degree
        self.validate_shapes()

    # ------------------------------ 基本属性 ------------------------------
    @property
    def num_gaussians(self) -> int:
        return int(self.means.shape[0])

    def __len__(self) -> int:
        return self.num_gaussians

    @property
    def dtype(self) -> torch.dtype:
        return self.means.dtype

    @property
    def device(self) -> torch.device:
        return self.means.device

    @property
    def sh_coeff_count(self) -> int:
        return (self.max_sh_degree + 1) ** 2

    def params(self) -> Dict[str, torch.Tensor]:
        """按 PARAM_NAMES 顺序返回参数张量"""
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def set_param(self, name: str, tensor: torch.Tensor) -> None:
        if name not in PARAM_NAMES:
            raise KeyError(f"未知参数组: {name}")
        setattr(self, name, tensor)

    # ------------------------------ 校验 ------------------------------
    def validate_shapes(self) -> None:
        """检查各参数组形状一致"""
        n = self.means.shape[0]
        k = self.sh_coeff_count
        expected = {
            "means": (n, 3),
            "rotations": (n, 4),
            "log_scales": (n, 3),
            "opacity_logits": (n,),
            "sh_trans": (n, k, 3),
            "sh_ref": (n, k, 3),
            "ref_opacity_logits": (n,),
            "beta_logits": (n,),
        }
        for name, shape in expected.items():
            actual = tuple(getattr(self, name).shape)
            if actual != shape:
                raise ShapeMismatchError(
                    f"参数 {name} 形状不符: 期望 {shape}, 实际 {actual}",
                    {"param": name, "expected": shape, "actual": actual},
                )
        if not 0 <= self.active_sh_degree <= self.max_sh_degree:
            raise ValueError(
                f"active_sh_degree={self.active_sh_degree} 超出 [0, {self.max_sh_degree}]"
            )

    def validate_finite(self) -> None:
        for name, tensor in self.params().items():
            if not torch.isfinite(tensor).all():
                raise NumericalError(f"参数 {name} 含非有限值", {"param": name})

    # ------------------------------ 构造/复制 ------------------------------
    @classmethod
    def from_params(cls, params: Dict[str, torch.Tensor], active_sh_degree: int = 0,
                    max_sh_degree: int = DEFAULT_MAX_SH_DEGREE) -> "GaussianCloud":
        return cls(**{name: params[name] for name in PARAM_NAMES},
                   active_sh_degree=active_sh_degree, max_sh_degree=max_sh_degree)

    @classmethod
    def stack(cls, rows: Iterable[RawGaussianParams], active_sh_degree: int = 0,
              max_sh_degree: int = DEFAULT_MAX_SH_DEGREE) -> "GaussianCloud":
        """由单个高斯参数列表堆叠成点云"""
        rows = list(rows)
        if not rows:
            raise ValueError("至少需要一个高斯")
        return cls(
            means=torch.stack([r.mean for r in rows]),
            rotations=torch.stack([r.rotation for r in rows]),
            log_scales=torch.stack([r.log_scale for r in rows]),
            opacity_logits=torch.stack([torch.as_tensor(r.opacity_logit) for r in rows]),
            sh_trans=torch.stack([r.sh_trans for r in rows]),
            sh_ref=torch.stack([r.sh_ref for r in rows]),
            ref_opacity_logits=torch.stack([torch.as_tensor(r.ref_opacity_logit) for r in rows]),
            beta_logits=torch.stack([torch.as_tensor(r.beta_logit) for r in rows]),
            active_sh_degree=active_sh_degree,
            max_sh_degree=max_sh_degree,
        )

    def gaussian(self, index: int) -> RawGaussianParams:
        """取出第 index 个高斯的原始参数"""
        return RawGaussianParams(
            mean=self.means[index],
            rotation=self.rotations[index],
            log_scale=self.log_scales[index],
            opacity_logit=self.opacity_logits[index],
            sh_trans=self.sh_trans[index],
            sh_ref=self.sh_ref[index],
            ref_opacity_logit=self.ref_opacity_logits[index],
            beta_logit=self.beta_logits[index],
        )

    def clone(self, requires_grad: bool = False) -> "GaussianCloud":
        """深拷贝（脱离计算图）"""
        params = {name: t.detach().clone().requires_grad_(requires_grad)
                  for name, t in self.params().items()}
        return GaussianCloud.from_params(params, self.active_sh_degree, self.max_sh_degree)

    def to(self, dtype: torch.dtype) -> "GaussianCloud":
        params = {name: t.detach().to(dtype) for name, t in self.params().items()}
        return GaussianCloud.from_params(params, self.active_sh_degree, self.max_sh_degree)

    def requires_grad_(self, flag: bool = True) -> "GaussianCloud":
        """将所有参数设为叶子张量并开启梯度"""
        for name, tensor in self.params().items():
            if not tensor.is_leaf:
                tensor = tensor.detach()
            self.set_param(name, tensor.requires_grad_(flag))
        return self

    def select(self, index: Union[torch.Tensor, List[int]]) -> "GaussianCloud":
        """按布尔掩码或下标取子集"""
        params = {name: t.detach()[index] for name, t in self.params().items()}
        return GaussianCloud.from_params(params, self.active_sh_degree, self.max_sh_degree)

    # ------------------------------ 训练辅助 ------------------------------
    def oneup_sh_degree(self) -> None:
        if self.active_sh_degree < self.max_sh_degree:
            self.active_sh_degree += 1

    def equals(self, other: "GaussianCloud") -> bool:
        """逐位比较（用于往返测试）"""
        if (self.active_sh_degree, self.max_sh_degree) != (other.active_sh_degree, other.max_sh_degree):
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and torch.equal(a.detach(), b.detach())
            for a, b in zip(self.params().values(), other.params().values())
        )

    def __repr__(self) -> str:
        return (f"GaussianCloud(n={self.num_gaussians}, sh={self.active_sh_degree}/{self.max_sh_degree}, "
                f"dtype={self.dtype})")


import os
import logging
from typing import Dict, List, Tuple

import numpy as np
import torch
from plyfile import PlyData, PlyElement, PlyElementParseError, PlyHeaderParseError

from refsplat.scene_model.models.gaussian_cloud import GaussianCloud
from refsplat.utils.exceptions import PlyFormatError

MAX_SH_COMMENT = "refsplat max_sh_degree"
ACTIVE_SH_COMMENT = "refsplat active_sh_degree"


def construct_list_of_attributes(rest_count: int) -> List[str]:
    """扩展 PLY 顶点属性名：标准 3D-GS 字段在前，反射分支字段在后"""
    names = ["x", "y", "z", "nx", "ny", "nz"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(rest_count)]
    names.append("opacity")
    names += [f"scale_{i}" for i in range(3)]
    names += [f"rot_{i}" for i in range(4)]
    names += [f"f_ref_dc_{i}" for i in range(3)]
    names += [f"f_ref_rest_{i}" for i in range(rest_count)]
    names += ["ref_opacity", "beta"]
    return names


def _split_sh(sh: torch.Tensor) -> Tuple[np.ndarray, np.ndarray]:
    """(N, K, 3) -> dc (N, 3), rest (N, 3*(K-1))，rest 按通道优先展开"""
    sh = sh.detach().cpu()
    dc = sh[:, 0, :].numpy()
    rest = sh[:, 1:, :].transpose(1, 2).flatten(start_dim=1).contiguous().numpy()
    return dc, rest


def _merge_sh(dc: np.ndarray, rest: np.ndarray, coeffs: int) -> torch.Tensor:
    n = dc.shape[0]
    rest = rest.reshape(n, 3, coeffs - 1).transpose(0, 2, 1)
    return torch.from_numpy(np.ascontiguousarray(np.concatenate([dc[:, None, :], rest], axis=1)))


def _parse_comment(comments: List[str], key: str) -> int:
    for comment in comments:
        if comment.startswith(key):
            try:
                return int(comment[len(key):].strip())
            except ValueError as e:
                raise PlyFormatError(f"头部注释无法解析: {comment}") from e
    raise PlyFormatError(f"头部缺少注释: {key}")


class PlyService:
    """扩展高斯点云的 PLY 读写"""

    @staticmethod
    def export_ply(cloud: GaussianCloud, path: str) -> None:
        """
        写小端二进制 PLY，存储原始 logit/系数

        float32 点云写 f4 属性，float64 点云写 f8 属性
        """
        cloud.validate_shapes()
        if os.path.dirname(path):
            os.makedirs(os.path.dirname(path), exist_ok=True)
        if cloud.dtype == torch.float64:
            np_dtype, ply_type = np.float64, "f8"
        else:
            np_dtype, ply_type = np.float32, "f4"

        rest_count = 3 * (cloud.sh_coeff_count - 1)
        means = cloud.means.detach().cpu().numpy()
        dc, rest = _split_sh(cloud.sh_trans)
        ref_dc, ref_rest = _split_sh(cloud.sh_ref)
        columns = [
            means,
            np.zeros_like(means),
            dc,
            rest,
            cloud.opacity_logits.detach().cpu().numpy()[:, None],
            cloud.log_scales.detach().cpu().numpy(),
            cloud.rotations.detach().cpu().numpy(),
            ref_dc,
            ref_rest,
            cloud.ref_opacity_logits.detach().cpu().numpy()[:, None],
            cloud.beta_logits.detach().cpu().numpy()[:, None],
        ]
        attributes = np.concatenate([c.astype(np_dtype) for c in columns], axis=1)
        names = construct_list_of_attributes(rest_count)
        elements = np.empty(cloud.num_gaussians, dtype=[(name, ply_type) for name in names])
        for i, name in enumerate(names):
            elements[name] = attributes[:, i]

        comments = [f"{MAX_SH_COMMENT} {cloud.max_sh_degree}", f"{ACTIVE_SH_COMMENT} {cloud.active_sh_degree}"]
        PlyData([PlyElement.describe(elements, "vertex")], text=False, byte_order="<",
                comments=comments).write(path)
        logging.info(f"点云已写出: {path} ({cloud.num_gaussians} 个高斯)")

    @staticmethod
    def import_ply(path: str) -> GaussianCloud:
        """读取扩展 PLY；缺失属性或数据截断时抛出 PlyFormatError"""
        if not os.path.isfile(path):
            raise PlyFormatError(f"PLY 文件不存在: {path}")
        try:
            plydata = PlyData.read(path)
        except PlyHeaderParseError as e:
            logging.error(f"PLY 头部解析失败 {path}: {e}")
            raise PlyFormatError(f"PLY 头部解析失败: {e}", offset=getattr(e, "line", None)) from e
        except PlyElementParseError as e:
            prop = getattr(e, "prop", None)
            logging.error(f"PLY 数据解析失败 {path}: {e}")
            raise PlyFormatError(f"PLY 数据解析失败: {e}", offset=getattr(e, "row", None),
                                 property_name=getattr(prop, "name", None)) from e
        except (ValueError, EOFError) as e:
            raise PlyFormatError(f"PLY 解析失败: {e}") from e

        if "vertex" not in plydata:
            raise PlyFormatError("PLY 缺少 vertex 元素", property_name="vertex")
        vertex = plydata["vertex"]
        max_sh_degree = _parse_comment(plydata.comments, MAX_SH_COMMENT)
        active_sh_degree = _parse_comment(plydata.comments, ACTIVE_SH_COMMENT)
        coeffs = (max_sh_degree + 1) ** 2
        expected = construct_list_of_attributes(3 * (coeffs - 1))

        present = [prop.name for prop in vertex.properties]
        for index, name in enumerate(expected):
            if name not in present:
                raise PlyFormatError(f"PLY 缺少属性: {name}", offset=index, property_name=name)
        if len(present) != len(expected):
            extra = [name for name in present if name not in expected]
            raise PlyFormatError(
                f"属性数量不符: 期望 {len(expected)}, 实际 {len(present)}",
                offset=len(expected), property_name=extra[0] if extra else None,
            )

        data = vertex.data
        np_dtype = np.float64 if np.dtype(data["x"].dtype).itemsize == 8 else np.float32

        def stack(names: List[str]) -> np.ndarray:
            if not names:
                return np.zeros((len(data), 0), dtype=np_dtype)
            return np.stack([np.asarray(data[name], dtype=np_dtype) for name in names], axis=1)

        rest_count = 3 * (coeffs - 1)
        params: Dict[str, torch.Tensor] = {
            "means": torch.from_numpy(stack(["x", "y", "z"])),
            "rotations": torch.from_numpy(stack([f"rot_{i}" for i in range(4)])),
            "log_scales": torch.from_numpy(stack([f"scale_{i}" for i in range(3)])),
            "opacity_logits": torch.from_numpy(stack(["opacity"])[:, 0].copy()),
            "sh_trans": _merge_sh(stack([f"f_dc_{i}" for i in range(3)]),
                                  stack([f"f_rest_{i}" for i in range(rest_count)]), coeffs),
            "sh_ref": _merge_sh(stack([f"f_ref_dc_{i}" for i in range(3)]),
                                stack([f"f_ref_rest_{i}" for i in range(rest_count)]), coeffs),
            "ref_opacity_logits": torch.from_numpy(stack(["ref_opacity"])[:, 0].copy()),
            "beta_logits": torch.from_numpy(stack(["beta"])[:, 0].copy()),
        }
        cloud = GaussianCloud.from_params(params, active_sh_degree=active_sh_degree, max_sh_degree=max_sh_degree)
        logging.info(f"点云已读取: {path} ({cloud.num_gaussians} 个高斯)")
        return cloud

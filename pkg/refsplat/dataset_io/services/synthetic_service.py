import os
import json
import math
import logging
from typing import Tuple

import numpy as np

from refsplat.dataset_io.schemes.dataset import WALL_TEXTURE_RANGE, Dataset, SyntheticScene, SyntheticSceneSpec
from refsplat.dataset_io.services.colmap_service import ColmapService
from refsplat.dataset_io.services.image_service import ImageService
from refsplat.projection.schemes.camera import Camera
from refsplat.projection.services.projection_service import focal_from_fov
from refsplat.utils.exceptions import DataError

TEXTURE_WAVES = 4
WORLD_UP = (0.0, -1.0, 0.0)


class ProceduralTexture:
    """平面上的 RGB 正弦纹理：每通道若干随机方向/频率/相位的正弦波取平均"""

    def __init__(self, seed: int, low: float, high: float, waves: int = TEXTURE_WAVES):
        rng = np.random.default_rng(seed)
        self.freqs = rng.uniform(1.0, 4.0, size=(3, waves, 2)) * rng.choice([-1.0, 1.0], size=(3, waves, 2))
        self.phases = rng.uniform(0.0, 2.0 * math.pi, size=(3, waves))
        self.low = low
        self.high = high

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """(…) 平面坐标 -> (…, 3) 颜色，取值 [low, high]"""
        arg = (x[..., None, None] * self.freqs[..., 0] + y[..., None, None] * self.freqs[..., 1]
               + self.phases)
        wave = np.sin(arg).mean(axis=-1)
        return self.low + (self.high - self.low) * 0.5 * (wave + 1.0)


class SyntheticService:
    """解析渲染的合成镜面场景（不经过高斯管线）"""

    @staticmethod
    def make_cameras(spec: SyntheticSceneSpec) -> list:
        """相机位于 z=0 平面的环上，都注视镜子中心"""
        width, height = spec.resolution
        focal = focal_from_fov(math.radians(spec.fov_deg), width)
        target = (spec.mirror_center[0], spec.mirror_center[1], spec.wall_distance)
        cameras = []
        for i in range(spec.n_views):
            angle = 2.0 * math.pi * i / spec.n_views
            radius = spec.camera_spread * (1.0 if i % 2 == 0 else 0.5)
            eye = (radius * math.cos(angle), radius * math.sin(angle), 0.0)
            cameras.append(Camera.look_at(eye, target, WORLD_UP, focal, focal, width, height,
                                          image_name=f"{i:05d}.png"))
        return cameras

    @staticmethod
    def mirror_corners(spec: SyntheticSceneSpec) -> np.ndarray:
        mx, my = spec.mirror_center
        hw, hh = spec.mirror_size[0] / 2.0, spec.mirror_size[1] / 2.0
        z = spec.wall_distance
        return np.array([[mx - hw, my - hh, z], [mx + hw, my - hh, z],
                         [mx + hw, my + hh, z], [mx - hw, my + hh, z]])

    @staticmethod
    def project_points(cam: Camera, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """世界点 -> (像素坐标 (P, 2), 相机空间深度 (P,))"""
        t = points @ np.asarray(cam.rotation).T + np.asarray(cam.translation)
        z = t[:, 2]
        uv = np.stack([cam.fx * t[:, 0] / z + cam.cx, cam.fy * t[:, 1] / z + cam.cy], axis=1)
        return uv, z

    @staticmethod
    def mirror_fully_visible(spec: SyntheticSceneSpec, cam: Camera) -> bool:
        uv, z = SyntheticService.project_points(cam, SyntheticService.mirror_corners(spec))
        return bool(np.all(z > 0)
                    and np.all((uv[:, 0] >= 0) & (uv[:, 0] <= cam.width - 1))
                    and np.all((uv[:, 1] >= 0) & (uv[:, 1] <= cam.height - 1)))

    @staticmethod
    def pixel_rays(cam: Camera) -> Tuple[np.ndarray, np.ndarray]:
        """像素中心射线：返回相机中心 (3,) 与世界方向 (H, W, 3)"""
        u, v = np.meshgrid(np.arange(cam.width, dtype=np.float64), np.arange(cam.height, dtype=np.float64))
        dirs_cam = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
        rotation = np.asarray(cam.rotation)
        center = -rotation.T @ np.asarray(cam.translation)
        return center, dirs_cam @ rotation

    @staticmethod
    def render_view(spec: SyntheticSceneSpec, cam: Camera, wall: ProceduralTexture,
                    obj: ProceduralTexture) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        解析渲染单个视角

        Returns:
            diffuse (H, W, 3), mirrored (H, W, 3)（镜外为 0）, mask (H, W) bool
        """
        center, dirs = SyntheticService.pixel_rays(cam)
        dz = dirs[..., 2]
        if np.any(dz <= 0):
            raise DataError(f"视角 {cam.image_name} 存在射线未指向墙面")
        t = (spec.wall_distance - center[2]) / dz
        hit = center + t[..., None] * dirs
        diffuse = wall(hit[..., 0], hit[..., 1])

        mx, my = spec.mirror_center
        mask = ((np.abs(hit[..., 0] - mx) <= spec.mirror_size[0] / 2.0)
                & (np.abs(hit[..., 1] - my) <= spec.mirror_size[1] / 2.0))

        # 镜面反射：z 方向取反，与相机后方的物体平面求交
        s = (spec.wall_distance - spec.object_distance) / dz
        qx = hit[..., 0] + s * dirs[..., 0]
        qy = hit[..., 1] + s * dirs[..., 1]
        mirrored = obj(qx, qy) * mask[..., None]
        return diffuse, mirrored, mask

    @staticmethod
    def sample_wall_points(spec: SyntheticSceneSpec, cameras: list, wall: ProceduralTexture) -> Tuple[np.ndarray, np.ndarray]:
        """在所有视角可见的墙面范围内均匀采样稀疏点，颜色取墙面纹理"""
        footprints = []
        for cam in cameras:
            center, dirs = SyntheticService.pixel_rays(cam)
            corners = dirs[[0, 0, -1, -1], [0, -1, 0, -1]]
            t = (spec.wall_distance - center[2]) / corners[:, 2]
            footprints.append(center + t[:, None] * corners)
        footprints = np.concatenate(footprints)
        low, high = footprints[:, :2].min(axis=0), footprints[:, :2].max(axis=0)
        rng = np.random.default_rng([spec.wall_seed, 2])
        xy = rng.uniform(low, high, size=(spec.n_points, 2))
        points = np.column_stack([xy, np.full(spec.n_points, spec.wall_distance)])
        return points, wall(xy[:, 0], xy[:, 1])

    @staticmethod
    def generate_synthetic_mirror_scene(spec: SyntheticSceneSpec) -> SyntheticScene:
        """
        生成纹理墙面 + 平面镜 + 相机后方纹理物体的合成场景

        image = diffuse + mask · reflection_strength · mirrored（float32 精确成立，不做截断）；对 (spec, 种子) 确定
        """
        if spec.object_distance >= 0:
            raise DataError(f"被反射物体必须位于相机后方 (object_distance < 0): {spec.object_distance}")
        if spec.wall_distance <= 0:
            raise DataError(f"镜子位于所有相机后方 (wall_distance <= 0): {spec.wall_distance}")

        cameras = SyntheticService.make_cameras(spec)
        fully_visible = [SyntheticService.mirror_fully_visible(spec, cam) for cam in cameras]
        if 2 * sum(fully_visible) < spec.n_views:
            raise DataError(
                f"镜子仅在 {sum(fully_visible)}/{spec.n_views} 个视角中完整可见，至少需要一半",
                {"fully_visible": fully_visible},
            )

        wall = ProceduralTexture(spec.wall_seed, *WALL_TEXTURE_RANGE)
        obj = ProceduralTexture(spec.object_seed, 0.0, 1.0)
        images, masks, diffuses, mirrors = [], [], [], []
        for cam in cameras:
            diffuse, mirrored, mask = SyntheticService.render_view(spec, cam, wall, obj)
            diffuse, mirrored = diffuse.astype(np.float32), mirrored.astype(np.float32)
            images.append(diffuse + mask[..., None] * np.float32(spec.reflection_strength) * mirrored)
            diffuses.append(diffuse)
            mirrors.append(mirrored)
            masks.append(mask)

        points, colors = SyntheticService.sample_wall_points(spec, cameras, wall)
        dataset = Dataset(cameras=cameras, images=images, points=points, point_colors=colors, name=spec.name)
        dataset.validate()
        logging.info(f"合成场景已生成: {spec.n_views} 个视角, {spec.resolution[0]}x{spec.resolution[1]}, "
                     f"镜面完整可见 {sum(fully_visible)} 个")
        return SyntheticScene(spec=spec, dataset=dataset, masks=masks, diffuse=diffuses,
                              mirrored=mirrors, fully_visible=fully_visible)

    @staticmethod
    def save_synthetic_scene(scene: SyntheticScene, out_dir: str) -> None:
        """写出 sparse/0/*.txt、images/*.png、masks/*.png 与 scene.json"""
        dataset = scene.dataset
        ColmapService.save_colmap(dataset, os.path.join(out_dir, "sparse", "0"), ".txt")
        for name, image, mask in zip(dataset.image_names, dataset.images, scene.masks):
            ImageService.write_image(image, os.path.join(out_dir, "images", name))
            ImageService.write_image(mask.astype(np.float64), os.path.join(out_dir, "masks", name))
        record = {"spec": scene.spec.model_dump(mode="json"), "fully_visible": scene.fully_visible}
        with open(os.path.join(out_dir, "scene.json"), "w", encoding="utf-8") as f:
            json.dump(record, f, ensure_ascii=False, indent=2)
        logging.info(f"合成场景已写出: {out_dir}")

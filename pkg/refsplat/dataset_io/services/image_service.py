import os
import logging
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np
from PIL import Image

from refsplat.projection.schemes.camera import Camera
from refsplat.utils.exceptions import DataError

DEFAULT_TARGET_SIZE = (1296, 864)  # (宽, 高)


class ImageService:
    """图像读写与预处理"""

    @staticmethod
    def read_image(path: str) -> np.ndarray:
        """读取 PNG/JPEG，返回 (H, W, 3) float32，取值 [0, 1]"""
        if not os.path.isfile(path):
            raise DataError(f"图像文件不存在: {path}")
        try:
            with Image.open(path) as img:
                rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
        except (OSError, ValueError) as e:
            logging.error(f"读取图像失败 {path}: {e}")
            raise DataError(f"读取图像失败 {path}: {e}") from e
        return rgb / 255.0

    @staticmethod
    def to_uint8(image: np.ndarray) -> np.ndarray:
        return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)

    @staticmethod
    def write_image(image: np.ndarray, path: str) -> None:
        """写 8 位 PNG；(H, W) 写灰度，(H, W, 3) 写 RGB"""
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        data = ImageService.to_uint8(image)
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[..., 0]
        Image.fromarray(data).save(path)

    @staticmethod
    def resize_area(image: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
        """面积平均重采样到 size=(宽, 高)，尺寸相同时原样返回"""
        width, height = size
        if image.shape[1] == width and image.shape[0] == height:
            return image
        resized = cv2.resize(image.astype(np.float32), (width, height), interpolation=cv2.INTER_AREA)
        return np.clip(resized, 0.0, 1.0).astype(np.float32)

    @staticmethod
    def preprocess(images: Sequence[np.ndarray], target: Tuple[int, int] = DEFAULT_TARGET_SIZE) -> List[np.ndarray]:
        return [ImageService.resize_area(image, target) for image in images]

    @staticmethod
    def rescale_cameras(cameras: Sequence[Camera], target: Tuple[int, int]) -> List[Camera]:
        width, height = target
        return [cam.scaled(width, height) for cam in cameras]

    @staticmethod
    def preprocess_dataset(dataset, target: Optional[Tuple[int, int]] = DEFAULT_TARGET_SIZE):
        """把数据集所有图像与相机缩放到 target；target 为 None 时不处理"""
        if target is None:
            return dataset
        dataset.images = ImageService.preprocess(dataset.images, target)
        dataset.cameras = ImageService.rescale_cameras(dataset.cameras, target)
        logging.info(f"图像已重采样到 {target[0]}x{target[1]}")
        return dataset

import os
import struct
import logging
import collections
from typing import Dict, Tuple

import numpy as np

from refsplat.dataset_io.schemes.dataset import Dataset
from refsplat.dataset_io.services.image_service import ImageService
from refsplat.projection.schemes.camera import Camera
from refsplat.utils.exceptions import DataError, InvalidArgumentError, UnsupportedCameraModelError

CameraModel = collections.namedtuple("CameraModel", ["model_id", "model_name", "num_params"])
ColmapCamera = collections.namedtuple("ColmapCamera", ["id", "model", "width", "height", "params"])
ColmapImage = collections.namedtuple(
    "ColmapImage", ["id", "qvec", "tvec", "camera_id", "name", "xys", "point3d_ids"]
)
ColmapPoint3D = collections.namedtuple(
    "ColmapPoint3D", ["id", "xyz", "rgb", "error", "image_ids", "point2d_idxs"]
)

CAMERA_MODELS = {
    CameraModel(model_id=0, model_name="SIMPLE_PINHOLE", num_params=3),
    CameraModel(model_id=1, model_name="PINHOLE", num_params=4),
    CameraModel(model_id=2, model_name="SIMPLE_RADIAL", num_params=4),
    CameraModel(model_id=3, model_name="RADIAL", num_params=5),
    CameraModel(model_id=4, model_name="OPENCV", num_params=8),
    CameraModel(model_id=5, model_name="OPENCV_FISHEYE", num_params=8),
    CameraModel(model_id=6, model_name="FULL_OPENCV", num_params=12),
    CameraModel(model_id=7, model_name="FOV", num_params=5),
    CameraModel(model_id=8, model_name="SIMPLE_RADIAL_FISHEYE", num_params=4),
    CameraModel(model_id=9, model_name="RADIAL_FISHEYE", num_params=5),
    CameraModel(model_id=10, model_name="THIN_PRISM_FISHEYE", num_params=12),
}
CAMERA_MODEL_IDS = {model.model_id: model for model in CAMERA_MODELS}
CAMERA_MODEL_NAMES = {model.model_name: model for model in CAMERA_MODELS}

SUPPORTED_MODELS = ("SIMPLE_PINHOLE", "PINHOLE", "SIMPLE_RADIAL")


def read_next_bytes(fid, num_bytes: int, format_char_sequence: str, endian_character: str = "<"):
    """读取并解包下一段字节"""
    data = fid.read(num_bytes)
    if len(data) != num_bytes:
        raise DataError(f"二进制模型文件意外结束 (期望 {num_bytes} 字节, 实际 {len(data)})")
    return struct.unpack(endian_character + format_char_sequence, data)


def write_next_bytes(fid, data, format_char_sequence: str, endian_character: str = "<") -> None:
    if isinstance(data, (list, tuple)):
        fid.write(struct.pack(endian_character + format_char_sequence, *data))
    else:
        fid.write(struct.pack(endian_character + format_char_sequence, data))


def qvec2rotmat(qvec) -> np.ndarray:
    """四元数 (w, x, y, z) -> 旋转矩阵"""
    return np.array([
        [1 - 2 * qvec[2] ** 2 - 2 * qvec[3] ** 2,
         2 * qvec[1] * qvec[2] - 2 * qvec[0] * qvec[3],
         2 * qvec[3] * qvec[1] + 2 * qvec[0] * qvec[2]],
        [2 * qvec[1] * qvec[2] + 2 * qvec[0] * qvec[3],
         1 - 2 * qvec[1] ** 2 - 2 * qvec[3] ** 2,
         2 * qvec[2] * qvec[3] - 2 * qvec[0] * qvec[1]],
        [2 * qvec[3] * qvec[1] - 2 * qvec[0] * qvec[2],
         2 * qvec[2] * qvec[3] + 2 * qvec[0] * qvec[1],
         1 - 2 * qvec[1] ** 2 - 2 * qvec[2] ** 2],
    ])


def rotmat2qvec(rotation) -> np.ndarray:
    rxx, ryx, rzx, rxy, ryy, rzy, rxz, ryz, rzz = np.asarray(rotation, dtype=np.float64).flat
    k = np.array([
        [rxx - ryy - rzz, 0, 0, 0],
        [ryx + rxy, ryy - rxx - rzz, 0, 0],
        [rzx + rxz, rzy + ryz, rzz - rxx - ryy, 0],
        [ryz - rzy, rzx - rxz, rxy - ryx, rxx + ryy + rzz],
    ]) / 3.0
    eigvals, eigvecs = np.linalg.eigh(k)
    qvec = eigvecs[np.array([3, 0, 1, 2]), np.argmax(eigvals)]
    if qvec[0] < 0:
        qvec *= -1
    return qvec


# ------------------------------ 文本格式 ------------------------------
def _data_lines(path: str):
    with open(path, "r", encoding="utf-8") as fid:
        for line in fid:
            line = line.strip()
            if line and not line.startswith("#"):
                yield line


def read_cameras_text(path: str) -> Dict[int, ColmapCamera]:
    cameras = {}
    for line in _data_lines(path):
        elems = line.split()
        camera_id = int(elems[0])
        cameras[camera_id] = ColmapCamera(
            id=camera_id, model=elems[1], width=int(elems[2]), height=int(elems[3]),
            params=np.array(tuple(map(float, elems[4:]))),
        )
    return cameras


def read_images_text(path: str) -> Dict[int, ColmapImage]:
    images = {}
    with open(path, "r", encoding="utf-8") as fid:
        lines = [line.rstrip("\n") for line in fid if not line.startswith("#")]
    # 每张图两行：位姿行 + 2D 点行（可为空）
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if not line:
            i += 1
            continue
        elems = line.split()
        image_id = int(elems[0])
        points_line = lines[i + 1].split() if i + 1 < len(lines) else []
        xys = np.column_stack([tuple(map(float, points_line[0::3])), tuple(map(float, points_line[1::3]))]) \
            if points_line else np.zeros((0, 2))
        images[image_id] = ColmapImage(
            id=image_id,
            qvec=np.array(tuple(map(float, elems[1:5]))),
            tvec=np.array(tuple(map(float, elems[5:8]))),
            camera_id=int(elems[8]),
            name=" ".join(elems[9:]),
            xys=xys,
            point3d_ids=np.array(tuple(map(int, points_line[2::3])), dtype=np.int64),
        )
        i += 2
    return images


def read_points3d_text(path: str) -> Dict[int, ColmapPoint3D]:
    points = {}
    for line in _data_lines(path):
        elems = line.split()
        point_id = int(elems[0])
        points[point_id] = ColmapPoint3D(
            id=point_id,
            xyz=np.array(tuple(map(float, elems[1:4]))),
            rgb=np.array(tuple(map(int, elems[4:7]))),
            error=float(elems[7]),
            image_ids=np.array(tuple(map(int, elems[8::2])), dtype=np.int64),
            point2d_idxs=np.array(tuple(map(int, elems[9::2])), dtype=np.int64),
        )
    return points


def write_cameras_text(cameras: Dict[int, ColmapCamera], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fid:
        fid.write("# Camera list with one line of data per camera:\n")
        fid.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        fid.write(f"# Number of cameras: {len(cameras)}\n")
        for cam in cameras.values():
            params = " ".join(repr(float(p)) for p in cam.params)
            fid.write(f"{cam.id} {cam.model} {cam.width} {cam.height} {params}\n")


def write_images_text(images: Dict[int, ColmapImage], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fid:
        fid.write("# Image list with two lines of data per image:\n")
        fid.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        fid.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for img in images.values():
            pose = " ".join(repr(float(v)) for v in list(img.qvec) + list(img.tvec))
            fid.write(f"{img.id} {pose} {img.camera_id} {img.name}\n")
            points = " ".join(f"{repr(float(xy[0]))} {repr(float(xy[1]))} {int(pid)}"
                              for xy, pid in zip(img.xys, img.point3d_ids))
            fid.write(points + "\n")


def write_points3d_text(points: Dict[int, ColmapPoint3D], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fid:
        fid.write("# 3D point list with one line of data per point:\n")
        fid.write("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n")
        for pt in points.values():
            xyz = " ".join(repr(float(v)) for v in pt.xyz)
            rgb = " ".join(str(int(v)) for v in pt.rgb)
            track = " ".join(f"{int(a)} {int(b)}" for a, b in zip(pt.image_ids, pt.point2d_idxs))
            fid.write(f"{pt.id} {xyz} {rgb} {repr(float(pt.error))} {track}".rstrip() + "\n")


# ------------------------------ 二进制格式 ------------------------------
def read_cameras_binary(path: str) -> Dict[int, ColmapCamera]:
    cameras = {}
    with open(path, "rb") as fid:
        num_cameras = read_next_bytes(fid, 8, "Q")[0]
        for _ in range(num_cameras):
            camera_id, model_id, width, height = read_next_bytes(fid, 24, "iiQQ")
            if model_id not in CAMERA_MODEL_IDS:
                raise UnsupportedCameraModelError(f"model_id={model_id}")
            model = CAMERA_MODEL_IDS[model_id]
            params = read_next_bytes(fid, 8 * model.num_params, "d" * model.num_params)
            cameras[camera_id] = ColmapCamera(
                id=camera_id, model=model.model_name, width=width, height=height, params=np.array(params),
            )
    return cameras


def read_images_binary(path: str) -> Dict[int, ColmapImage]:
    images = {}
    with open(path, "rb") as fid:
        num_reg_images = read_next_bytes(fid, 8, "Q")[0]
        for _ in range(num_reg_images):
            props = read_next_bytes(fid, 64, "idddddddi")
            name = b""
            current_char = read_next_bytes(fid, 1, "c")[0]
            while current_char != b"\x00":
                name += current_char
                current_char = read_next_bytes(fid, 1, "c")[0]
            num_points2d = read_next_bytes(fid, 8, "Q")[0]
            x_y_id_s = read_next_bytes(fid, 24 * num_points2d, "ddq" * num_points2d)
            images[props[0]] = ColmapImage(
                id=props[0],
                qvec=np.array(props[1:5]),
                tvec=np.array(props[5:8]),
                camera_id=props[8],
                name=name.decode("utf-8"),
                xys=np.column_stack([tuple(map(float, x_y_id_s[0::3])), tuple(map(float, x_y_id_s[1::3]))])
                if num_points2d else np.zeros((0, 2)),
                point3d_ids=np.array(tuple(map(int, x_y_id_s[2::3])), dtype=np.int64),
            )
    return images


def read_points3d_binary(path: str) -> Dict[int, ColmapPoint3D]:
    points = {}
    with open(path, "rb") as fid:
        num_points = read_next_bytes(fid, 8, "Q")[0]
        for _ in range(num_points):
            props = read_next_bytes(fid, 43, "QdddBBBd")
            track_length = read_next_bytes(fid, 8, "Q")[0]
            track = read_next_bytes(fid, 8 * track_length, "ii" * track_length)
            points[props[0]] = ColmapPoint3D(
                id=props[0],
                xyz=np.array(props[1:4]),
                rgb=np.array(props[4:7]),
                error=props[7],
                image_ids=np.array(tuple(map(int, track[0::2])), dtype=np.int64),
                point2d_idxs=np.array(tuple(map(int, track[1::2])), dtype=np.int64),
            )
    return points


def write_cameras_binary(cameras: Dict[int, ColmapCamera], path: str) -> None:
    with open(path, "wb") as fid:
        write_next_bytes(fid, len(cameras), "Q")
        for cam in cameras.values():
            model = CAMERA_MODEL_NAMES[cam.model]
            write_next_bytes(fid, [cam.id, model.model_id, cam.width, cam.height], "iiQQ")
            write_next_bytes(fid, [float(p) for p in cam.params], "d" * len(cam.params))


def write_images_binary(images: Dict[int, ColmapImage], path: str) -> None:
    with open(path, "wb") as fid:
        write_next_bytes(fid, len(images), "Q")
        for img in images.values():
            write_next_bytes(fid, [img.id] + [float(v) for v in img.qvec] + [float(v) for v in img.tvec]
                             + [img.camera_id], "idddddddi")
            fid.write(img.name.encode("utf-8") + b"\x00")
            write_next_bytes(fid, len(img.point3d_ids), "Q")
            for xy, pid in zip(img.xys, img.point3d_ids):
                write_next_bytes(fid, [float(xy[0]), float(xy[1]), int(pid)], "ddq")


def write_points3d_binary(points: Dict[int, ColmapPoint3D], path: str) -> None:
    with open(path, "wb") as fid:
        write_next_bytes(fid, len(points), "Q")
        for pt in points.values():
            write_next_bytes(fid, [pt.id] + [float(v) for v in pt.xyz] + [int(v) for v in pt.rgb]
                             + [float(pt.error)], "QdddBBBd")
            write_next_bytes(fid, len(pt.image_ids), "Q")
            for image_id, point2d_idx in zip(pt.image_ids, pt.point2d_idxs):
                write_next_bytes(fid, [int(image_id), int(point2d_idx)], "ii")


# ------------------------------ 模型目录 ------------------------------
MODEL_FILES = ("cameras", "images", "points3D")


def detect_model_format(path: str, ext: str) -> bool:
    return all(os.path.isfile(os.path.join(path, name + ext)) for name in MODEL_FILES)


def read_model(path: str) -> Tuple[Dict[int, ColmapCamera], Dict[int, ColmapImage], Dict[int, ColmapPoint3D]]:
    """读取稀疏模型，优先二进制"""
    if detect_model_format(path, ".bin"):
        return (read_cameras_binary(os.path.join(path, "cameras.bin")),
                read_images_binary(os.path.join(path, "images.bin")),
                read_points3d_binary(os.path.join(path, "points3D.bin")))
    if detect_model_format(path, ".txt"):
        return (read_cameras_text(os.path.join(path, "cameras.txt")),
                read_images_text(os.path.join(path, "images.txt")),
                read_points3d_text(os.path.join(path, "points3D.txt")))
    raise DataError(f"目录中缺少稀疏模型文件 (cameras/images/points3D .bin 或 .txt): {path}")


def write_model(cameras, images, points, path: str, ext: str = ".txt") -> None:
    os.makedirs(path, exist_ok=True)
    if ext == ".bin":
        write_cameras_binary(cameras, os.path.join(path, "cameras.bin"))
        write_images_binary(images, os.path.join(path, "images.bin"))
        write_points3d_binary(points, os.path.join(path, "points3D.bin"))
    elif ext == ".txt":
        write_cameras_text(cameras, os.path.join(path, "cameras.txt"))
        write_images_text(images, os.path.join(path, "images.txt"))
        write_points3d_text(points, os.path.join(path, "points3D.txt"))
    else:
        logging.error(f"未知的模型格式: {ext}")
        raise InvalidArgumentError(f"未知的模型格式: {ext}")


class ColmapService:
    """SfM 稀疏模型 <-> Dataset"""

    @staticmethod
    def find_sparse_dir(data_dir: str) -> str:
        for candidate in (os.path.join(data_dir, "sparse", "0"), os.path.join(data_dir, "sparse"), data_dir):
            if detect_model_format(candidate, ".bin") or detect_model_format(candidate, ".txt"):
                return candidate
        raise DataError(f"未找到稀疏模型目录: {data_dir}")

    @staticmethod
    def to_pinhole(cam: ColmapCamera) -> Tuple[float, float, float, float]:
        """相机模型 -> (fx, fy, cx, cy)"""
        if cam.model not in SUPPORTED_MODELS:
            raise UnsupportedCameraModelError(cam.model)
        p = cam.params
        if cam.model == "SIMPLE_PINHOLE":
            return p[0], p[0], p[1], p[2]
        if cam.model == "PINHOLE":
            return p[0], p[1], p[2], p[3]
        logging.warning(f"相机 {cam.id} 为 SIMPLE_RADIAL，忽略畸变参数 k={p[3]}")
        return p[0], p[0], p[1], p[2]

    @staticmethod
    def load_colmap(data_dir: str, images_dir: str = None) -> Dataset:
        """
        读取 SfM 模型与图像，返回未划分的数据集

        Args:
            data_dir: 数据目录，稀疏模型位于 sparse/0、sparse 或其本身
            images_dir: 图像目录，默认 data_dir/images
        """
        if not os.path.isdir(data_dir):
            raise DataError(f"数据目录不存在: {data_dir}")
        sparse_dir = ColmapService.find_sparse_dir(data_dir)
        images_dir = images_dir or os.path.join(data_dir, "images")
        try:
            colmap_cameras, colmap_images, colmap_points = read_model(sparse_dir)
        except (ValueError, IndexError, struct.error) as e:
            logging.error(f"解析稀疏模型失败: {e}")
            raise DataError(f"解析稀疏模型失败: {e}") from e

        if not colmap_points:
            raise DataError(f"稀疏点为空: {sparse_dir}")

        cameras, images = [], []
        for img in sorted(colmap_images.values(), key=lambda item: item.name):
            if img.camera_id not in colmap_cameras:
                raise DataError(f"图像 {img.name} 引用了不存在的相机 {img.camera_id}")
            colmap_cam = colmap_cameras[img.camera_id]
            fx, fy, cx, cy = ColmapService.to_pinhole(colmap_cam)
            cameras.append(Camera(
                fx=float(fx), fy=float(fy), cx=float(cx), cy=float(cy),
                width=int(colmap_cam.width), height=int(colmap_cam.height),
                rotation=qvec2rotmat(img.qvec).tolist(),
                translation=[float(v) for v in img.tvec],
                image_name=img.name,
            ))
            images.append(ImageService.read_image(os.path.join(images_dir, img.name)))

        ordered = sorted(colmap_points.values(), key=lambda item: item.id)
        points = np.stack([pt.xyz for pt in ordered]).astype(np.float64)
        colors = np.stack([pt.rgb for pt in ordered]).astype(np.float64) / 255.0

        dataset = Dataset(
            cameras=cameras,
            images=images,
            points=points,
            point_colors=colors,
            name=os.path.basename(os.path.normpath(data_dir)),
        )
        logging.info(f"数据集已加载: {len(cameras)} 个相机, {len(points)} 个稀疏点 ({sparse_dir})")
        return dataset

    @staticmethod
    def save_colmap(dataset: Dataset, sparse_dir: str, ext: str = ".txt") -> None:
        """以 PINHOLE 相机写出稀疏模型（每张图一个相机）"""
        cameras, images = {}, {}
        for i, (cam, name) in enumerate(zip(dataset.cameras, dataset.image_names), start=1):
            cameras[i] = ColmapCamera(id=i, model="PINHOLE", width=cam.width, height=cam.height,
                                      params=np.array([cam.fx, cam.fy, cam.cx, cam.cy]))
            images[i] = ColmapImage(id=i, qvec=rotmat2qvec(cam.rotation), tvec=np.array(cam.translation),
                                    camera_id=i, name=name, xys=np.zeros((0, 2)),
                                    point3d_ids=np.zeros(0, dtype=np.int64))
        rgb = np.clip(np.round(dataset.point_colors * 255.0), 0, 255).astype(np.int64)
        points = {
            i: ColmapPoint3D(id=i, xyz=dataset.points[i - 1], rgb=rgb[i - 1], error=0.0,
                             image_ids=np.zeros(0, dtype=np.int64), point2d_idxs=np.zeros(0, dtype=np.int64))
            for i in range(1, len(dataset.points) + 1)
        }
        write_model(cameras, images, points, sparse_dir, ext)
        logging.info(f"稀疏模型已写出: {sparse_dir} ({ext})")

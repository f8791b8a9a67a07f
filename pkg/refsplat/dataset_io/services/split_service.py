import os
import json
import logging

import numpy as np

from refsplat.dataset_io.schemes.dataset import Dataset, TEST, TRAIN
from refsplat.utils.exceptions import DataError, SplitMissingError

TEST_EVERY = 8
SPLIT_FILE = "split.json"


class SplitService:
    """训练/测试划分"""

    @staticmethod
    def split_train_test(dataset: Dataset, seed: int) -> Dataset:
        """
        按种子打乱后每 8 张取 1 张作为测试集

        打乱序列中位置 i 满足 i % 8 == 7 的图像标记为 test；少于 8 张时全部为 train
        """
        n = len(dataset.cameras)
        split = [TRAIN] * n
        if n < TEST_EVERY:
            logging.warning(f"图像数 {n} 少于 {TEST_EVERY}，全部用于训练，测试集为空")
        else:
            order = np.random.default_rng(seed).permutation(n)
            for position, index in enumerate(order):
                if position % TEST_EVERY == TEST_EVERY - 1:
                    split[int(index)] = TEST
        dataset.split = split
        dataset.split_seed = seed
        logging.info(f"数据划分完成 (seed={seed}): 训练 {split.count(TRAIN)} 张, 测试 {split.count(TEST)} 张")
        return dataset

    @staticmethod
    def save_split(dataset: Dataset, out_dir: str) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, SPLIT_FILE)
        names = dataset.image_names
        record = {
            "seed": dataset.split_seed,
            "train": [names[i] for i in dataset.train_indices()],
            "test": [names[i] for i in dataset.test_indices()],
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(record, f, ensure_ascii=False, indent=2)
        return path

    @staticmethod
    def load_split(dataset: Dataset, run_dir: str) -> Dataset:
        """按训练时记录的划分重新打标签"""
        path = os.path.join(run_dir, SPLIT_FILE)
        if not os.path.isfile(path):
            raise SplitMissingError(
                f"未找到划分记录 {path}，请用训练时的 --seed 重新划分后再评估",
                {"path": path},
            )
        with open(path, "r", encoding="utf-8") as f:
            record = json.load(f)
        tags = {name: TRAIN for name in record.get("train", [])}
        tags.update({name: TEST for name in record.get("test", [])})
        missing = [name for name in dataset.image_names if name not in tags]
        if missing:
            raise DataError(f"划分记录与数据集不一致，缺少 {len(missing)} 张图像", {"missing": missing[:10]})
        dataset.split = [tags[name] for name in dataset.image_names]
        dataset.split_seed = record.get("seed")
        return dataset

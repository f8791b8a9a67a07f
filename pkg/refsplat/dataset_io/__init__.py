"""数据集读写、划分、PLY 与合成场景"""

"""Adam 训练循环与自适应增密"""

"""EWA 投影：3D 高斯到屏幕空间"""

"""训练目标：光度、初始对齐与平滑正则"""

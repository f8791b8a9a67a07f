"""反射感知的可微高斯泼溅引擎"""

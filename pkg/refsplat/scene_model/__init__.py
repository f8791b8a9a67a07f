"""高斯点云表示：参数、激活与球谐着色"""

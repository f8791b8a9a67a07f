"""分块双分支光栅化与反向"""

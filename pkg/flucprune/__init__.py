"""flucprune：基于激活波动的结构化剪枝（偏置补偿 + 多领域混合校准 + 迭代重校准）。"""
__version__ = "0.1.0"

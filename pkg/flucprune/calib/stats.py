"""
calib/stats.py
逐通道的流式均值 / 方差（Welford），以及 Chan 的并行合并。

每个 (样本, token) 位置算一次观测，方差使用 n-1 分母。
内部一律 float64。
"""
from __future__ import annotations
from dataclasses import dataclass

import numpy as np

from ..core.errors import InsufficientDataError, ShapeError
from ..core.model import ActivationTap
from ..core.tensor import Tensor2


@dataclass(frozen=True, slots=True, eq=False)
class ChannelStats:
    count: int
    mean: np.ndarray   # (width,) float64
    m2: np.ndarray     # (width,) float64，偏差平方和

    @staticmethod
    def empty(width: int) -> "ChannelStats":
        return ChannelStats(0, np.zeros(width, dtype=np.float64), np.zeros(width, dtype=np.float64))

    @property
    def width(self) -> int:
        return self.mean.shape[0]

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            raise InsufficientDataError(f"方差至少需要 2 个观测，当前 count={self.count}")
        return np.maximum(self.m2, 0.0) / (self.count - 1)

    def update(self, row: np.ndarray) -> "ChannelStats":
        """单行 Welford 更新。"""
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (self.width,):
            raise ShapeError(f"行宽 {row.shape} 与统计宽度 {self.width} 不一致")
        n = self.count + 1
        delta = row - self.mean
        mean = self.mean + delta / n
        return ChannelStats(n, mean, self.m2 + delta * (row - mean))


def merge(a: ChannelStats, b: ChannelStats) -> ChannelStats:
    """并行 Welford 合并：等价于按顺序累加两段拼接后的流。"""
    if a.width != b.width:
        raise ShapeError(f"合并宽度不一致: {a.width} vs {b.width}")
    if b.count == 0:
        return ChannelStats(a.count, a.mean.copy(), a.m2.copy())
    if a.count == 0:
        return ChannelStats(b.count, b.mean.copy(), b.m2.copy())
    n = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / n)
    m2 = a.m2 + b.m2 + delta * delta * (a.count * b.count / n)
    return ChannelStats(n, mean, m2)


def accumulate(stats: ChannelStats, tap: ActivationTap | Tensor2 | np.ndarray) -> ChannelStats:
    """把一个 tap 的所有 token 行逐行做 Welford 更新，count 增加 token 行数。"""
    if isinstance(tap, ActivationTap):
        values = tap.values.data
    elif isinstance(tap, Tensor2):
        values = tap.data
    else:
        values = np.asarray(tap)
    if values.ndim != 2 or values.shape[1] != stats.width:
        raise ShapeError(f"tap 宽度 {values.shape} 与统计宽度 {stats.width} 不一致")
    for row in np.asarray(values, dtype=np.float64):
        stats = stats.update(row)
    return stats

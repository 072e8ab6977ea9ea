"""
core/rng.py
确定性随机数：PCG64 位生成器 + Box–Muller 正态变换。

只用到 PCG64 的原始 64 位输出（numpy 保证跨平台、跨版本稳定），
均匀数取高 53 位，正态数由本模块自己用 Box–Muller 生成，不依赖 numpy 的 ziggurat 实现。
"""
from __future__ import annotations
import math
import zlib

import numpy as np

from .errors import ConfigError
from .tensor import Tensor2


def _key_to_int(key: int | str) -> int:
    if isinstance(key, int):
        if key < 0:
            raise ConfigError(f"派生键必须非负: {key}")
        return key
    return zlib.crc32(key.encode("utf-8"))


class Rng:
    """可派生子流的确定性随机源。同一 seed（及派生键）在任何平台上产生同一序列。"""

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        if seed < 0:
            raise ConfigError(f"seed 必须非负: {seed}")
        self.seed = seed
        self.spawn_key = spawn_key
        self._bitgen = np.random.PCG64(np.random.SeedSequence(seed, spawn_key=spawn_key))

    @property
    def state(self) -> dict:
        return self._bitgen.state

    def derive(self, *keys: int | str) -> "Rng":
        """派生独立子流，例如 rng.derive("calib", "wiki")。不推进当前流。"""
        return Rng(self.seed, self.spawn_key + tuple(_key_to_int(k) for k in keys))

    def uniform(self, n: int) -> np.ndarray:
        """n 个 [0, 1) 上的 float64，取每个 64 位输出的高 53 位。"""
        raw = self._bitgen.random_raw(n)
        return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def integers(self, high: int, n: int) -> np.ndarray:
        """n 个 [0, high) 上的整数。"""
        if high <= 0:
            raise ConfigError(f"integers 上界必须为正: {high}")
        return np.minimum(np.floor(self.uniform(n) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def normal(self, n: int) -> np.ndarray:
        """n 个标准正态 float64（Box–Muller，成对生成，奇数时丢弃最后一个）。"""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))  # 1-u ∈ (0, 1]
        theta = 2.0 * math.pi * u[:, 1]
        z = np.empty((pairs, 2), dtype=np.float64)
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.ravel()[:n]


def rand_normal(rng: Rng, rows: int, cols: int, stddev: float) -> Tensor2:
    """rows x cols 的 N(0, stddev²) 矩阵。stddev=0 时全为 +0.0（随机流仍然推进）。"""
    if stddev < 0:
        raise ConfigError(f"stddev 必须 >= 0: {stddev}")
    z = rng.normal(rows * cols) * stddev + 0.0
    return Tensor2(z.reshape(rows, cols))

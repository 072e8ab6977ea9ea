"""
core/tensor.py
稠密二维张量 Tensor2 及其基本运算。

约定：
- 存储一律为 C 连续的 float32（row-major）
- 矩阵乘法内积在 float64 中累加，最后只舍入一次到 float32
- 所有公开运算的结果都必须是有限值（NaN/Inf 直接报错）
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .const import RMS_EPS
from .errors import NumericsError, ShapeError


@dataclass(frozen=True, slots=True, eq=False)
class Tensor2:
    """rows x cols 的 float32 矩阵，只读。"""
    data: np.ndarray

    def __post_init__(self):
        src = self.data
        arr = np.asarray(src, dtype=np.float32)
        if arr is src or not arr.flags.c_contiguous:
            arr = np.array(arr, dtype=np.float32, order="C")
        if arr.ndim != 2:
            raise ShapeError(f"Tensor2 需要二维数据，得到 shape={arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericsError(f"Tensor2 含有非有限值，shape={arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    # ---------- 构造 ----------
    @staticmethod
    def zeros(rows: int, cols: int) -> "Tensor2":
        return Tensor2(np.zeros((rows, cols), dtype=np.float32))

    @staticmethod
    def identity(n: int) -> "Tensor2":
        return Tensor2(np.eye(n, dtype=np.float32))

    @staticmethod
    def from_rows(rows: Sequence[Iterable[float]]) -> "Tensor2":
        return Tensor2(np.array([list(r) for r in rows], dtype=np.float32))

    @staticmethod
    def from_flat(rows: int, cols: int, flat: Sequence[float] | np.ndarray) -> "Tensor2":
        flat = np.asarray(flat, dtype=np.float32).ravel()
        if flat.size != rows * cols:
            raise ShapeError(f"数据长度 {flat.size} != rows*cols = {rows}*{cols}")
        return Tensor2(flat.reshape(rows, cols))

    # ---------- 属性 ----------
    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    @property
    def T(self) -> "Tensor2":
        return Tensor2(self.data.T)

    def equals(self, other: "Tensor2") -> bool:
        """逐位相等（包括形状）。"""
        return self.shape == other.shape and self.data.tobytes() == other.data.tobytes()

    def __repr__(self) -> str:
        return f"Tensor2({self.rows}x{self.cols})"


# =========================================================
# ndarray 层的实现（模型前向直接使用，避免反复包装）
# =========================================================

def mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b，float64 累加后舍入为 float32。支持批量（前导维度）。"""
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul 维度不匹配: {a.shape} x {b.shape}")
    return np.matmul(a.astype(np.float64), b.astype(np.float64)).astype(np.float32)


def linear_np(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """y = x · wᵀ + bias，其中 w 为 (out x in)。"""
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear 维度不匹配: x{x.shape} · w{w.shape}ᵀ")
    y = x.astype(np.float64) @ w.astype(np.float64).T
    if bias is not None:
        if bias.shape != (w.shape[0],):
            raise ShapeError(f"bias 长度 {bias.shape} 与输出宽度 {w.shape[0]} 不一致")
        y += bias.astype(np.float64)
    return y.astype(np.float32)


def softmax_rows_np(x: np.ndarray) -> np.ndarray:
    """按最后一维做 softmax，先减最大值。允许 -inf（因果掩码），但每行至少一个有限值。"""
    x64 = x.astype(np.float64)
    x64 = x64 - np.max(x64, axis=-1, keepdims=True)
    e = np.exp(x64)
    return (e / np.sum(e, axis=-1, keepdims=True)).astype(np.float32)


def rms_norm_np(x: np.ndarray, scale: np.ndarray, eps: float = RMS_EPS) -> np.ndarray:
    x64 = x.astype(np.float64)
    rms = np.sqrt(np.mean(x64 * x64, axis=-1, keepdims=True) + eps)
    return (x64 / rms * scale.astype(np.float64)).astype(np.float32)


def silu_np(x: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64)
    # x * sigmoid(x)，用 logaddexp 避免大负数溢出
    return (x64 * np.exp(-np.logaddexp(0.0, -x64))).astype(np.float32)


# =========================================================
# Tensor2 层的公开运算
# =========================================================

def matmul(a: Tensor2, b: Tensor2) -> Tensor2:
    if a.cols != b.rows:
        raise ShapeError(f"matmul 维度不匹配: {a.rows}x{a.cols} x {b.rows}x{b.cols}")
    return Tensor2(mm(a.data, b.data))


def rowwise_softmax(x: Tensor2) -> Tensor2:
    return Tensor2(softmax_rows_np(x.data))

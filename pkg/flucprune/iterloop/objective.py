"""
iterloop/objective.py
重建误差 E‖Y - Ŷ‖²（logits 上），以及逐层误差、字节级困惑度、收敛判据。
"""
from __future__ import annotations
import math
from typing import Sequence

import numpy as np

from ..core.errors import ConsistencyError, InputError
from ..core.model import Model, forward
from .iter_config import CONVERGENCE_EPS, IterationState


def _check_pair(original: Model, pruned: Model, batch: Sequence[np.ndarray]) -> None:
    if original.config.vocab != pruned.config.vocab:
        raise ConsistencyError(f"vocab 不一致: {original.config.vocab} vs {pruned.config.vocab}")
    if not batch:
        raise InputError("评估 batch 为空")


def reconstruction_error(original: Model, pruned: Model, eval_batch: Sequence[np.ndarray]) -> float:
    """每个 token 位置上 logits 差的平方和，对所有位置取平均。"""
    _check_pair(original, pruned, eval_batch)
    total, positions = 0.0, 0
    for seq in eval_batch:
        y, _ = forward(original, seq)
        y_hat, _ = forward(pruned, seq)
        diff = y.data.astype(np.float64) - y_hat.data.astype(np.float64)
        total += float(np.sum(diff * diff))
        positions += diff.shape[0]
    return total / positions


def layer_errors(original: Model, pruned: Model, eval_batch: Sequence[np.ndarray]) -> list[float]:
    """每个 block 之后残差流的均方差（按位置、特征平均）。仅作诊断。"""
    _check_pair(original, pruned, eval_batch)
    if len(original.blocks) != len(pruned.blocks):
        raise ConsistencyError("两个模型的 block 数不一致")
    sums = np.zeros(len(original.blocks))
    count = 0
    for seq in eval_batch:
        h_orig: list[np.ndarray] = []
        h_pruned: list[np.ndarray] = []
        forward(original, seq, hidden_out=h_orig)
        forward(pruned, seq, hidden_out=h_pruned)
        for b, (a, c) in enumerate(zip(h_orig, h_pruned)):
            d = a.astype(np.float64) - c.astype(np.float64)
            sums[b] += float(np.mean(d * d)) * d.shape[0]
        count += len(seq)
    return [float(s / count) for s in sums]


def perplexity(model: Model, batch: Sequence[np.ndarray]) -> float:
    """字节级下一 token 困惑度。长度为 1 的序列不贡献。"""
    nll, n = 0.0, 0
    for seq in batch:
        if len(seq) < 2:
            continue
        logits, _ = forward(model, seq[:-1])
        z = logits.data.astype(np.float64)
        z = z - z.max(axis=1, keepdims=True)
        log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        target = np.asarray(seq[1:], dtype=np.int64)
        nll -= float(log_probs[np.arange(target.size), target].sum())
        n += target.size
    if n == 0:
        raise InputError("困惑度至少需要一个长度 >= 2 的序列")
    return math.exp(nll / n)


def converged(state: IterationState | Sequence[float], tol: float) -> bool:
    """|e_s - e_{s-1}| / max(e_{s-1}, ε) < tol；不足两个值时为 False。"""
    trace = state.objective_trace if isinstance(state, IterationState) else list(state)
    if len(trace) < 2:
        return False
    prev, cur = trace[-2], trace[-1]
    return abs(cur - prev) / max(prev, CONVERGENCE_EPS) < tol

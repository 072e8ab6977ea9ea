"""
prune/scoring.py
波动分数：S_j = V_j · ‖W[:, j]‖²，W 为该 site 的消费矩阵（wo 或 w_down）。
注意力 site 的单位分数 = 该头 head_dim 个通道分数之和。
"""
from __future__ import annotations
from dataclasses import dataclass

import numpy as np

from ..calib.collect import MixedStats
from ..core.errors import InsufficientDataError, ShapeError
from ..core.model import Model, PruneSite


@dataclass(frozen=True, slots=True, eq=False)
class FluctuationScores:
    site: PruneSite
    units: tuple[int, ...]        # 存活单位的原始编号，与 per_unit 一一对应
    per_channel: np.ndarray
    per_unit: np.ndarray

    def summary(self) -> dict[str, float]:
        u = self.per_unit
        return {"min": float(u.min()), "mean": float(u.mean()), "max": float(u.max())}


def column_norms_sq(model: Model, site: PruneSite) -> np.ndarray:
    w = model.consuming_weight(site).data.astype(np.float64)
    return np.einsum("ij,ij->j", w, w)


def score(stats: MixedStats, model: Model, site: PruneSite) -> FluctuationScores:
    moments = stats[site]
    width = model.live_channels(site)
    if moments.variance.shape != (width,):
        raise ShapeError(f"site {site} 的统计宽度 {moments.variance.shape[0]} 与存活通道数 {width} 不一致")
    if moments.count < 2:
        raise InsufficientDataError(f"site {site} 的观测数 {moments.count} < 2")
    per_channel = moments.variance * column_norms_sq(model, site)
    units = model.live_units(site)
    per_unit = per_channel.reshape(len(units), model.unit_width(site)).sum(axis=1)
    return FluctuationScores(site, units, per_channel, per_unit)


def standardized(scores: FluctuationScores) -> np.ndarray:
    """site 内 z-score，用于跨 site 的全局排序。方差为 0 时全为 0。"""
    u = scores.per_unit
    std = u.std()
    if std == 0.0:
        return np.zeros_like(u)
    return (u - u.mean()) / std

"""
prune/compensate.py
偏置补偿与结构化裁剪。

B₀ = W · ((1 - m) ⊙ X̄)：被剪通道的基线激活折算进消费矩阵的输出 bias，
于是 W·X ≈ (m ⊙ W)·X + B₀，在被剪通道恒等于均值时严格相等。
"""
from __future__ import annotations
import logging
from dataclasses import dataclass

import numpy as np

from ..calib.collect import MixedStats
from ..core.const import SiteKind
from ..core.errors import ShapeError
from ..core.model import Model, PruneSite
from ..core.tensor import Tensor2
from .mask import PruneMask

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True, eq=False)
class BiasVector:
    site: PruneSite
    values: np.ndarray    # (C_out,) float64

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def channel_keep(model: Model, site: PruneSite, mask: PruneMask) -> np.ndarray:
    """把单位级掩码展开成当前存活通道上的 bool 向量。"""
    if mask.site != site:
        raise ShapeError(f"掩码属于 {mask.site}，不是 {site}")
    if len(mask.keep) != model.original_units(site):
        raise ShapeError(f"{site}: 掩码长度 {len(mask.keep)} 与原始单位数 {model.original_units(site)} 不一致")
    live = model.live_units(site)
    dead_kept = [u for u in mask.live_units if u not in set(live)]
    if dead_kept:
        raise ShapeError(f"{site}: 掩码保留了已被剪掉的单位 {dead_kept}")
    unit_keep = np.array([mask.keep[u] == 1 for u in live], dtype=bool)
    return np.repeat(unit_keep, model.unit_width(site))


def compensate(model: Model, site: PruneSite, mask: PruneMask, stats: MixedStats) -> BiasVector:
    keep = channel_keep(model, site, mask)
    mean = stats[site].mean
    if mean.shape != keep.shape:
        raise ShapeError(f"{site}: 统计宽度 {mean.shape[0]} 与存活通道数 {keep.shape[0]} 不一致")
    w = model.consuming_weight(site).data.astype(np.float64)
    return BiasVector(site, w @ np.where(keep, 0.0, mean))


def apply_prune(model: Model, site: PruneSite, mask: PruneMask, bias: BiasVector) -> Model:
    """物理删除被剪的行 / 列，并把 bias 加到消费矩阵的输出 bias 上。原地修改并返回 model。"""
    keep = channel_keep(model, site, mask)
    blk = model.block(site)
    if bias.site != site or bias.values.shape != (model.config.d_model,):
        raise ShapeError(f"{site}: bias 形状 {bias.values.shape} / site {bias.site} 不匹配")
    live_units = tuple(u for u in model.live_units(site) if mask.keep[u])

    if not keep.all():
        if site.kind == SiteKind.ATTN_HEADS:
            blk.wq = Tensor2(blk.wq.data[keep])
            blk.wk = Tensor2(blk.wk.data[keep])
            blk.wv = Tensor2(blk.wv.data[keep])
            blk.wo = Tensor2(blk.wo.data[:, keep])
            blk.live_heads = live_units
        else:
            blk.w_gate = Tensor2(blk.w_gate.data[keep])
            blk.w_up = Tensor2(blk.w_up.data[keep])
            blk.w_down = Tensor2(blk.w_down.data[:, keep])
            blk.live_channels = live_units

    if np.any(bias.values):
        if site.kind == SiteKind.ATTN_HEADS:
            blk.wo_bias = (blk.wo_bias.astype(np.float64) + bias.values).astype(np.float32)
        else:
            blk.down_bias = (blk.down_bias.astype(np.float64) + bias.values).astype(np.float32)

    logger.debug("%s: 保留 %d 个单位, |B0|=%.4g", site, len(live_units), bias.norm)
    return model

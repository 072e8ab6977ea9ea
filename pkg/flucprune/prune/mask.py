"""
prune/mask.py
剪枝掩码与比例分配。

掩码以 site 的原始单位编号为索引（1=保留），跨迭代只减不增。
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from ..core.errors import ConfigError, ShapeError
from ..core.model import Model, PruneSite, prunable_param_count, unit_param_count
from .scoring import FluctuationScores, standardized

logger = logging.getLogger(__name__)


class Allocation(Enum):
    UNIFORM = "uniform"   # 每个 site 同样的保留比例
    GLOBAL = "global"     # site 内 z-score 后全局排序


@dataclass(frozen=True, slots=True)
class PruneMask:
    site: PruneSite
    keep: tuple[int, ...]

    @staticmethod
    def full(site: PruneSite, n_units: int) -> "PruneMask":
        return PruneMask(site, (1,) * n_units)

    @staticmethod
    def from_model(model: Model, site: PruneSite) -> "PruneMask":
        """由模型当前的存活单位表得到掩码。"""
        keep = [0] * model.original_units(site)
        for u in model.live_units(site):
            keep[u] = 1
        return PruneMask(site, tuple(keep))

    @property
    def popcount(self) -> int:
        return sum(self.keep)

    @property
    def live_units(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.keep) if k)

    def is_subset_of(self, other: "PruneMask") -> bool:
        return len(self.keep) == len(other.keep) and all(a <= b for a, b in zip(self.keep, other.keep))


def select_mask(scores: FluctuationScores, target_live: int, prior: PruneMask) -> PruneMask:
    """在 prior 保留的单位中留下分数最高的 target_live 个；分数相同时编号小的先剪。"""
    if target_live < 1:
        raise ConfigError(f"{scores.site}: 目标存活数 {target_live} < 1，不允许清空一个 site")
    live = prior.live_units
    if tuple(scores.units) != live:
        raise ShapeError(f"{scores.site}: 分数对应的单位 {len(scores.units)} 个与 prior 的存活单位 {len(live)} 个不一致")
    if target_live > len(live):
        raise ConfigError(f"{scores.site}: 目标存活数 {target_live} 超过当前存活数 {len(live)}")
    # 按 (分数, 编号) 升序，前 n_drop 个剪掉
    order = np.lexsort((np.arange(len(live)), scores.per_unit))
    n_drop = len(live) - target_live
    keep = list(prior.keep)
    for local in order[:n_drop]:
        keep[live[local]] = 0
    return PruneMask(prior.site, tuple(keep))


def uniform_targets(model: Model, ratio: float) -> dict[PruneSite, int]:
    """每个 site 剪掉 floor(ratio·原始单位数) 个（向下取整，宁少勿多），至少留 1 个。"""
    targets = {}
    for site in model.sites():
        n = model.original_units(site)
        pruned = math.floor(ratio * n + 1e-9)
        targets[site] = max(1, min(n - pruned, len(model.live_units(site))))
    return targets


def global_targets(model: Model, scores: Mapping[PruneSite, FluctuationScores], ratio: float,
                   original_prunable: int) -> dict[PruneSite, int]:
    """
    全局分配：所有存活单位按 site 内 z-score 升序排列，依次剪除，
    直到可剪参数的累计减少量再多一个单位就会超过 ratio·original_prunable。
    """
    budget = ratio * original_prunable - (original_prunable - prunable_param_count(model))
    live = {site: len(model.live_units(site)) for site in model.sites()}
    candidates = []
    for order, site in enumerate(model.sites()):
        z = standardized(scores[site])
        candidates += [(float(z[i]), order, i, site) for i in range(len(z))]
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))

    targets = dict(live)
    removed = 0
    for _, _, _, site in candidates:
        cost = unit_param_count(model.config, site.kind)
        if targets[site] > 1 and removed + cost <= budget + 1e-9:
            targets[site] -= 1
            removed += cost
    return targets


def target_masks(model: Model, scores: Mapping[PruneSite, FluctuationScores], ratio: float,
                 allocation: Allocation, original_prunable: int) -> dict[PruneSite, PruneMask]:
    """按累计比例 ratio 为每个 site 选出掩码（先全部校验，再返回）。"""
    if allocation == Allocation.UNIFORM:
        targets = uniform_targets(model, ratio)
    else:
        targets = global_targets(model, scores, ratio, original_prunable)
    for site, t in targets.items():
        if t < 1:
            raise ConfigError(f"{site}: 比例 {ratio} 会清空该 site")
    return {site: select_mask(scores[site], targets[site], PruneMask.from_model(model, site))
            for site in model.sites()}

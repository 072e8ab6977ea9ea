"""
calib/collect.py
在模型上跑校准序列，按 (site, 领域) 收集 ChannelStats，并按 α 混合。

并行策略：每条序列独立前向并得到自己的 ChannelStats，最后按序列顺序合并。
合并顺序与线程数无关，所以 threads=1 与 threads=8 的结果逐位相同。
"""
from __future__ import annotations
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..core.errors import ConfigError, ConsistencyError, InsufficientDataError
from ..core.model import ActivationHook, Model, PruneSite, forward
from ..core.modelio import model_key
from .corpus import WEIGHT_TOL, DomainSpec, build_calibration_set
from .stats import ChannelStats, accumulate, merge

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True, eq=False)
class DomainStats:
    domains: tuple[str, ...]
    sites: tuple[PruneSite, ...]
    table: dict[PruneSite, dict[str, ChannelStats]]
    model_key: str = ""

    def get(self, site: PruneSite, domain_id: str) -> ChannelStats:
        try:
            return self.table[site][domain_id]
        except KeyError as e:
            raise ConsistencyError(f"site {site} 缺少领域 {domain_id!r} 的统计") from e


@dataclass(frozen=True, slots=True, eq=False)
class SiteMoments:
    mean: np.ndarray
    variance: np.ndarray
    count: int      # 各领域中最小的观测数


@dataclass(frozen=True, slots=True, eq=False)
class MixedStats:
    table: dict[PruneSite, SiteMoments]

    def __getitem__(self, site: PruneSite) -> SiteMoments:
        try:
            return self.table[site]
        except KeyError as e:
            raise ConsistencyError(f"混合统计中没有 site {site}") from e


def _sequence_stats(model: Model, seq: np.ndarray, hook: ActivationHook | None) -> list[ChannelStats]:
    _, taps = forward(model, seq, hook=hook)
    return [accumulate(ChannelStats.empty(tap.values.cols), tap) for tap in taps]


def collect_stats_from_sequences(model: Model, corpora: Mapping[str, Sequence[np.ndarray]], *,
                                 threads: int = 1, hook: ActivationHook | None = None) -> DomainStats:
    """corpora: 领域 → 序列列表。前向只读，不修改模型。"""
    if not corpora:
        raise ConfigError("至少需要一个领域")
    sites = tuple(model.sites())
    table: dict[PruneSite, dict[str, ChannelStats]] = {site: {} for site in sites}

    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for domain_id, seqs in corpora.items():
            acc = [ChannelStats.empty(model.live_channels(site)) for site in sites]
            mapper = executor.map if executor else map
            for per_seq in mapper(lambda s: _sequence_stats(model, s, hook), seqs):
                acc = [merge(a, b) for a, b in zip(acc, per_seq)]
            for site, stats in zip(sites, acc):
                if stats.count < 2:
                    raise InsufficientDataError(
                        f"领域 {domain_id!r} 在 site {site} 只有 {stats.count} 个观测（至少需要 2）")
                table[site][domain_id] = stats
    finally:
        if executor:
            executor.shutdown()
    return DomainStats(tuple(corpora), sites, table, model_key(model))


def collect_domain_stats(model: Model, domains: Sequence[DomainSpec], seq_len: int, n_samples_per_domain: int,
                         *, seed: int = 0, eval_fraction: float = 0.2, threads: int = 1) -> DomainStats:
    """按 DomainSpec 加载校准窗口（留出区间不参与）并收集统计。"""
    calib = build_calibration_set(domains, seq_len, n_samples_per_domain, seed, eval_fraction=eval_fraction)
    return collect_stats_from_sequences(model, calib.calib, threads=threads)


def _check_weights(ds: DomainStats, weights: Mapping[str, float] | Sequence[float]) -> list[tuple[str, float]]:
    if isinstance(weights, Mapping):
        pairs = [(d, float(weights[d])) for d in weights]
    else:
        weights = list(weights)
        if len(weights) != len(ds.domains):
            raise ConfigError(f"α 个数 {len(weights)} 与领域数 {len(ds.domains)} 不一致")
        pairs = list(zip(ds.domains, map(float, weights)))
    alphas = [a for _, a in pairs]
    if any(a < 0 or not math.isfinite(a) for a in alphas) or abs(math.fsum(alphas) - 1.0) > WEIGHT_TOL:
        raise ConfigError(f"α 必须非负且和为 1: {alphas}")
    return pairs


def mix_stats(ds: DomainStats, weights: Mapping[str, float] | Sequence[float]) -> MixedStats:
    """X̄ = Σ α_k X̄_k，V = Σ α_k V_k（不含领域间均值偏移项）。"""
    pairs = _check_weights(ds, weights)
    table = {}
    for site in ds.sites:
        mean = var = None
        count = None
        for domain_id, alpha in pairs:
            st = ds.get(site, domain_id)
            if mean is None:
                mean = np.zeros(st.width)
                var = np.zeros(st.width)
            mean = mean + alpha * st.mean
            var = var + alpha * st.variance
            count = st.count if count is None else min(count, st.count)
        table[site] = SiteMoments(mean, var, count)
    return MixedStats(table)

"""
iterloop/arms.py
对照实验：同一模型副本、同一 seed 下跑多个配置（arm），比较重建误差。
另有多 seed 胜率统计，以及按剪枝比例 / 校准样本数的扫描。
"""
from __future__ import annotations
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

from ..calib.corpus import DomainSpec, eval_count
from ..core.errors import ConfigError
from ..core.model import Model
from ..prune.mask import Allocation
from .engine import iterative_prune
from .iter_config import DEFAULT_STEPS, Curve, PruneOptions, Schedule
from .report import ComparisonReport, PruneReport

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class ArmSpec:
    name: str
    steps: int = 1
    curve: Curve = Curve.LINEAR
    domains: tuple[str, ...] | None = None       # None = 全部领域混合
    allocation: Allocation | None = None         # None = 沿用基础选项
    eval_seed: int | None = None                 # None = 沿用基础选项

    @staticmethod
    def from_dict(d: dict) -> "ArmSpec":
        try:
            domains = d.get("domains")
            return ArmSpec(
                name=str(d["name"]),
                steps=int(d.get("steps", 1)),
                curve=Curve(d.get("curve", Curve.LINEAR.value)),
                domains=tuple(domains) if domains else None,
                allocation=Allocation(d["allocation"]) if d.get("allocation") else None,
                eval_seed=d.get("eval_seed"),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"arm 配置非法: {d!r}: {e}") from e

    def to_dict(self) -> dict:
        return {"name": self.name, "steps": self.steps, "curve": self.curve.value,
                "domains": list(self.domains) if self.domains else None,
                "allocation": self.allocation.value if self.allocation else None,
                "eval_seed": self.eval_seed}


def default_arms(domain_ids: Sequence[str], steps: int = DEFAULT_STEPS) -> list[ArmSpec]:
    """单领域一次性 / 混合一次性 / 混合迭代。单领域取第一个领域。"""
    return [
        ArmSpec("one-shot-single", 1, domains=(domain_ids[0],)),
        ArmSpec("one-shot-mixed", 1),
        ArmSpec("iterative-mixed", steps),
    ]


def run_arm(model: Model, domains: Sequence[DomainSpec], arm: ArmSpec, target_ratio: float,
            options: PruneOptions, *, config: dict | None = None) -> tuple[Model, PruneReport]:
    opts = replace(
        options,
        domains=arm.domains,
        allocation=arm.allocation or options.allocation,
        eval_seed=options.eval_seed if arm.eval_seed is None else arm.eval_seed,
    )
    schedule = Schedule(target_ratio, arm.steps, arm.curve)
    echo = dict(config or {}, arm=arm.to_dict())
    return iterative_prune(model, domains, schedule, opts, config=echo)


def compare_arms(model: Model, domains: Sequence[DomainSpec], arms: Sequence[ArmSpec], target_ratio: float,
                 options: PruneOptions, *, config: dict | None = None) -> ComparisonReport:
    if len(arms) < 2:
        raise ConfigError(f"至少需要 2 个 arm，得到 {len(arms)}")
    names = [a.name for a in arms]
    if len(set(names)) != len(names):
        raise ConfigError(f"arm 名称重复: {names}")

    def _run(arm: ArmSpec) -> PruneReport:
        # iterative_prune 在副本上工作，各 arm 互不影响
        return run_arm(model, domains, arm, target_ratio, options, config=config)[1]

    if options.threads > 1:
        with ThreadPoolExecutor(max_workers=min(options.threads, len(arms))) as pool:
            reports = list(pool.map(_run, arms))
    else:
        reports = [_run(arm) for arm in arms]

    by_name = dict(zip(names, reports))
    deltas = {}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            deltas[f"{a}->{b}"] = by_name[b].final_error - by_name[a].final_error
    return ComparisonReport(by_name, deltas, reports[0].eval_sequences, options.seed)


@dataclass
class SeedSweep:
    arms: list[str]
    seeds: list[int]
    errors: dict[int, dict[str, float]] = field(default_factory=dict)

    def deltas(self, seed: int) -> dict[str, float]:
        """相对第一个 arm 的误差差值（负数表示更好）。"""
        base = self.arms[0]
        row = self.errors[seed]
        return {name: row[name] - row[base] for name in self.arms[1:]}

    def win_rate(self, arm: str) -> float:
        """arm 的误差 <= 第一个 arm 的 seed 比例。"""
        base = self.arms[0]
        wins = sum(1 for s in self.seeds if self.errors[s][arm] <= self.errors[s][base])
        return wins / len(self.seeds)

    def to_dict(self) -> dict:
        return {
            "arms": self.arms,
            "seeds": self.seeds,
            "errors": {str(s): self.errors[s] for s in self.seeds},
            "deltas": {str(s): self.deltas(s) for s in self.seeds},
            "win_rate": {name: self.win_rate(name) for name in self.arms[1:]},
        }


def seed_sweep(make_model: Callable[[int], Model], domains: Sequence[DomainSpec], arms: Sequence[ArmSpec],
               target_ratio: float, options: PruneOptions, seeds: Sequence[int],
               *, progress: Callable[[Iterable], Iterable] = iter) -> SeedSweep:
    """每个 seed：make_model(seed) 得到模型，校准 seed 与留出 seed 均取该 seed。"""
    sweep = SeedSweep([a.name for a in arms], list(seeds))
    for seed in progress(seeds):
        opts = replace(options, seed=seed, eval_seed=seed)
        report = compare_arms(make_model(seed), domains, arms, target_ratio, opts)
        sweep.errors[seed] = report.errors()
        logger.info("seed %d: %s", seed, {k: f"{v:.6g}" for k, v in sweep.errors[seed].items()})
    return sweep


SWEEP_AXES = ("ratio", "samples")


def sweep(axis: str, values: Sequence[float], make_model: Callable[[int], Model], domains: Sequence[DomainSpec],
          options: PruneOptions, seeds: Sequence[int], *, target_ratio: float = 0.5, steps: int = DEFAULT_STEPS,
          progress: Callable[[Iterable], Iterable] = iter) -> list[dict]:
    """
    沿剪枝比例或校准样本数扫描，每个 (取值, seed) 跑一次性与迭代两个混合 arm。
    返回行列表：{axis, value, seed, one_shot, iterative}
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"未知扫描轴 {axis!r}，可选 {SWEEP_AXES}")
    arms = [ArmSpec("one-shot", 1), ArmSpec("iterative", steps)]
    rows = []
    jobs = [(v, s) for v in values for s in seeds]
    for value, seed in progress(jobs):
        ratio = float(value) if axis == "ratio" else target_ratio
        opts = replace(options, seed=seed, eval_seed=seed)
        if axis == "samples":
            # 留出集大小固定，只改变校准样本数
            opts = replace(opts, n_samples=int(value),
                           n_eval=options.n_eval or eval_count(options.n_samples, options.eval_fraction))
        report = compare_arms(make_model(seed), domains, arms, ratio, opts)
        errs = report.errors()
        rows.append({"axis": axis, "value": value, "seed": seed,
                     "one_shot": errs["one-shot"], "iterative": errs["iterative"]})
    return rows


def median_by_value(rows: Sequence[dict], column: str) -> dict:
    values = sorted({r["value"] for r in rows})
    return {v: statistics.median(r[column] for r in rows if r["value"] == v) for v in values}

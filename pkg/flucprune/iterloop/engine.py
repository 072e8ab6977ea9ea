from __future__ import annotations
import logging
import time
from typing import Sequence

from ..calib.cache import StatsCache, cache_key
from ..calib.collect import DomainStats, MixedStats, collect_stats_from_sequences, mix_stats
from ..calib.corpus import CalibrationSet, DomainSpec, build_calibration_set
from ..core.errors import ConfigError
from ..core.model import Model, PruneSite, param_count, prunable_param_count
from ..core.modelio import model_key
from ..prune.compensate import BiasVector, apply_prune, compensate
from ..prune.mask import Allocation, PruneMask, target_masks
from ..prune.scoring import FluctuationScores, score
from .iter_config import IterationState, PruneOptions, Schedule
from .objective import converged, layer_errors, perplexity, reconstruction_error
from .report import PruneReport, StepRecord

logger = logging.getLogger(__name__)


def prune_once(model: Model, stats: MixedStats, ratio: float, *,
               allocation: Allocation = Allocation.UNIFORM,
               original_prunable: int | None = None
               ) -> tuple[dict[PruneSite, FluctuationScores], dict[PruneSite, PruneMask], dict[PruneSite, BiasVector]]:
    """
    打分 → 选掩码 → 补偿 → 裁剪，按固定 site 顺序原地修改 model。
    ratio 是相对原始可剪参数的累计比例；掩码全部选好后才开始修改模型。
    """
    if original_prunable is None:
        original_prunable = prunable_param_count(model)
    sites = model.sites()
    scores = {site: score(stats, model, site) for site in sites}
    masks = target_masks(model, scores, ratio, allocation, original_prunable)
    biases = {}
    for site in sites:
        biases[site] = compensate(model, site, masks[site], stats)
        apply_prune(model, site, masks[site], biases[site])
    return scores, masks, biases


class IterativePruner:
    def __init__(self, schedule: Schedule, options: PruneOptions | None = None, *, config: dict | None = None):
        self.schedule = schedule
        self.options = options or PruneOptions()
        self.config = config
        self.state = IterationState()
        self.report: PruneReport | None = None
        self.cache = StatsCache(self.options.cache_dir) if self.options.cache_dir else None

    def _collect(self, model: Model, calib: CalibrationSet, key: str) -> tuple[DomainStats, bool]:
        opts = self.options
        if self.cache is None:
            return collect_stats_from_sequences(model, calib.calib, threads=opts.threads), False
        ckey = cache_key(key, opts.seed, opts.seq_len, opts.n_samples, calib.domains, opts.eval_fraction)
        cached = self.cache.get(ckey)
        if cached is not None:
            return cached, True
        stats = collect_stats_from_sequences(model, calib.calib, threads=opts.threads)
        self.cache.put(ckey, stats)
        return stats, False

    def run(self, model: Model, calib: CalibrationSet) -> tuple[Model, PruneReport]:
        """在 model 的副本上执行整个调度，原模型不变。"""
        opts, schedule = self.options, self.schedule
        start_time = time.perf_counter()
        self.state = IterationState()
        self.report = report = PruneReport(
            config=self.config if self.config is not None else {"model": model.config.to_dict()},
            schedule=schedule.to_dict(),
            options=opts.to_dict(),
        )
        try:
            stats_set = calib.subset(opts.domains) if opts.domains else calib
            eval_batch = calib.eval_batch()
            if not eval_batch:
                raise ConfigError("没有留出序列（eval_fraction 必须 > 0）")
            report.eval_sequences = len(eval_batch)

            original = model
            pruned = model.copy()
            report.original_key = model_key(original)
            report.params_before = param_count(original)
            report.prunable_before = original_prunable = prunable_param_count(original)

            ratios = schedule.cumulative_ratios()
            s = 0
            while s < len(ratios):
                ratio = ratios[s]
                key = model_key(pruned)
                self.state.model_keys.append(key)
                ds, from_cache = self._collect(pruned, stats_set, key)
                mixed = mix_stats(ds, stats_set.alphas)
                self.state.stats = mixed

                live_before = {site.label: len(pruned.live_units(site)) for site in pruned.sites()}
                scores, masks, biases = prune_once(pruned, mixed, ratio, allocation=opts.allocation,
                                                   original_prunable=original_prunable)
                for site, mask in masks.items():
                    self.state.masks_history.setdefault(site, []).append(mask)

                err = reconstruction_error(original, pruned, eval_batch)
                self.state.objective_trace.append(err)
                self.state.step = s + 1
                report.steps.append(StepRecord(
                    step=s + 1,
                    ratio=ratio,
                    model_key_before=key,
                    live_units={site.label: len(pruned.live_units(site)) for site in pruned.sites()},
                    pruned_units={site.label: live_before[site.label] - masks[site].popcount
                                  for site in pruned.sites()},
                    score_summary={site.label: sc.summary() for site, sc in scores.items()},
                    bias_norms={site.label: b.norm for site, b in biases.items()},
                    reconstruction_error=err,
                    layer_errors=layer_errors(original, pruned, eval_batch) if opts.diagnostics else [],
                    stats_from_cache=from_cache,
                ))
                logger.info("步骤 %d/%d 完成 | 比例: %.4f | 误差: %.6g | 耗时: %.2fs",
                            s + 1, len(ratios), ratio, err, time.perf_counter() - start_time)
                s += 1

                if schedule.adaptive and s < len(ratios) and converged(self.state, schedule.tol):
                    logger.info("步骤 %d 已收敛（tol=%g），下一步直接剪到目标比例 %.4f",
                                s, schedule.tol, schedule.target_ratio)
                    report.converged_at = s
                    ratios = ratios[:s] + [schedule.target_ratio]

            report.pruned_key = model_key(pruned)
            report.params_after = param_count(pruned)
            report.prunable_after = prunable_param_count(pruned)
            report.final_ratio = 1.0 - report.prunable_after / report.prunable_before
            if opts.diagnostics:
                report.perplexity = {"original": perplexity(original, eval_batch),
                                     "pruned": perplexity(pruned, eval_batch)}
            report.status = "ok"
            return pruned, report
        except Exception as e:
            report.fail(e)
            raise
        finally:
            report.wall_clock_s = time.perf_counter() - start_time


def iterative_prune(model: Model, domains: Sequence[DomainSpec], schedule: Schedule,
                    options: PruneOptions | None = None, *, config: dict | None = None
                    ) -> tuple[Model, PruneReport]:
    options = options or PruneOptions()
    calib = build_calibration_set(domains, options.seq_len, options.n_samples, options.seed,
                                  eval_fraction=options.eval_fraction, eval_seed=options.eval_seed,
                                  n_eval=options.n_eval)
    return IterativePruner(schedule, options, config=config).run(model, calib)

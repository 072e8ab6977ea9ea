"""
cli/commands.py
命令实现：init / prune / eval / compare / stats / sweep。
每个命令只读输入模型文件，结果写到不同的输出路径；面向用户的摘要打印到 stdout。
"""
from __future__ import annotations
import csv
import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
from tqdm import tqdm

from ..calib.collect import collect_stats_from_sequences, mix_stats
from ..calib.corpus import build_calibration_set
from ..core.errors import ConfigError
from ..core.model import Model, init_model, param_count
from ..core.modelio import load_model, model_key, save_model
from ..core.rng import Rng
from ..iterloop.arms import compare_arms, median_by_value, seed_sweep, sweep
from ..iterloop.engine import IterativePruner
from ..iterloop.objective import perplexity, reconstruction_error
from ..iterloop.report import PruneReport, write_trace_csv
from ..prune.scoring import column_norms_sq, score
from .run_config import RunConfig

logger = logging.getLogger(__name__)


def _require_model(cfg: RunConfig) -> Path:
    if not cfg.model:
        raise ConfigError("需要输入模型文件（--model 或配置中的 model）")
    path = Path(cfg.model)
    if not path.exists():
        raise FileNotFoundError(f"模型文件不存在: {path}")
    return path


def _distinct_output(src: str | Path, out: str | Path) -> None:
    if Path(src).resolve() == Path(out).resolve():
        raise ConfigError(f"输出路径不能覆盖输入模型: {out}")


def _seed_list(cfg: RunConfig) -> list[int]:
    return [cfg.seed + i for i in range(cfg.seeds)]


def _model_factory(cfg: RunConfig):
    """给定模型文件时每个 seed 共用它；否则按 seed 初始化新模型。"""
    if cfg.model:
        model = load_model(_require_model(cfg))
        return lambda seed: model
    model_cfg = cfg.model_config()
    return lambda seed: init_model(model_cfg, Rng(seed))


def _calibration(cfg: RunConfig):
    return build_calibration_set(cfg.domains(), cfg.seq_len, cfg.n_samples, cfg.seed,
                                 eval_fraction=cfg.eval_fraction, eval_seed=cfg.eval_seed)


# =========================================================
# init
# =========================================================

def cmd_init(cfg: RunConfig) -> int:
    model = init_model(cfg.model_config(), Rng(cfg.seed))
    path = save_model(model, cfg.output)
    n = param_count(model)
    print(f"模型已写入 {path}")
    print(f"参数量: {n}")
    print(f"model_key: {model_key(model)}")
    return 0


# =========================================================
# prune
# =========================================================

def cmd_prune(cfg: RunConfig) -> int:
    """无论成功失败都写报告；失败时 status=failed 并带 error 字段，异常继续向上抛。"""
    pruner: IterativePruner | None = None
    try:
        src = _require_model(cfg)
        _distinct_output(src, cfg.output)
        model = load_model(src)
        calib = _calibration(cfg)
        pruner = IterativePruner(cfg.schedule(), cfg.options(), config=cfg.to_dict())
        pruned, report = pruner.run(model, calib)
    except Exception as e:
        report = pruner.report if pruner is not None and pruner.report is not None else None
        if report is None:
            report = PruneReport(config=cfg.to_dict(), schedule={}, options={})
            report.fail(e)
        report.write(cfg.report)
        logger.error("剪枝失败，报告已写入 %s", cfg.report)
        raise

    save_model(pruned, cfg.output)
    report.write(cfg.report)
    if cfg.csv:
        write_trace_csv({"prune": report}, cfg.csv)

    for step in report.steps:
        live = sum(step.live_units.values())
        print(f"step {step.step}: ratio={step.ratio:.4f} live_units={live} error={step.reconstruction_error:.6g}")
    print(f"参数量: {report.params_before} -> {report.params_after} (可剪部分剪掉 {report.final_ratio:.2%})")
    if report.converged_at is not None:
        print(f"第 {report.converged_at} 步已收敛，提前跳到目标比例")
    print(f"模型已写入 {cfg.output}，报告已写入 {cfg.report}")
    return 0


# =========================================================
# eval
# =========================================================

def cmd_eval(cfg: RunConfig, original_path: str, pruned_path: str, out: str | None = None) -> int:
    original = load_model(original_path)
    pruned = load_model(pruned_path)
    eval_batch = _calibration(cfg).eval_batch()
    if not eval_batch:
        raise ConfigError("没有留出序列（eval_fraction 必须 > 0）")
    result = {
        "config": cfg.to_dict(),
        "original_key": model_key(original),
        "pruned_key": model_key(pruned),
        "eval_sequences": len(eval_batch),
        "reconstruction_error": reconstruction_error(original, pruned, eval_batch),
        "perplexity": {"original": perplexity(original, eval_batch),
                       "pruned": perplexity(pruned, eval_batch)},
    }
    print(f"重建误差: {result['reconstruction_error']:.9g}")
    print(f"困惑度: {result['perplexity']['original']:.4f} -> {result['perplexity']['pruned']:.4f}")
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(json.dumps(result, indent=2, ensure_ascii=False, sort_keys=True), encoding="utf-8")
        print(f"结果已写入 {out}")
    return 0


# =========================================================
# compare
# =========================================================

def cmd_compare(cfg: RunConfig, out: str | None = None) -> int:
    out = out or cfg.report
    domains = cfg.domains()
    arms = cfg.arm_specs([d.domain_id for d in domains])
    make_model = _model_factory(cfg)

    if cfg.seeds == 1:
        report = compare_arms(make_model(cfg.seed), domains, arms, cfg.target_ratio, cfg.options(),
                              config=cfg.to_dict())
        report.write(out)
        if cfg.csv:
            write_trace_csv(report.arms, cfg.csv)
        for name, r in report.arms.items():
            print(f"{name:<20} steps={len(r.steps)} ratio={r.final_ratio:.4f} error={r.final_error:.6g}")
        for pair, delta in report.deltas.items():
            print(f"delta {pair}: {delta:+.6g}")
        return 0

    seeds = _seed_list(cfg)
    result = seed_sweep(make_model, domains, arms, cfg.target_ratio, cfg.options(), seeds,
                        progress=lambda it: tqdm(it, desc="seeds"))
    payload = {"config": cfg.to_dict(), **result.to_dict()}
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True), encoding="utf-8")
    for seed in seeds:
        deltas = " ".join(f"{k}={v:+.6g}" for k, v in result.deltas(seed).items())
        print(f"seed {seed}: {deltas}")
    rates = " ".join(f"{name}={result.win_rate(name):.0%}" for name in result.arms[1:])
    print(f"win-rate vs {result.arms[0]}: {rates}")
    return 0


# =========================================================
# stats
# =========================================================

STATS_COLUMNS = ["block", "site", "channel", "unit", "mean", "variance", "col_norm_sq", "score",
                 "unit_score", "unit_rank"]


def score_table(model: Model, cfg: RunConfig) -> list[dict]:
    """每个存活通道一行；unit_rank 为该单位在 site 内的剪枝先后（0 = 最先被剪）。"""
    calib = _calibration(cfg)
    ds = collect_stats_from_sequences(model, calib.calib, threads=cfg.threads)
    mixed = mix_stats(ds, calib.alphas)
    rows = []
    for site in model.sites():
        sc = score(mixed, model, site)
        moments = mixed[site]
        norms = column_norms_sq(model, site)
        width = model.unit_width(site)
        order = np.lexsort((np.arange(len(sc.units)), sc.per_unit))
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        for j in range(sc.per_channel.size):
            u = j // width
            rows.append({
                "block": site.block_index,
                "site": site.kind.label,
                "channel": sc.units[u] * width + j % width,
                "unit": sc.units[u],
                "mean": float(moments.mean[j]),
                "variance": float(moments.variance[j]),
                "col_norm_sq": float(norms[j]),
                "score": float(sc.per_channel[j]),
                "unit_score": float(sc.per_unit[u]),
                "unit_rank": int(rank[u]),
            })
    return rows


def cmd_stats(cfg: RunConfig, out: str) -> int:
    model = load_model(_require_model(cfg))
    rows = score_table(model, cfg)
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=STATS_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    print(f"{len(rows)} 行分数已写入 {path}")
    return 0


# =========================================================
# sweep
# =========================================================

def cmd_sweep(cfg: RunConfig, axis: str, values: Sequence[float], out: str | None = None) -> int:
    out = out or cfg.report
    rows = sweep(axis, values, _model_factory(cfg), cfg.domains(), cfg.options(), _seed_list(cfg),
                 target_ratio=cfg.target_ratio, steps=cfg.steps,
                 progress=lambda it: tqdm(it, desc=f"sweep {axis}"))
    payload = {"config": cfg.to_dict(), "axis": axis, "rows": rows,
               "median": {"one_shot": median_by_value(rows, "one_shot"),
                          "iterative": median_by_value(rows, "iterative")}}
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(json.dumps(payload, indent=2, ensure_ascii=False, default=str), encoding="utf-8")
    if cfg.csv:
        with Path(cfg.csv).open("w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["axis", "value", "seed", "one_shot", "iterative"])
            writer.writeheader()
            writer.writerows(rows)
    one, it = payload["median"]["one_shot"], payload["median"]["iterative"]
    for value in one:
        print(f"{axis}={value}: one-shot={one[value]:.6g} iterative={it[value]:.6g}")
    return 0

"""
flucprune 命令行入口

    flucprune init    --output base.pkit --seed 7
    flucprune prune   --model base.pkit --output pruned.pkit --ratio 0.5 --steps 4
    flucprune eval    base.pkit pruned.pkit
    flucprune compare --model base.pkit --seeds 10
    flucprune stats   --model base.pkit --out scores.csv
    flucprune sweep   --axis ratio --values 0.25 0.5 --seeds 5

退出码：0 成功，1 运行时失败，2 配置 / 用法错误。
"""
from __future__ import annotations
import argparse
import logging
import sys
from typing import Sequence

from .cli.commands import cmd_compare, cmd_eval, cmd_init, cmd_prune, cmd_stats, cmd_sweep
from .cli.run_config import CONFIG_ENV, RunConfig
from .core.errors import ConfigError, FlucPruneError
from .iterloop.arms import SWEEP_AXES

logger = logging.getLogger("flucprune")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help=f"TOML/JSON 配置文件（默认读取环境变量 {CONFIG_ENV}）")
    p.add_argument("--threads", type=int, help="统计收集 / arm 并行的线程上限，不影响结果")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--seed", type=int)
    p.add_argument("--model", help="输入模型文件（只读）")


def _add_calib(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="混合清单 JSON；省略时使用内置四领域语料")
    p.add_argument("--n-samples", dest="n_samples", type=int, help="每个领域的校准序列数")
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--eval-fraction", dest="eval_fraction", type=float)
    p.add_argument("--eval-seed", dest="eval_seed", type=int)
    p.add_argument("--cache-dir", dest="cache_dir", help="统计缓存目录")


def _add_schedule(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ratio", dest="target_ratio", type=float, help="目标剪枝比例 (0, 1)")
    p.add_argument("--steps", type=int)
    p.add_argument("--curve", choices=["linear", "geometric"])
    p.add_argument("--allocation", choices=["uniform", "global"])
    p.add_argument("--adaptive", action="store_true", default=None, help="收敛后直接跳到目标比例")
    p.add_argument("--tol", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flucprune", description="基于激活波动的结构化剪枝")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="初始化一个确定性的玩具模型")
    _add_common(p)
    p.add_argument("--output")
    for name in ("d_model", "n_blocks", "n_heads", "d_mlp", "max_seq"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=int)

    p = sub.add_parser("prune", help="迭代剪枝并写出模型与报告")
    _add_common(p)
    _add_calib(p)
    _add_schedule(p)
    p.add_argument("--output")
    p.add_argument("--report")
    p.add_argument("--csv", help="每步目标值轨迹 CSV")

    p = sub.add_parser("eval", help="留出集上的重建误差与困惑度")
    _add_common(p)
    _add_calib(p)
    p.add_argument("original")
    p.add_argument("pruned")
    p.add_argument("--out", help="结果 JSON")

    p = sub.add_parser("compare", help="多个 arm 的对照实验")
    _add_common(p)
    _add_calib(p)
    _add_schedule(p)
    p.add_argument("--seeds", type=int, help="seed 个数；> 1 时输出逐 seed 差值与胜率")
    p.add_argument("--out")
    p.add_argument("--csv")

    p = sub.add_parser("stats", help="导出逐通道分数表 CSV")
    _add_common(p)
    _add_calib(p)
    p.add_argument("--out", default="scores.csv")

    p = sub.add_parser("sweep", help="按剪枝比例或校准样本数扫描")
    _add_common(p)
    _add_calib(p)
    _add_schedule(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--seeds", type=int)
    p.add_argument("--out")
    p.add_argument("--csv")
    return parser


_OVERRIDE_KEYS = ("model", "seed", "threads", "manifest", "n_samples", "seq_len", "eval_fraction", "eval_seed",
                  "cache_dir", "target_ratio", "steps", "curve", "allocation", "adaptive", "tol",
                  "output", "report", "csv", "seeds")
_INIT_KEYS = ("d_model", "n_blocks", "n_heads", "d_mlp", "max_seq")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config)
    overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
    init = {k: getattr(args, k) for k in _INIT_KEYS if getattr(args, k, None) is not None}
    if init:
        merged = dict(cfg.init, **init)
        if "head_dim" in merged and ("d_model" in init or "n_heads" in init):
            merged.pop("head_dim")
        overrides["init"] = merged
    return cfg.with_overrides(**overrides)


def run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    match args.command:
        case "init":
            return cmd_init(cfg)
        case "prune":
            return cmd_prune(cfg)
        case "eval":
            return cmd_eval(cfg, args.original, args.pruned, args.out)
        case "compare":
            return cmd_compare(cfg, args.out)
        case "stats":
            return cmd_stats(cfg, args.out)
        case "sweep":
            return cmd_sweep(cfg, args.axis, args.values, args.out)
    raise ConfigError(f"未知命令: {args.command}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigError, FileNotFoundError) as e:
        logger.error("配置错误: %s", e)
        return EXIT_USAGE
    except FlucPruneError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_FAILURE
    except Exception:
        logger.exception("未预期的错误")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

"""
cli/run_config.py
运行配置 - 一个 TOML/JSON 文件 + 命令行覆盖（命令行优先）
"""
from __future__ import annotations
import json
import logging
import os
import tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ..calib.calib_config import CalibConfig
from ..calib.corpus import DomainSpec, load_manifest, normalize_weights
from ..core.errors import ConfigError
from ..core.model import ModelConfig
from ..iterloop.arms import ArmSpec, default_arms
from ..iterloop.iter_config import DEFAULT_STEPS, DEFAULT_TOL, Curve, PruneOptions, Schedule
from ..prune.mask import Allocation

logger = logging.getLogger(__name__)

CONFIG_ENV = "FLUCPRUNE_CONFIG"   # 默认配置文件路径（唯一读取的环境变量）


@dataclass(frozen=True)
class RunConfig:
    # ========== 模型 ==========
    model: str | None = None                           # 输入模型文件
    init: dict[str, int] = field(default_factory=dict) # init 命令使用的 ModelConfig 字段
    # ========== 校准 ==========
    manifest: str | None = None                        # None = 内置四领域语料
    alphas: dict[str, float] | None = None             # 覆盖清单中的 α
    n_samples: int = CalibConfig.N_SAMPLES
    seq_len: int = CalibConfig.SEQ_LEN
    seed: int = 0
    eval_fraction: float = CalibConfig.EVAL_FRACTION
    eval_seed: int | None = None
    cache_dir: str | None = None
    # ========== 剪枝 ==========
    target_ratio: float = 0.5
    steps: int = DEFAULT_STEPS
    curve: str = Curve.LINEAR.value
    allocation: str = Allocation.UNIFORM.value
    adaptive: bool = False
    tol: float = DEFAULT_TOL
    # ========== 对照实验 ==========
    arms: list[dict[str, Any]] = field(default_factory=list)
    seeds: int = 1
    # ========== 输出 ==========
    output: str = "pruned.pkit"
    report: str = "report.json"
    csv: str | None = None
    # ========== 运行 ==========
    threads: int = 1

    def __post_init__(self):
        try:
            Curve(self.curve)
            Allocation(self.allocation)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.seeds < 1:
            raise ConfigError(f"seeds 必须 >= 1: {self.seeds}")
        if self.threads < 1:
            raise ConfigError(f"threads 必须 >= 1: {self.threads}")

    # ---------- 读取 ----------

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(RunConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"配置含未知字段: {sorted(unknown)}")
        try:
            return RunConfig(**d)
        except TypeError as e:
            raise ConfigError(f"配置非法: {e}") from e

    @staticmethod
    def load(path: str | Path | None = None) -> "RunConfig":
        """
        读取配置文件；path 为 None 时使用环境变量 FLUCPRUNE_CONFIG，
        两者都没有则返回默认配置。按扩展名区分 .toml / .json。
        """
        if path is None:
            path = os.environ.get(CONFIG_ENV) or None
        if path is None:
            return RunConfig()
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"配置文件不存在: {path}")
        try:
            if path.suffix == ".toml":
                with path.open("rb") as f:
                    data = tomllib.load(f)
            else:
                data = json.loads(path.read_text(encoding="utf-8"))
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
            raise ConfigError(f"配置文件解析失败: {path}: {e}") from e
        logger.info("已读取配置: %s", path)
        # TOML 中的 [[arms]] / [init] 会直接映射到同名字段
        return RunConfig.from_dict(data)

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """命令行覆盖：值为 None 的项视为未给出。"""
        given = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(given) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"未知覆盖项: {sorted(unknown)}")
        return replace(self, **given)

    def to_dict(self) -> dict[str, Any]:
        """回显到报告中；不含线程数（不影响结果）。"""
        d = asdict(self)
        d.pop("threads")
        return d

    # ---------- 派生对象 ----------

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.init)

    def domains(self) -> list[DomainSpec]:
        specs = load_manifest(self.manifest) if self.manifest else CalibConfig.default_domains()
        if self.alphas:
            unknown = set(self.alphas) - {s.domain_id for s in specs}
            if unknown:
                raise ConfigError(f"alphas 含未知领域: {sorted(unknown)}")
            specs = [DomainSpec(s.domain_id, s.sources, self.alphas.get(s.domain_id, s.alpha)) for s in specs]
        return normalize_weights(specs)

    def schedule(self) -> Schedule:
        return Schedule(self.target_ratio, self.steps, Curve(self.curve), self.adaptive, self.tol)

    def options(self) -> PruneOptions:
        return PruneOptions(
            allocation=Allocation(self.allocation),
            seq_len=self.seq_len,
            n_samples=self.n_samples,
            seed=self.seed,
            eval_fraction=self.eval_fraction,
            eval_seed=self.eval_seed,
            threads=self.threads,
            cache_dir=self.cache_dir,
        )

    def arm_specs(self, domain_ids: list[str]) -> list[ArmSpec]:
        if not self.arms:
            return default_arms(domain_ids, self.steps)
        return [ArmSpec.from_dict(a) for a in self.arms]

"""
iterloop/report.py
PruneReport / ComparisonReport 及其 JSON、CSV 输出。字段说明见 docs/report_schema.md。
"""
from __future__ import annotations
import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

REPORT_SCHEMA_VERSION = 1


@dataclass
class StepRecord:
    step: int
    ratio: float
    model_key_before: str                       # 收集统计前的模型指纹
    live_units: dict[str, int]                  # site 标签 -> 本步之后的存活单位数
    pruned_units: dict[str, int]                # site 标签 -> 本步剪掉的单位数
    score_summary: dict[str, dict[str, float]]  # site 标签 -> {min, mean, max}
    bias_norms: dict[str, float]
    reconstruction_error: float
    layer_errors: list[float] = field(default_factory=list)
    stats_from_cache: bool = False


@dataclass
class PruneReport:
    config: dict[str, Any]
    schedule: dict[str, Any]
    options: dict[str, Any]
    status: str = "running"                     # running / ok / failed
    steps: list[StepRecord] = field(default_factory=list)
    original_key: str = ""
    pruned_key: str = ""
    params_before: int = 0
    params_after: int = 0
    prunable_before: int = 0
    prunable_after: int = 0
    final_ratio: float = 0.0
    eval_sequences: int = 0
    converged_at: int | None = None
    perplexity: dict[str, float] = field(default_factory=dict)
    error: dict[str, str] | None = None
    wall_clock_s: float = 0.0

    @property
    def objective_trace(self) -> list[float]:
        return [s.reconstruction_error for s in self.steps]

    @property
    def final_error(self) -> float:
        return self.steps[-1].reconstruction_error if self.steps else float("nan")

    def fail(self, exc: BaseException) -> None:
        self.status = "failed"
        self.error = {"type": type(exc).__name__, "message": str(exc)}

    def to_dict(self, *, include_wall_clock: bool = True) -> dict[str, Any]:
        d = {"schema_version": REPORT_SCHEMA_VERSION, **asdict(self)}
        if not include_wall_clock:
            d.pop("wall_clock_s")
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(**kwargs), indent=2, ensure_ascii=False, sort_keys=True)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


def write_trace_csv(reports: dict[str, PruneReport], path: str | Path) -> Path:
    """每行一个 (arm, step)：ratio 与重建误差，便于画图。"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["arm", "step", "ratio", "reconstruction_error"])
        for name, report in reports.items():
            for s in report.steps:
                writer.writerow([name, s.step, f"{s.ratio:.6g}", f"{s.reconstruction_error:.9g}"])
    return path


@dataclass
class ComparisonReport:
    arms: dict[str, PruneReport]
    deltas: dict[str, float]        # "a -> b": error_b - error_a
    eval_sequences: int
    seed: int

    def errors(self) -> dict[str, float]:
        return {name: r.final_error for name, r in self.arms.items()}

    def to_dict(self, *, include_wall_clock: bool = True) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "seed": self.seed,
            "eval_sequences": self.eval_sequences,
            "errors": self.errors(),
            "deltas": self.deltas,
            "arms": {k: r.to_dict(include_wall_clock=include_wall_clock) for k, r in self.arms.items()},
        }

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True), encoding="utf-8")
        return path

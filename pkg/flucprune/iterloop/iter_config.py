from __future__ import annotations
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

from ..calib.calib_config import CalibConfig
from ..core.errors import ConfigError
from ..prune.mask import Allocation

# =========================================================
# 第一部分：迭代默认值
# =========================================================
DEFAULT_STEPS = 4          # 四到六步通常足够
DEFAULT_TOL = 0.01         # 收敛判据：相邻两步目标值的相对变化
CONVERGENCE_EPS = 1e-12


# =========================================================
# 第二部分：剪枝调度
# =========================================================

class Curve(Enum):
    LINEAR = "linear"          # r_s = s·target/S
    GEOMETRIC = "geometric"    # 每步剪掉剩余部分的同一比例


@dataclass(frozen=True, slots=True)
class Schedule:
    target_ratio: float
    steps: int = DEFAULT_STEPS
    curve: Curve = Curve.LINEAR
    adaptive: bool = False     # 收敛后下一步直接跳到目标比例
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if not isinstance(self.target_ratio, (int, float)) or not 0.0 < self.target_ratio < 1.0:
            raise ConfigError(f"target_ratio 必须在 (0, 1) 内: {self.target_ratio}")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ConfigError(f"steps 必须 >= 1: {self.steps}")
        if not self.tol > 0:
            raise ConfigError(f"tol 必须为正: {self.tol}")

    @staticmethod
    def one_shot(target_ratio: float) -> "Schedule":
        return Schedule(target_ratio, 1)

    @staticmethod
    def linear(target_ratio: float, steps: int = DEFAULT_STEPS) -> "Schedule":
        return Schedule(target_ratio, steps, Curve.LINEAR)

    @staticmethod
    def geometric(target_ratio: float, steps: int = DEFAULT_STEPS) -> "Schedule":
        return Schedule(target_ratio, steps, Curve.GEOMETRIC)

    def cumulative_ratios(self) -> list[float]:
        """r_1 < r_2 < ... < r_S = target_ratio"""
        S, r = self.steps, self.target_ratio
        if self.curve == Curve.LINEAR:
            ratios = [s * r / S for s in range(1, S)]
        else:
            ratios = [1.0 - math.pow(1.0 - r, s / S) for s in range(1, S)]
        return ratios + [r]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["curve"] = self.curve.value
        return d


# =========================================================
# 第三部分：运行选项
# =========================================================

@dataclass(frozen=True, slots=True)
class PruneOptions:
    allocation: Allocation = Allocation.UNIFORM
    seq_len: int = CalibConfig.SEQ_LEN
    n_samples: int = CalibConfig.N_SAMPLES
    seed: int = 0
    eval_fraction: float = CalibConfig.EVAL_FRACTION
    eval_seed: int | None = None
    n_eval: int | None = None                  # 固定留出窗口数；None 时按 eval_fraction 推算
    threads: int = 1
    cache_dir: str | None = None
    domains: tuple[str, ...] | None = None     # 只用部分领域做统计（单领域对照）
    diagnostics: bool = True                   # 每步记录逐层误差与困惑度

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError(f"threads 必须 >= 1: {self.threads}")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples 必须 >= 1: {self.n_samples}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["allocation"] = self.allocation.value
        d["domains"] = list(self.domains) if self.domains else None
        d.pop("threads")    # 线程数不影响结果，不写入报告
        return d


@dataclass
class IterationState:
    """迭代过程中的状态：已执行步数、各 site 的掩码历史、当前统计、目标值轨迹。"""
    step: int = 0
    masks_history: dict = field(default_factory=dict)     # PruneSite -> list[PruneMask]
    stats: object = None                                  # 当前步使用的 MixedStats
    objective_trace: list[float] = field(default_factory=list)
    model_keys: list[str] = field(default_factory=list)   # 每次收集统计前的模型指纹

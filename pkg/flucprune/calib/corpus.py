"""
calib/corpus.py
多领域校准语料：领域描述、混合清单读取、随机窗口采样、留出切分。
"""
from __future__ import annotations
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..core.errors import ConfigError, IngestionError
from ..core.rng import Rng

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-9


@dataclass(frozen=True, slots=True)
class DomainSpec:
    domain_id: str
    sources: tuple[str, ...]
    alpha: float = 1.0

    def to_dict(self) -> dict:
        return {"domain": self.domain_id, "path": list(self.sources), "alpha": self.alpha}


def normalize_weights(domains: Sequence[DomainSpec]) -> list[DomainSpec]:
    """α_k >= 0 且归一化到和为 1。"""
    if not domains:
        raise ConfigError("混合中至少需要一个领域")
    ids = [d.domain_id for d in domains]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"领域名称重复: {ids}")
    alphas = [float(d.alpha) for d in domains]
    if any(not math.isfinite(a) or a < 0 for a in alphas):
        raise ConfigError(f"α 必须是非负有限数: {alphas}")
    total = math.fsum(alphas)
    if total <= 0:
        raise ConfigError("α 之和必须为正")
    return [DomainSpec(d.domain_id, d.sources, a / total) for d, a in zip(domains, alphas)]


def load_manifest(path: str | Path) -> list[DomainSpec]:
    """
    读取混合清单：JSON 数组 [{"domain": str, "path": str | [str], "alpha": float}, ...]
    相对路径相对于清单文件所在目录。文件不存在时抛 FileNotFoundError。
    """
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"混合清单不是合法 JSON: {path}: {e}") from e
    if not isinstance(entries, list):
        raise ConfigError(f"混合清单必须是 JSON 数组: {path}")
    specs = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "domain" not in entry or "path" not in entry:
            raise ConfigError(f"清单第 {i} 项缺少 domain/path 字段")
        sources = entry["path"] if isinstance(entry["path"], list) else [entry["path"]]
        resolved = tuple(str(p if Path(p).is_absolute() else (path.parent / p)) for p in sources)
        specs.append(DomainSpec(str(entry["domain"]), resolved, entry.get("alpha", 1.0)))
    return normalize_weights(specs)


def read_domain_bytes(spec: DomainSpec) -> bytes:
    chunks = []
    for source in spec.sources:
        try:
            chunks.append(Path(source).read_bytes())
        except OSError as e:
            raise IngestionError(spec.domain_id, f"无法读取语料 {source}: {e}") from e
    return b"".join(chunks)


def _sample_windows(data: bytes, domain_id: str, seq_len: int, n_samples: int, rng: Rng) -> list[np.ndarray]:
    if seq_len < 1:
        raise ConfigError(f"seq_len 必须 >= 1: {seq_len}")
    if n_samples < 0:
        raise ConfigError(f"n_samples 必须 >= 0: {n_samples}")
    if len(data) < seq_len:
        raise IngestionError(domain_id, f"语料只有 {len(data)} 字节，不足 seq_len={seq_len}")
    if n_samples == 0:
        return []
    tokens = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    offsets = rng.integers(len(data) - seq_len + 1, n_samples)
    return [tokens[o:o + seq_len].copy() for o in offsets]


def load_corpus(spec: DomainSpec, seq_len: int, n_samples: int, rng: Rng) -> list[np.ndarray]:
    """从整个语料中按均匀随机偏移截取 n_samples 个长度为 seq_len 的字节窗口。"""
    return _sample_windows(read_domain_bytes(spec), spec.domain_id, seq_len, n_samples, rng)


def eval_count(n_samples: int, eval_fraction: float) -> int:
    """留出窗口数，使其占全部加载窗口的 eval_fraction。"""
    if eval_fraction <= 0:
        return 0
    return max(1, round(n_samples * eval_fraction / (1.0 - eval_fraction)))


@dataclass
class CalibrationSet:
    """每个领域的校准序列与留出序列。两者来自语料中互不重叠的字节区间。"""
    domains: list[DomainSpec]
    calib: dict[str, list[np.ndarray]] = field(default_factory=dict)
    eval: dict[str, list[np.ndarray]] = field(default_factory=dict)

    @property
    def domain_ids(self) -> list[str]:
        return [d.domain_id for d in self.domains]

    @property
    def alphas(self) -> dict[str, float]:
        return {d.domain_id: d.alpha for d in self.domains}

    def subset(self, domain_ids: Iterable[str]) -> "CalibrationSet":
        """只保留部分领域用于统计（α 重新归一化），留出集保持不变。"""
        wanted = list(domain_ids)
        missing = [d for d in wanted if d not in self.calib]
        if missing:
            raise ConfigError(f"未知领域: {missing}，可选 {self.domain_ids}")
        specs = normalize_weights([d for d in self.domains if d.domain_id in wanted])
        return CalibrationSet(specs, {d.domain_id: self.calib[d.domain_id] for d in specs}, self.eval)

    def eval_batch(self) -> list[np.ndarray]:
        """全部领域的留出序列，按领域顺序拼接。"""
        return [seq for domain_id in self.eval for seq in self.eval[domain_id]]


def build_calibration_set(domains: Sequence[DomainSpec], seq_len: int, n_samples: int, seed: int, *,
                          eval_fraction: float = 0.2, eval_seed: int | None = None,
                          n_eval: int | None = None) -> CalibrationSet:
    """
    前 (1 - eval_fraction) 的字节用于校准窗口，后 eval_fraction 的字节用于留出窗口。
    校准窗口由 seed 决定，留出窗口由 eval_seed 决定（默认与 seed 相同），二者互不影响。
    n_eval 可固定留出窗口数（例如扫描样本数时保持同一留出集）。
    """
    if not 0.0 <= eval_fraction < 1.0:
        raise ConfigError(f"eval_fraction 必须在 [0, 1) 内: {eval_fraction}")
    domains = normalize_weights(domains)
    # 每个领域都从同一起点取偏移：内容相同的语料得到相同的窗口
    calib_rng = Rng(seed).derive("calib")
    eval_rng = Rng(seed if eval_seed is None else eval_seed).derive("eval")
    if n_eval is None:
        n_eval = eval_count(n_samples, eval_fraction)
    elif n_eval > 0 and eval_fraction <= 0:
        raise ConfigError("固定留出窗口数时 eval_fraction 必须 > 0")

    out = CalibrationSet(list(domains))
    for spec in domains:
        data = read_domain_bytes(spec)
        if not data:
            raise IngestionError(spec.domain_id, "语料为空")
        cut = len(data) - int(len(data) * eval_fraction) if n_eval else len(data)
        out.calib[spec.domain_id] = _sample_windows(
            data[:cut], spec.domain_id, seq_len, n_samples, calib_rng.derive(0))
        if n_eval:
            out.eval[spec.domain_id] = _sample_windows(
                data[cut:], spec.domain_id, seq_len, n_eval, eval_rng.derive(0))
        logger.debug("领域 %s: %d 字节, 校准 %d 条, 留出 %d 条",
                     spec.domain_id, len(data), n_samples, n_eval)
    return out

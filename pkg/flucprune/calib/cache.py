"""
calib/cache.py
统计量缓存：只有模型状态 key、seed 和采样参数都一致时才命中。

文件布局：b"PSTC" | u32 version | u32 header_len | header(JSON) | 每个 site、每个领域依次 mean, m2（<f8）
均值和 M2 按 float64 原样存储，不降为 f32，命中缓存的结果与重新收集逐位一致。
"""
from __future__ import annotations
import hashlib
import json
import logging
import struct
from pathlib import Path

import numpy as np

from ..core.const import SiteKind
from ..core.errors import FormatError
from ..core.model import PruneSite
from .collect import DomainStats
from .corpus import DomainSpec
from .stats import ChannelStats

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"PSTC"
CACHE_VERSION = 1
_PREFIX = struct.Struct("<4sII")
_F64 = np.dtype("<f8")


def cache_key(model_key: str, seed: int, seq_len: int, n_samples: int, domains: list[DomainSpec],
              eval_fraction: float = 0.0) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"model": model_key, "seed": seed, "seq_len": seq_len, "n_samples": n_samples,
                         "eval_fraction": eval_fraction, "domains": [d.domain_id for d in domains]},
                        sort_keys=True).encode("utf-8"))
    for spec in domains:
        for source in spec.sources:
            h.update(Path(source).read_bytes())
    return h.hexdigest()


def stats_to_bytes(stats: DomainStats, key: str) -> bytes:
    header = {
        "key": key,
        "model_key": stats.model_key,
        "domains": list(stats.domains),
        "sites": [{"block": s.block_index, "kind": s.kind.label,
                   "width": stats.get(s, stats.domains[0]).width,
                   "counts": [stats.get(s, d).count for d in stats.domains]} for s in stats.sites],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(CACHE_MAGIC, CACHE_VERSION, len(header_bytes)), header_bytes]
    for site in stats.sites:
        for d in stats.domains:
            st = stats.get(site, d)
            parts += [st.mean.astype(_F64).tobytes(), st.m2.astype(_F64).tobytes()]
    return b"".join(parts)


def stats_from_bytes(buf: bytes) -> tuple[str, DomainStats]:
    if len(buf) < _PREFIX.size:
        raise FormatError("缓存文件被截断")
    magic, version, header_len = _PREFIX.unpack_from(buf, 0)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise FormatError(f"缓存 magic/版本不匹配: {magic!r} v{version}")
    offset = _PREFIX.size + header_len
    try:
        header = json.loads(buf[_PREFIX.size:offset].decode("utf-8"))
        domains = tuple(header["domains"])
        entries = header["sites"]
        sites = tuple(PruneSite(e["block"], SiteKind.from_label(e["kind"])) for e in entries)
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"缓存 header 解析失败: {e}") from e

    table: dict[PruneSite, dict[str, ChannelStats]] = {}
    for site, entry in zip(sites, entries):
        width = entry["width"]
        table[site] = {}
        for d, count in zip(domains, entry["counts"]):
            nbytes = 2 * width * _F64.itemsize
            if offset + nbytes > len(buf):
                raise FormatError("缓存文件被截断")
            arr = np.frombuffer(buf, dtype=_F64, count=2 * width, offset=offset).astype(np.float64)
            table[site][d] = ChannelStats(count, arr[:width].copy(), arr[width:].copy())
            offset += nbytes
    if offset != len(buf):
        raise FormatError("缓存文件末尾有多余数据")
    return header["key"], DomainStats(domains, sites, table, header.get("model_key", ""))


class StatsCache:
    """目录式缓存：<dir>/<key 前 16 位>.pstat"""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key[:16]}.pstat"

    def get(self, key: str) -> DomainStats | None:
        path = self._path(key)
        if not path.exists():
            return None
        stored_key, stats = stats_from_bytes(path.read_bytes())
        if stored_key != key:
            logger.info("缓存 key 不一致，忽略: %s", path)
            return None
        logger.debug("命中统计缓存: %s", path)
        return stats

    def put(self, key: str, stats: DomainStats) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self._path(key)
        path.write_bytes(stats_to_bytes(stats, key))
        return path

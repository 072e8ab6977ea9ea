"""
core/modelio.py
模型文件读写与模型指纹。

文件布局（全部 little-endian）：
    b"PKIT" | u32 version | u32 header_len | header(JSON, UTF-8) | f32 blobs
header = {"config": ..., "blocks": [{"live_heads": [...], "live_channels": [...]}, ...],
          "tensors": [{"name": ..., "shape": [rows, cols]}, ...]}
blobs 按 tensors 声明的顺序依次排列；一维向量（norm、bias）按 1 x d 存放。
"""
from __future__ import annotations
import hashlib
import json
import logging
import struct
from pathlib import Path

import numpy as np

from .const import MODEL_MAGIC, MODEL_VERSION
from .errors import ConfigError, FormatError
from .model import Block, Model, ModelConfig
from .tensor import Tensor2

logger = logging.getLogger(__name__)

_PREFIX = struct.Struct("<4sII")
_F32 = np.dtype("<f4")


def _named_tensors(model: Model) -> list[tuple[str, np.ndarray]]:
    out = [("embed", model.embed.data), ("pos", model.pos.data)]
    for b, blk in enumerate(model.blocks):
        p = f"blocks.{b}."
        out += [
            (p + "norm1", blk.norm1.reshape(1, -1)),
            (p + "wq", blk.wq.data), (p + "wk", blk.wk.data), (p + "wv", blk.wv.data),
            (p + "wo", blk.wo.data), (p + "wo_bias", blk.wo_bias.reshape(1, -1)),
            (p + "norm2", blk.norm2.reshape(1, -1)),
            (p + "w_gate", blk.w_gate.data), (p + "w_up", blk.w_up.data),
            (p + "w_down", blk.w_down.data), (p + "down_bias", blk.down_bias.reshape(1, -1)),
        ]
    out.append(("norm_f", model.norm_f.reshape(1, -1)))
    return out


def _expected_shapes(cfg: ModelConfig, live: list[dict]) -> list[tuple[str, tuple[int, int]]]:
    d, hd = cfg.d_model, cfg.head_dim
    out = [("embed", (cfg.vocab, d)), ("pos", (cfg.max_seq, d))]
    for b, entry in enumerate(live):
        inner = len(entry["live_heads"]) * hd
        c = len(entry["live_channels"])
        p = f"blocks.{b}."
        out += [
            (p + "norm1", (1, d)),
            (p + "wq", (inner, d)), (p + "wk", (inner, d)), (p + "wv", (inner, d)),
            (p + "wo", (d, inner)), (p + "wo_bias", (1, d)),
            (p + "norm2", (1, d)),
            (p + "w_gate", (c, d)), (p + "w_up", (c, d)),
            (p + "w_down", (d, c)), (p + "down_bias", (1, d)),
        ]
    out.append(("norm_f", (1, d)))
    return out


def model_to_bytes(model: Model) -> bytes:
    tensors = _named_tensors(model)
    header = {
        "config": model.config.to_dict(),
        "blocks": [{"live_heads": list(blk.live_heads), "live_channels": list(blk.live_channels)}
                   for blk in model.blocks],
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MODEL_MAGIC, MODEL_VERSION, len(header_bytes)), header_bytes]
    parts += [np.ascontiguousarray(arr, dtype=_F32).tobytes() for _, arr in tensors]
    return b"".join(parts)


def _validate_live(cfg: ModelConfig, live: list) -> None:
    if not isinstance(live, list) or len(live) != cfg.n_blocks:
        raise FormatError(f"存活形状表的 block 数与 n_blocks={cfg.n_blocks} 不一致")
    for b, entry in enumerate(live):
        for key, limit in (("live_heads", cfg.n_heads), ("live_channels", cfg.d_mlp)):
            units = entry.get(key) if isinstance(entry, dict) else None
            if (not isinstance(units, list) or not units
                    or any(not isinstance(u, int) for u in units)
                    or units != sorted(set(units)) or units[0] < 0 or units[-1] >= limit):
                raise FormatError(f"block {b} 的 {key} 非法: {units!r}")


def model_from_bytes(buf: bytes) -> Model:
    if len(buf) < _PREFIX.size:
        raise FormatError("文件被截断：缺少文件头")
    magic, version, header_len = _PREFIX.unpack_from(buf, 0)
    if magic != MODEL_MAGIC:
        raise FormatError(f"magic 不匹配: {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"不支持的版本: {version}（期望 {MODEL_VERSION}）")
    start = _PREFIX.size
    if len(buf) < start + header_len:
        raise FormatError("文件被截断：header 不完整")
    try:
        header = json.loads(buf[start:start + header_len].decode("utf-8"))
        cfg = ModelConfig.from_dict(header["config"])
        live = header["blocks"]
        declared = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ConfigError) as e:
        raise FormatError(f"header 解析失败: {e}") from e

    _validate_live(cfg, live)
    expected = _expected_shapes(cfg, live)
    if declared != expected:
        raise FormatError("header 中的张量表与 config / 存活形状表不一致")

    offset = start + header_len
    arrays: dict[str, np.ndarray] = {}
    for name, (rows, cols) in expected:
        nbytes = rows * cols * _F32.itemsize
        if offset + nbytes > len(buf):
            raise FormatError(f"文件被截断：张量 {name} 不完整")
        arrays[name] = np.frombuffer(buf, dtype=_F32, count=rows * cols, offset=offset) \
            .reshape(rows, cols).astype(np.float32)
        if not np.isfinite(arrays[name]).all():
            raise FormatError(f"张量 {name} 含有非有限值")
        offset += nbytes
    if offset != len(buf):
        raise FormatError(f"文件末尾有 {len(buf) - offset} 字节多余数据")

    try:
        blocks = []
        for b, entry in enumerate(live):
            p = f"blocks.{b}."
            blocks.append(Block(
                norm1=arrays[p + "norm1"][0].copy(),
                norm2=arrays[p + "norm2"][0].copy(),
                wq=Tensor2(arrays[p + "wq"]), wk=Tensor2(arrays[p + "wk"]), wv=Tensor2(arrays[p + "wv"]),
                wo=Tensor2(arrays[p + "wo"]), wo_bias=arrays[p + "wo_bias"][0].copy(),
                w_gate=Tensor2(arrays[p + "w_gate"]), w_up=Tensor2(arrays[p + "w_up"]),
                w_down=Tensor2(arrays[p + "w_down"]), down_bias=arrays[p + "down_bias"][0].copy(),
                live_heads=tuple(entry["live_heads"]),
                live_channels=tuple(entry["live_channels"]),
            ))
        return Model(cfg, Tensor2(arrays["embed"]), Tensor2(arrays["pos"]), blocks,
                     arrays["norm_f"][0].copy())
    except ArithmeticError as e:
        raise FormatError(f"张量数据非法: {e}") from e


def save_model(model: Model, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(model_to_bytes(model))
    logger.debug("模型已保存: %s", path)
    return path


def load_model(path: str | Path) -> Model:
    return model_from_bytes(Path(path).read_bytes())


def model_key(model: Model) -> str:
    """模型状态指纹：序列化字节的 sha256。同一状态 → 同一 key。"""
    return hashlib.sha256(model_to_bytes(model)).hexdigest()

from __future__ import annotations
from enum import IntEnum

# =========================================================
# 模型默认值
# =========================================================
VOCAB_SIZE = 256          # byte-level，不需要 tokenizer
INIT_STDDEV = 0.02        # 权重初始化 N(0, 0.02)
RMS_EPS = 1e-6

# =========================================================
# 模型文件格式
# =========================================================
# PKIT | u32 version | u32 header_len | JSON header | f32 blobs (little-endian)
MODEL_MAGIC = b"PKIT"
MODEL_VERSION = 1


class SiteKind(IntEnum):
    """每个 block 的两个可剪枝位置。数值即同一 block 内的处理顺序（先注意力后 MLP）。"""
    ATTN_HEADS = 0
    MLP_CHANNELS = 1

    @property
    def label(self) -> str:
        return "attn" if self == SiteKind.ATTN_HEADS else "mlp"

    @staticmethod
    def from_label(text: str) -> "SiteKind":
        for kind in SiteKind:
            if kind.label == text:
                return kind
        raise ValueError(f"未知的 site 类型: {text!r}")

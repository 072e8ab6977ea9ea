"""
core/model.py
桌面规模的 decoder-only transformer：
  embedding + 可学习位置编码 → N × [RMSNorm → 因果多头注意力 → RMSNorm → gated MLP] → RMSNorm → tied head

权重布局为 (out x in)，即 y = x · Wᵀ + b。
每个 block 有两个可剪枝位置（PruneSite）：
  - ATTN_HEADS：wo 的输入（各头拼接后的注意力输出），剪枝单位为一个头
  - MLP_CHANNELS：w_down 的输入（silu(gate) * up），剪枝单位为一个通道
"""
from __future__ import annotations
import copy
import logging
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from .const import INIT_STDDEV, VOCAB_SIZE, SiteKind
from .errors import ConfigError, InputError, ShapeError
from .rng import Rng, rand_normal
from .tensor import Tensor2, linear_np, mm, rms_norm_np, silu_np, softmax_rows_np

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class ModelConfig:
    vocab: int = VOCAB_SIZE
    d_model: int = 64
    n_blocks: int = 4
    n_heads: int = 4
    head_dim: int = 16
    d_mlp: int = 256
    max_seq: int = 64

    def __post_init__(self):
        for name in ("vocab", "d_model", "n_blocks", "n_heads", "head_dim", "d_mlp", "max_seq"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"ModelConfig.{name} 必须是 >= 1 的整数，得到 {value!r}")
        if self.d_model != self.n_heads * self.head_dim:
            raise ConfigError(
                f"d_model({self.d_model}) 必须等于 n_heads({self.n_heads}) x head_dim({self.head_dim})")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        unknown = set(d) - set(ModelConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"ModelConfig 含未知字段: {sorted(unknown)}")
        if "head_dim" not in d:
            # 只给了 d_model / n_heads 时推导 head_dim
            fields = ModelConfig.__dataclass_fields__
            d_model = d.get("d_model", fields["d_model"].default)
            n_heads = d.get("n_heads", fields["n_heads"].default)
            if n_heads < 1 or d_model % n_heads != 0:
                raise ConfigError(f"d_model({d_model}) 不能被 n_heads({n_heads}) 整除")
            d["head_dim"] = d_model // n_heads
        return ModelConfig(**d)


@dataclass(frozen=True, slots=True, order=True)
class PruneSite:
    """(block, 类型)。排序即固定的处理顺序：block0 注意力、block0 MLP、block1 注意力……"""
    block_index: int
    kind: SiteKind

    @property
    def label(self) -> str:
        return f"b{self.block_index}.{self.kind.label}"

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True, slots=True)
class ActivationTap:
    """某个 site 的消费矩阵（wo / w_down）的输入，shape = (tokens, 当前存活通道数)。"""
    site: PruneSite
    values: Tensor2


# hook(site, values) -> 替换后的 values 或 None（不修改）
ActivationHook = Callable[[PruneSite, np.ndarray], "np.ndarray | None"]


@dataclass
class Block:
    norm1: np.ndarray
    norm2: np.ndarray
    wq: Tensor2
    wk: Tensor2
    wv: Tensor2
    wo: Tensor2
    wo_bias: np.ndarray
    w_gate: Tensor2
    w_up: Tensor2
    w_down: Tensor2
    down_bias: np.ndarray
    live_heads: tuple[int, ...]       # 原始头编号
    live_channels: tuple[int, ...]    # 原始 MLP 通道编号

    @property
    def n_live_heads(self) -> int:
        return len(self.live_heads)

    @property
    def n_live_channels(self) -> int:
        return len(self.live_channels)


@dataclass
class Model:
    config: ModelConfig
    embed: Tensor2            # (vocab, d_model)，同时作为输出头
    pos: Tensor2              # (max_seq, d_model)
    blocks: list[Block]
    norm_f: np.ndarray
    meta: dict = field(default_factory=dict)

    def sites(self) -> list[PruneSite]:
        return [PruneSite(b, kind) for b in range(len(self.blocks)) for kind in SiteKind]

    def block(self, site: PruneSite) -> Block:
        return self.blocks[site.block_index]

    def live_units(self, site: PruneSite) -> tuple[int, ...]:
        blk = self.block(site)
        return blk.live_heads if site.kind == SiteKind.ATTN_HEADS else blk.live_channels

    def original_units(self, site: PruneSite) -> int:
        return self.config.n_heads if site.kind == SiteKind.ATTN_HEADS else self.config.d_mlp

    def unit_width(self, site: PruneSite) -> int:
        """一个剪枝单位对应的通道数。"""
        return self.config.head_dim if site.kind == SiteKind.ATTN_HEADS else 1

    def live_channels(self, site: PruneSite) -> int:
        return len(self.live_units(site)) * self.unit_width(site)

    def consuming_weight(self, site: PruneSite) -> Tensor2:
        blk = self.block(site)
        return blk.wo if site.kind == SiteKind.ATTN_HEADS else blk.w_down

    def copy(self) -> "Model":
        return copy.deepcopy(self)


def init_model(cfg: ModelConfig, rng: Rng) -> Model:
    """权重 ~ N(0, 0.02)，bias 为 0，norm 为 1。按固定顺序抽样，同一 seed 得到同一模型。"""
    d, inner = cfg.d_model, cfg.n_heads * cfg.head_dim
    embed = rand_normal(rng, cfg.vocab, d, INIT_STDDEV)
    pos = rand_normal(rng, cfg.max_seq, d, INIT_STDDEV)
    blocks = []
    for _ in range(cfg.n_blocks):
        blocks.append(Block(
            norm1=np.ones(d, dtype=np.float32),
            norm2=np.ones(d, dtype=np.float32),
            wq=rand_normal(rng, inner, d, INIT_STDDEV),
            wk=rand_normal(rng, inner, d, INIT_STDDEV),
            wv=rand_normal(rng, inner, d, INIT_STDDEV),
            wo=rand_normal(rng, d, inner, INIT_STDDEV),
            wo_bias=np.zeros(d, dtype=np.float32),
            w_gate=rand_normal(rng, cfg.d_mlp, d, INIT_STDDEV),
            w_up=rand_normal(rng, cfg.d_mlp, d, INIT_STDDEV),
            w_down=rand_normal(rng, d, cfg.d_mlp, INIT_STDDEV),
            down_bias=np.zeros(d, dtype=np.float32),
            live_heads=tuple(range(cfg.n_heads)),
            live_channels=tuple(range(cfg.d_mlp)),
        ))
    model = Model(cfg, embed, pos, blocks, np.ones(d, dtype=np.float32))
    logger.debug("初始化模型: %s, 参数量 %d", cfg, param_count(model))
    return model


def _check_tokens(model: Model, token_ids: Sequence[int] | np.ndarray) -> np.ndarray:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError(f"token 序列必须是非空一维序列，得到 shape={ids.shape}")
    if ids.size > model.config.max_seq:
        raise InputError(f"序列长度 {ids.size} 超过 max_seq={model.config.max_seq}")
    if ids.min() < 0 or ids.max() >= model.config.vocab:
        raise InputError(f"token 越界: 取值范围 [{ids.min()}, {ids.max()}]，vocab={model.config.vocab}")
    return ids


def _apply_hook(hook: ActivationHook | None, site: PruneSite, values: np.ndarray) -> np.ndarray:
    if hook is None:
        return values
    replaced = hook(site, values)
    if replaced is None:
        return values
    replaced = np.asarray(replaced, dtype=np.float32)
    if replaced.shape != values.shape:
        raise ShapeError(f"hook 返回的 shape {replaced.shape} 与原激活 {values.shape} 不一致 ({site})")
    return replaced


def _attention(blk: Block, h: np.ndarray, head_dim: int) -> np.ndarray:
    """因果多头注意力，返回拼接后的各头输出 (L, H_live*head_dim)。"""
    L = h.shape[0]
    H = blk.n_live_heads
    q = linear_np(h, blk.wq.data).reshape(L, H, head_dim).transpose(1, 0, 2)
    k = linear_np(h, blk.wk.data).reshape(L, H, head_dim).transpose(1, 0, 2)
    v = linear_np(h, blk.wv.data).reshape(L, H, head_dim).transpose(1, 0, 2)
    scores = mm(q, k.transpose(0, 2, 1)) * np.float32(1.0 / np.sqrt(head_dim))
    causal = np.tril(np.ones((L, L), dtype=bool))
    scores = np.where(causal, scores, -np.inf)
    probs = softmax_rows_np(scores)
    out = mm(probs, v)                              # (H, L, hd)
    return out.transpose(1, 0, 2).reshape(L, H * head_dim)


def forward(model: Model, token_ids: Sequence[int] | np.ndarray, *,
            hook: ActivationHook | None = None,
            hidden_out: list[np.ndarray] | None = None) -> tuple[Tensor2, list[ActivationTap]]:
    """
    前向计算。

    Returns:
        logits: (len, vocab)
        taps: 每个 block 依次为 [注意力 site, MLP site] 的 wo / w_down 输入
    hook 可以替换 site 处的激活（记录到 tap 中的是替换后的值）；
    hidden_out 非空时依次追加每个 block 之后的残差流。
    """
    cfg = model.config
    ids = _check_tokens(model, token_ids)
    L = ids.size
    x = (model.embed.data[ids].astype(np.float64) + model.pos.data[:L].astype(np.float64)).astype(np.float32)
    taps: list[ActivationTap] = []

    for b, blk in enumerate(model.blocks):
        # 注意力
        h = rms_norm_np(x, blk.norm1)
        site = PruneSite(b, SiteKind.ATTN_HEADS)
        attn_in = _apply_hook(hook, site, _attention(blk, h, cfg.head_dim))
        taps.append(ActivationTap(site, Tensor2(attn_in)))
        x = (x.astype(np.float64) + linear_np(attn_in, blk.wo.data, blk.wo_bias)).astype(np.float32)

        # gated MLP
        h = rms_norm_np(x, blk.norm2)
        site = PruneSite(b, SiteKind.MLP_CHANNELS)
        act = silu_np(linear_np(h, blk.w_gate.data)) * linear_np(h, blk.w_up.data)
        act = _apply_hook(hook, site, act.astype(np.float32))
        taps.append(ActivationTap(site, Tensor2(act)))
        x = (x.astype(np.float64) + linear_np(act, blk.w_down.data, blk.down_bias)).astype(np.float32)

        if hidden_out is not None:
            hidden_out.append(x.copy())

    logits = linear_np(rms_norm_np(x, model.norm_f), model.embed.data)
    return Tensor2(logits), taps


# =========================================================
# 参数量
# =========================================================
# 固定部分: vocab*d + max_seq*d + d(最终 norm) + 每个 block 4*d（两个 norm + 两个输出 bias）
# 可剪枝部分（每个 block）: 4*d*head_dim*H_live（wq/wk/wv/wo） + 3*d*C_live（gate/up/down）

def unit_param_count(cfg: ModelConfig, kind: SiteKind) -> int:
    """剪掉一个单位减少的参数量。"""
    if kind == SiteKind.ATTN_HEADS:
        return 4 * cfg.d_model * cfg.head_dim
    return 3 * cfg.d_model


def fixed_param_count(cfg: ModelConfig) -> int:
    d = cfg.d_model
    return cfg.vocab * d + cfg.max_seq * d + d + cfg.n_blocks * 4 * d


def prunable_param_count(model: Model) -> int:
    cfg = model.config
    return sum(blk.n_live_heads * unit_param_count(cfg, SiteKind.ATTN_HEADS)
               + blk.n_live_channels * unit_param_count(cfg, SiteKind.MLP_CHANNELS)
               for blk in model.blocks)


def param_count(model: Model) -> int:
    return fixed_param_count(model.config) + prunable_param_count(model)


def config_param_count(cfg: ModelConfig) -> int:
    """未剪枝模型的闭式参数量。"""
    per_block = (cfg.n_heads * unit_param_count(cfg, SiteKind.ATTN_HEADS)
                 + cfg.d_mlp * unit_param_count(cfg, SiteKind.MLP_CHANNELS))
    return fixed_param_count(cfg) + cfg.n_blocks * per_block

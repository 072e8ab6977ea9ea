"""
共享 fixture：小模型、合成四领域语料、独立实现的前向 oracle、级联方差构造网络与 TOY 尺寸的级联玩具模型。
"""
from __future__ import annotations
import json
from pathlib import Path

import numpy as np
import pytest

from flucprune.calib.corpus import DomainSpec, load_manifest
from flucprune.core.model import Block, Model, ModelConfig, init_model
from flucprune.core.rng import Rng, rand_normal
from flucprune.core.tensor import Tensor2

TINY = ModelConfig(vocab=256, d_model=16, n_blocks=2, n_heads=2, head_dim=8, d_mlp=32, max_seq=16)
TOY = ModelConfig()   # 4 个 block，d_model 64，4 个头，d_mlp 256


def random_model(cfg: ModelConfig, seed: int, stddev: float = 0.2) -> Model:
    """比默认初始化更"有棱角"的随机模型：权重方差更大，norm 与 bias 也随机。"""
    rng = Rng(seed).derive("test-model")
    d, inner = cfg.d_model, cfg.n_heads * cfg.head_dim

    def vec(n: int, center: float = 0.0) -> np.ndarray:
        return (rng.normal(n) * stddev + center).astype(np.float32)

    blocks = [Block(
        norm1=vec(d, 1.0), norm2=vec(d, 1.0),
        wq=rand_normal(rng, inner, d, stddev), wk=rand_normal(rng, inner, d, stddev),
        wv=rand_normal(rng, inner, d, stddev), wo=rand_normal(rng, d, inner, stddev),
        wo_bias=vec(d),
        w_gate=rand_normal(rng, cfg.d_mlp, d, stddev), w_up=rand_normal(rng, cfg.d_mlp, d, stddev),
        w_down=rand_normal(rng, d, cfg.d_mlp, stddev), down_bias=vec(d),
        live_heads=tuple(range(cfg.n_heads)), live_channels=tuple(range(cfg.d_mlp)),
    ) for _ in range(cfg.n_blocks)]
    return Model(cfg, rand_normal(rng, cfg.vocab, d, stddev), rand_normal(rng, cfg.max_seq, d, stddev),
                 blocks, vec(d, 1.0))


def random_tokens(seed: int, length: int, n: int = 1, vocab: int = 256) -> list[np.ndarray]:
    rng = Rng(seed).derive("tokens")
    return [rng.integers(vocab, length) for _ in range(n)]


@pytest.fixture
def tiny_model() -> Model:
    return random_model(TINY, 1)


@pytest.fixture
def toy_init_model() -> Model:
    return init_model(TOY, Rng(7))


# =========================================================
# 合成语料
# =========================================================

# 每个领域一种字节分布：(取值下界, 取值个数, 偏斜指数)
_SYNTHETIC = {
    "letters": (97, 26, 1.0),
    "digits": (48, 10, 1.0),
    "upper": (65, 26, 3.0),
    "high": (160, 96, 0.5),
}


def write_synthetic_corpus(directory: Path, n_bytes: int = 4096) -> Path:
    """写出四个领域文件和混合清单，返回清单路径。"""
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, (domain_id, (low, span, skew)) in enumerate(_SYNTHETIC.items()):
        u = Rng(100 + k).uniform(n_bytes)
        data = (low + np.floor((u ** skew) * span)).astype(np.uint8)
        (directory / f"{domain_id}.bin").write_bytes(data.tobytes())
        entries.append({"domain": domain_id, "path": f"{domain_id}.bin", "alpha": 0.25})
    manifest = directory / "mixture.json"
    manifest.write_text(json.dumps(entries), encoding="utf-8")
    return manifest


@pytest.fixture
def synthetic_manifest(tmp_path) -> Path:
    return write_synthetic_corpus(tmp_path / "corpus")


@pytest.fixture
def synthetic_domains(synthetic_manifest) -> list[DomainSpec]:
    return load_manifest(synthetic_manifest)


# =========================================================
# 独立实现的前向（逐头、逐位置循环，float64，不走 forward 的任何辅助函数）
# =========================================================

def _rms(x: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x) + 1e-6) * scale


def oracle_forward(model: Model, ids) -> np.ndarray:
    cfg = model.config
    f = lambda t: np.asarray(t.data if isinstance(t, Tensor2) else t, dtype=np.float64)
    E, P = f(model.embed), f(model.pos)
    L = len(ids)
    xs = [E[ids[t]] + P[t] for t in range(L)]
    for blk in model.blocks:
        hd = cfg.head_dim
        H = blk.n_live_heads
        hs = [_rms(x, f(blk.norm1)) for x in xs]
        q = [f(blk.wq) @ h for h in hs]
        k = [f(blk.wk) @ h for h in hs]
        v = [f(blk.wv) @ h for h in hs]
        new = []
        for t in range(L):
            heads = []
            for a in range(H):
                sl = slice(a * hd, (a + 1) * hd)
                logits = np.array([q[t][sl] @ k[s][sl] / np.sqrt(hd) for s in range(t + 1)])
                w = np.exp(logits - logits.max())
                w /= w.sum()
                heads.append(sum(w[s] * v[s][sl] for s in range(t + 1)))
            concat = np.concatenate(heads)
            new.append(xs[t] + f(blk.wo) @ concat + f(blk.wo_bias))
        xs = new
        out = []
        for x in xs:
            h = _rms(x, f(blk.norm2))
            g = f(blk.w_gate) @ h
            act = g / (1.0 + np.exp(-g)) * (f(blk.w_up) @ h)
            out.append(x + f(blk.w_down) @ act + f(blk.down_bias))
        xs = out
    return np.stack([E @ _rms(x, f(model.norm_f)) for x in xs])


@pytest.fixture
def reference_forward():
    return oracle_forward


# =========================================================
# 级联方差构造网络
# =========================================================
# block0 MLP 通道 0 读 dim1（随 token 变化），写到 dim2；
# block1 MLP 通道 0 读 dim2。剪掉 block0 的通道 0 并补偿后，dim2 变为常数。
CASCADE = ModelConfig(vocab=256, d_model=8, n_blocks=2, n_heads=2, head_dim=4, d_mlp=4, max_seq=16)


def cascade_model() -> Model:
    cfg = CASCADE
    d = cfg.d_model
    zeros = lambda r, c: np.zeros((r, c), dtype=np.float32)
    embed = zeros(cfg.vocab, d)
    embed[:, 0] = 10.0
    embed[:, 1] = np.arange(cfg.vocab) / 255.0 - 0.5

    def block() -> Block:
        return Block(
            norm1=np.ones(d, dtype=np.float32), norm2=np.ones(d, dtype=np.float32),
            wq=Tensor2(zeros(8, d)), wk=Tensor2(zeros(8, d)), wv=Tensor2(zeros(8, d)),
            wo=Tensor2(zeros(d, 8)), wo_bias=np.zeros(d, dtype=np.float32),
            w_gate=Tensor2(zeros(4, d)), w_up=Tensor2(zeros(4, d)), w_down=Tensor2(zeros(d, 4)),
            down_bias=np.zeros(d, dtype=np.float32),
            live_heads=(0, 1), live_channels=(0, 1, 2, 3),
        )

    b0, b1 = block(), block()
    gate, up, down = zeros(4, d), zeros(4, d), zeros(d, 4)
    gate[0, 1] = up[0, 1] = 4.0
    down[2, 0] = 5.0
    b0.w_gate, b0.w_up, b0.w_down = Tensor2(gate), Tensor2(up), Tensor2(down)

    gate, up, down = zeros(4, d), zeros(4, d), zeros(d, 4)
    gate[0, 2] = up[0, 2] = 4.0
    gate[1, 1] = up[1, 1] = 4.0
    down[3, 0] = down[3, 1] = 1.0
    b1.w_gate, b1.w_up, b1.w_down = Tensor2(gate), Tensor2(up), Tensor2(down)
    return Model(cfg, Tensor2(embed), Tensor2(zeros(cfg.max_seq, d)), [b0, b1], np.ones(d, dtype=np.float32))


@pytest.fixture
def cascade():
    return cascade_model()


# =========================================================
# 带级联结构的玩具模型（TOY 尺寸）
# =========================================================
# 残差维度分工：0 常数；1..32 输入；33..56 输出（只有它们进入 logits）；
# 57..60 两对级联通道；61 读者输出；62 注意力输出；63 空。
# 偶数 block 有 32 个"喂入"通道：激活方差正常，但只以 0.001 写进级联维度，得分最低。
# 奇数 block 有 32 个"读者"通道：只读级联维度，输出正负抵消，单看得分很高。
# 一次性剪枝会保留读者、多剪 32 个真实通道；逐步剪掉喂入通道后，读者方差塌缩，下一步被剪掉。
_TOY_INPUT = slice(1, 33)
_TOY_OUTPUT = slice(33, 57)
_TOY_READER_OUT = 61
_TOY_ATTN_OUT = 62


def cascade_toy_model(seed: int) -> Model:
    cfg = TOY
    rng = Rng(seed).derive("cascade-toy")
    d, inner, c = cfg.d_model, cfg.n_heads * cfg.head_dim, cfg.d_mlp
    n_in, n_out = _TOY_INPUT.stop - _TOY_INPUT.start, _TOY_OUTPUT.stop - _TOY_OUTPUT.start

    def gaussian(rows: int, cols: int, scale: float) -> np.ndarray:
        return (rng.normal(rows * cols).reshape(rows, cols) * scale).astype(np.float32)

    zeros = lambda r, k: np.zeros((r, k), dtype=np.float32)
    embed = zeros(cfg.vocab, d)
    embed[:, 0] = 10.0
    embed[:, _TOY_INPUT] = gaussian(cfg.vocab, n_in, 0.3)
    embed[:, _TOY_OUTPUT] = gaussian(cfg.vocab, n_out, 0.3)
    norm_f = np.zeros(d, dtype=np.float32)
    norm_f[_TOY_OUTPUT] = 1.0
    signs = np.array([1.0] * 8 + [-1.0] * 8, dtype=np.float32)

    blocks = []
    for b in range(cfg.n_blocks):
        pair = b // 2
        p0, p1 = 57 + 2 * pair, 58 + 2 * pair

        wv = zeros(inner, d)
        wv[:, _TOY_INPUT] = gaussian(inner, n_in, 1.0 / np.sqrt(n_in))
        wo = zeros(d, inner)
        wo[_TOY_ATTN_OUT] = gaussian(1, inner, 0.05)[0]

        gate, up, down = zeros(c, d), zeros(c, d), zeros(d, c)
        gate[:, 0] = 1.0
        order = rng.permutation(c)
        special, real = order[:32], order[32:]
        gains = (0.1 + 0.9 * rng.uniform(len(real))).astype(np.float32)
        up[np.ix_(real, np.arange(_TOY_INPUT.start, _TOY_INPUT.stop))] = \
            gaussian(len(real), n_in, 1.0 / np.sqrt(n_in)) * gains[:, None]
        down[np.ix_(np.arange(_TOY_OUTPUT.start, _TOY_OUTPUT.stop), real)] = \
            gaussian(n_out, len(real), 0.05 / np.sqrt(n_out))
        if b % 2 == 0:
            up[np.ix_(special, np.arange(_TOY_INPUT.start, _TOY_INPUT.stop))] = \
                gaussian(len(special), n_in, 1.0 / np.sqrt(n_in))
            down[p0, special[:16]] = 0.001
            down[p1, special[16:]] = 0.001
        else:
            up[special[:16], p0] = 30.0
            up[special[16:], p1] = 30.0
            down[_TOY_READER_OUT, special[:16]] = 0.1 * signs
            down[_TOY_READER_OUT, special[16:]] = 0.1 * signs

        blocks.append(Block(
            norm1=np.ones(d, dtype=np.float32), norm2=np.ones(d, dtype=np.float32),
            wq=Tensor2(gaussian(inner, d, 0.02)), wk=Tensor2(gaussian(inner, d, 0.02)),
            wv=Tensor2(wv), wo=Tensor2(wo), wo_bias=np.zeros(d, dtype=np.float32),
            w_gate=Tensor2(gate), w_up=Tensor2(up), w_down=Tensor2(down),
            down_bias=np.zeros(d, dtype=np.float32),
            live_heads=tuple(range(cfg.n_heads)), live_channels=tuple(range(c)),
        ))
    return Model(cfg, Tensor2(embed), Tensor2(zeros(cfg.max_seq, d)), blocks, norm_f)

import numpy as np
import pytest

from flucprune.calib.collect import MixedStats, SiteMoments, collect_stats_from_sequences, mix_stats
from flucprune.core.const import SiteKind
from flucprune.core.errors import ConfigError, InsufficientDataError, ShapeError
from flucprune.core.model import ModelConfig, PruneSite, forward, param_count, prunable_param_count
from flucprune.core.modelio import model_to_bytes
from flucprune.core.rng import Rng
from flucprune.core.tensor import Tensor2
from flucprune.prune import (
    Allocation, BiasVector, FluctuationScores, PruneMask, apply_prune, compensate,
    global_targets, score, select_mask, target_masks, uniform_targets,
)
from flucprune.test.conftest import TINY, random_model, random_tokens

ATTN = PruneSite(0, SiteKind.ATTN_HEADS)
MLP = PruneSite(0, SiteKind.MLP_CHANNELS)


def moments_for(model, seed: int = 0, scale: float = 1.0) -> MixedStats:
    """随机但合法的混合统计（宽度与模型当前存活通道一致）。"""
    rng = Rng(seed)
    table = {}
    for site in model.sites():
        w = model.live_channels(site)
        table[site] = SiteMoments(rng.normal(w) * scale, (rng.uniform(w) + 0.1) * scale ** 2, 100)
    return MixedStats(table)


def unit_scores(site, values, units=None) -> FluctuationScores:
    values = np.asarray(values, dtype=np.float64)
    units = tuple(range(len(values))) if units is None else units
    return FluctuationScores(site, units, values, values)


# =========================================================
# 打分
# =========================================================

class TestScore:
    def test_direct_formula(self, tiny_model):
        stats = moments_for(tiny_model, 1)
        sc = score(stats, tiny_model, MLP)
        w = tiny_model.blocks[0].w_down.data.astype(np.float64)
        expected = np.array([stats[MLP].variance[j] * sum(w[i, j] ** 2 for i in range(w.shape[0]))
                             for j in range(w.shape[1])])
        np.testing.assert_allclose(sc.per_channel, expected, rtol=1e-6)
        np.testing.assert_array_equal(sc.per_unit, sc.per_channel)

    def test_head_score_is_channel_sum(self, tiny_model):
        sc = score(moments_for(tiny_model, 2), tiny_model, ATTN)
        hd = TINY.head_dim
        assert sc.units == (0, 1)
        np.testing.assert_allclose(sc.per_unit, [sc.per_channel[:hd].sum(), sc.per_channel[hd:].sum()])

    def test_zero_variance_channel(self, tiny_model):
        stats = moments_for(tiny_model, 3)
        stats[MLP].variance[5] = 0.0
        assert score(stats, tiny_model, MLP).per_channel[5] == 0.0

    def test_column_scaling(self, tiny_model):
        stats = moments_for(tiny_model, 4)
        before = score(stats, tiny_model, MLP).per_channel
        w = tiny_model.blocks[0].w_down.data.copy()
        w[:, 3] *= 2.5
        tiny_model.blocks[0].w_down = Tensor2(w)
        after = score(stats, tiny_model, MLP).per_channel
        assert after[3] == pytest.approx(before[3] * 2.5 ** 2, rel=1e-6)
        np.testing.assert_array_equal(np.delete(after, 3), np.delete(before, 3))

    def test_keep_set_invariant_under_activation_scaling(self, tiny_model):
        base = moments_for(tiny_model, 5, scale=1.0)
        scaled = moments_for(tiny_model, 5, scale=7.0)
        for site in tiny_model.sites():
            prior = PruneMask.from_model(tiny_model, site)
            target = max(1, len(prior.live_units) // 2)
            a = select_mask(score(base, tiny_model, site), target, prior)
            b = select_mask(score(scaled, tiny_model, site), target, prior)
            assert a == b

    def test_width_mismatch(self, tiny_model):
        stats = MixedStats({MLP: SiteMoments(np.zeros(3), np.ones(3), 10)})
        with pytest.raises(ShapeError):
            score(stats, tiny_model, MLP)

    def test_insufficient_count(self, tiny_model):
        w = TINY.d_mlp
        stats = MixedStats({MLP: SiteMoments(np.zeros(w), np.ones(w), 1)})
        with pytest.raises(InsufficientDataError):
            score(stats, tiny_model, MLP)


# =========================================================
# 掩码
# =========================================================

class TestSelectMask:
    def test_hand_case(self):
        mask = select_mask(unit_scores(MLP, [3, 1, 2]), 2, PruneMask.full(MLP, 3))
        assert mask.live_units == (0, 2)

    def test_ties_prune_lower_index_first(self):
        mask = select_mask(unit_scores(MLP, [1, 1, 1]), 2, PruneMask.full(MLP, 3))
        assert mask.live_units == (1, 2)

    def test_matches_sort_oracle(self):
        rng = Rng(12)
        for trial in range(30):
            sub = rng.derive(trial)
            n = int(sub.integers(20, 1)[0]) + 2
            values = np.round(sub.uniform(n) * 5)        # 有意制造并列
            target = int(sub.integers(n, 1)[0]) + 1
            mask = select_mask(unit_scores(MLP, values), target, PruneMask.full(MLP, n))
            oracle = sorted(range(n), key=lambda i: (values[i], i))[n - target:]
            assert mask.live_units == tuple(sorted(oracle))

    def test_respects_prior(self):
        prior = PruneMask(MLP, (1, 0, 1, 1, 0))
        mask = select_mask(unit_scores(MLP, [0.5, 0.1, 0.9], units=(0, 2, 3)), 2, prior)
        assert mask.keep == (1, 0, 0, 1, 0)
        assert mask.is_subset_of(prior)

    def test_cannot_empty_a_site(self):
        with pytest.raises(ConfigError):
            select_mask(unit_scores(MLP, [1, 2]), 0, PruneMask.full(MLP, 2))

    def test_cannot_grow(self):
        with pytest.raises(ConfigError):
            select_mask(unit_scores(MLP, [1, 2]), 3, PruneMask.full(MLP, 2))

    def test_units_must_match_prior(self):
        with pytest.raises(ShapeError):
            select_mask(unit_scores(MLP, [1, 2, 3]), 1, PruneMask(MLP, (1, 1, 0)))


class TestTargets:
    def test_uniform_floor(self, tiny_model):
        targets = uniform_targets(tiny_model, 0.3)
        assert targets[ATTN] == 2          # floor(0.6) = 0 个头被剪
        assert targets[MLP] == 32 - 9      # floor(9.6) = 9

    def test_uniform_keeps_one(self, tiny_model):
        assert uniform_targets(tiny_model, 0.99)[ATTN] == 1

    def test_global_within_budget(self, tiny_model):
        stats = moments_for(tiny_model, 6)
        scores = {s: score(stats, tiny_model, s) for s in tiny_model.sites()}
        total = prunable_param_count(tiny_model)
        targets = global_targets(tiny_model, scores, 0.5, total)
        removed = sum((len(tiny_model.live_units(s)) - t) * (4 * 16 * 8 if s.kind == SiteKind.ATTN_HEADS else 3 * 16)
                      for s, t in targets.items())
        assert removed <= 0.5 * total
        assert 0.5 * total - removed <= 4 * 16 * 8
        assert all(t >= 1 for t in targets.values())

    def test_target_masks_are_monotone(self, tiny_model):
        stats = moments_for(tiny_model, 7)
        scores = {s: score(stats, tiny_model, s) for s in tiny_model.sites()}
        masks = target_masks(tiny_model, scores, 0.5, Allocation.UNIFORM, prunable_param_count(tiny_model))
        assert masks[MLP].popcount == 16 and masks[ATTN].popcount == 1


# =========================================================
# 补偿与裁剪
# =========================================================

class TestCompensate:
    def test_all_keep_is_zero(self, tiny_model):
        bias = compensate(tiny_model, MLP, PruneMask.full(MLP, 32), moments_for(tiny_model, 1))
        assert not bias.values.any()

    def test_zero_mean_is_zero(self, tiny_model):
        stats = moments_for(tiny_model, 1)
        stats[MLP].mean[:] = 0.0
        mask = PruneMask(MLP, (0, 1) * 16)
        assert not compensate(tiny_model, MLP, mask, stats).values.any()

    def test_value(self, tiny_model):
        stats = moments_for(tiny_model, 2)
        keep = (1, 0) * 16
        bias = compensate(tiny_model, MLP, PruneMask(MLP, keep), stats)
        w = tiny_model.blocks[0].w_down.data.astype(np.float64)
        dropped = [j for j, k in enumerate(keep) if not k]
        np.testing.assert_allclose(bias.values, w[:, dropped] @ stats[MLP].mean[dropped], rtol=1e-12)

    def test_identity_with_constant_channels(self, tiny_model):
        """被剪通道恒等于均值时：W·X = (m⊙W)·X + B₀。"""
        rng = Rng(3)
        mean = rng.normal(32)
        x = rng.normal(10 * 32).reshape(10, 32)
        keep = np.array([1, 0, 0, 1] * 8, dtype=bool)
        x[:, ~keep] = mean[~keep]
        stats = MixedStats({MLP: SiteMoments(mean, np.ones(32), 10)})
        bias = compensate(tiny_model, MLP, PruneMask(MLP, tuple(int(k) for k in keep)), stats)
        w = tiny_model.blocks[0].w_down.data.astype(np.float64)
        full = x @ w.T
        pruned = x[:, keep] @ w[:, keep].T + bias.values
        assert np.max(np.abs(full - pruned)) <= 1e-5

    def test_minimizes_site_output_error(self, tiny_model):
        """在校准批上，B₀ 是使该 site 输出平方误差最小的常数偏置。"""
        seqs = random_tokens(21, 12, n=6)
        stats = mix_stats(collect_stats_from_sequences(tiny_model, {"d": seqs}), [1.0])
        x = np.concatenate([forward(tiny_model, s)[1][1].values.data for s in seqs]).astype(np.float64)
        keep = np.array([1, 1, 0, 1, 0, 0, 1, 0] * 4, dtype=bool)
        mask = PruneMask(MLP, tuple(int(k) for k in keep))
        b0 = compensate(tiny_model, MLP, mask, stats).values
        w = tiny_model.blocks[0].w_down.data.astype(np.float64)
        residual = x @ w.T - x[:, keep] @ w[:, keep].T

        def error(b):
            return float(np.mean(np.sum((residual - b) ** 2, axis=1)))

        best = error(b0)
        assert best < error(np.zeros_like(b0))
        rng = Rng(5)
        for trial in range(10):
            delta = rng.derive(trial).normal(b0.shape[0]) * 0.01
            assert error(b0 + delta) == pytest.approx(best + float(delta @ delta), rel=1e-6)
            assert error(b0 + delta) > best

    def test_foreign_mask(self, tiny_model):
        with pytest.raises(ShapeError):
            compensate(tiny_model, MLP, PruneMask.full(ATTN, 2), moments_for(tiny_model))


class TestApplyPrune:
    def test_all_keep_zero_bias_is_noop(self, tiny_model):
        before = model_to_bytes(tiny_model)
        for site in tiny_model.sites():
            n = tiny_model.original_units(site)
            apply_prune(tiny_model, site, PruneMask.full(site, n), BiasVector(site, np.zeros(TINY.d_model)))
        assert model_to_bytes(tiny_model) == before

    def test_mlp_shapes_and_param_count(self):
        cfg = ModelConfig(d_model=16, n_heads=2, head_dim=8, d_mlp=16, n_blocks=1, max_seq=16)
        model = random_model(cfg, 0)
        before = param_count(model)
        keep = tuple(0 if j in (2, 7, 11) else 1 for j in range(16))
        apply_prune(model, MLP, PruneMask(MLP, keep), BiasVector(MLP, np.zeros(16)))
        blk = model.blocks[0]
        assert blk.w_down.shape == (16, 13)
        assert blk.w_gate.shape == (13, 16) and blk.w_up.shape == (13, 16)
        assert blk.live_channels == tuple(j for j in range(16) if j not in (2, 7, 11))
        assert before - param_count(model) == 3 * (2 * 16 + 16)

    def test_head_prune_shapes(self, tiny_model):
        apply_prune(tiny_model, ATTN, PruneMask(ATTN, (0, 1)), BiasVector(ATTN, np.zeros(16)))
        blk = tiny_model.blocks[0]
        assert blk.live_heads == (1,)
        assert blk.wq.shape == (8, 16) and blk.wo.shape == (16, 8)
        forward(tiny_model, [1, 2, 3])

    def test_bias_folded_into_output(self, tiny_model):
        bias = BiasVector(MLP, np.arange(16, dtype=np.float64))
        old = tiny_model.blocks[0].down_bias.copy()
        apply_prune(tiny_model, MLP, PruneMask.full(MLP, 32), bias)
        np.testing.assert_allclose(tiny_model.blocks[0].down_bias, old + np.arange(16), rtol=1e-6)

    def test_cannot_revive_units(self, tiny_model):
        apply_prune(tiny_model, MLP, PruneMask(MLP, (0,) + (1,) * 31), BiasVector(MLP, np.zeros(16)))
        with pytest.raises(ShapeError):
            apply_prune(tiny_model, MLP, PruneMask.full(MLP, 32), BiasVector(MLP, np.zeros(16)))


# =========================================================
# 端到端性质
# =========================================================

def constant_channel_hook(model, seed: int):
    """为每个 site 随机选出一半单位，让它们的激活恒为随机常数；返回 (hook, masks)。"""
    rng = Rng(seed).derive("hook")
    masks, consts = {}, {}
    for site in model.sites():
        n = model.original_units(site)
        order = rng.permutation(n)
        keep = [1] * n
        for u in order[: n // 2]:
            keep[int(u)] = 0
        masks[site] = PruneMask(site, tuple(keep))
        width = model.unit_width(site)
        consts[site] = (np.repeat(np.array(keep) == 0, width), rng.normal(n * width).astype(np.float32))

    def hook(site, values):
        dropped, c = consts[site]
        out = values.copy()
        out[:, dropped] = c[dropped]
        return out

    return hook, masks


def test_compensation_reproduces_constant_channels():
    """被剪通道在校准批上恒为常数时，剪枝 + 补偿后的模型与原模型（带同样钩子）逐位置一致。"""
    cfg = ModelConfig(d_model=16, n_blocks=2, n_heads=4, head_dim=4, d_mlp=32, max_seq=16)
    for seed in range(20):
        model = random_model(cfg, seed)
        hook, masks = constant_channel_hook(model, seed)
        seqs = random_tokens(seed, 12, n=4)
        stats = mix_stats(collect_stats_from_sequences(model, {"d": seqs}, hook=hook), [1.0])
        pruned = model.copy()
        for site in pruned.sites():
            apply_prune(pruned, site, masks[site], compensate(pruned, site, masks[site], stats))
        for seq in seqs + random_tokens(seed + 1000, 9, n=2):
            expected, _ = forward(model, seq, hook=hook)
            actual, _ = forward(pruned, seq)
            np.testing.assert_allclose(actual.data, expected.data, atol=1e-4)


def test_cascading_variance_collapse(cascade):
    """剪掉上游通道并补偿后，重新收集的下游方差塌缩。"""
    seqs = random_tokens(3, 16, n=8)
    downstream = PruneSite(1, SiteKind.MLP_CHANNELS)
    upstream = PruneSite(0, SiteKind.MLP_CHANNELS)

    stats = mix_stats(collect_stats_from_sequences(cascade, {"d": seqs}), [1.0])
    v_before = stats[downstream].variance[0]
    assert v_before > 1e-4

    mask = PruneMask(upstream, (0, 1, 1, 1))
    apply_prune(cascade, upstream, mask, compensate(cascade, upstream, mask, stats))
    after = mix_stats(collect_stats_from_sequences(cascade, {"d": seqs}), [1.0])
    # 下游通道 0 读的是被剪通道写入的维度；通道 1 读的是 token 维度，不受影响
    assert after[downstream].variance[0] < 0.1 * v_before
    assert after[downstream].variance[1] == pytest.approx(stats[downstream].variance[1], rel=0.1)

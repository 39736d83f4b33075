"""Head stages against closed-form oracles, plus full-forward invariants."""

import numpy as np
import pytest

from heightbins.errors import ConfigError, ContractViolation
from heightbins.head import AdaBinsHead, BinSet, HeadConfig, PatchTransformer, build_bins
from heightbins.tensor import Tensor


def toy_cfg(**kw):
    base = dict(
        n_bins=8, token_count=4, patch_size=4, embed_dim=16, depth=1, n_heads=2,
        h_min=0.0, h_max=100.0,
    )
    base.update(kw)
    return HeadConfig(**base)


def make_head(seed=0, in_channels=4, hw=(8, 8), **kw):
    return AdaBinsHead(np.random.default_rng(seed), in_channels, hw, toy_cfg(**kw))


# --- local branch ---------------------------------------------------------


def test_local_branch_identity_kernel_passes_features_through():
    head = make_head(in_channels=4, embed_dim=4)
    w = np.zeros((4, 4, 3, 3))
    for c in range(4):
        w[c, c, 1, 1] = 1.0
    head.local.weight.data = w
    head.local.bias.data = np.zeros(4)
    feat = Tensor(np.random.default_rng(1).standard_normal((2, 4, 8, 8)))
    out = head.local_branch(feat)
    np.testing.assert_array_equal(out.data, feat.data)


def test_local_branch_zero_kernel_gives_zero():
    head = make_head()
    head.local.weight.data = np.zeros_like(head.local.weight.data)
    head.local.bias.data = np.zeros_like(head.local.bias.data)
    out = head.local_branch(Tensor(np.ones((1, 4, 8, 8))))
    assert np.all(out.data == 0)


def test_local_branch_channel_mismatch():
    head = make_head(in_channels=4)
    with pytest.raises(ContractViolation, match="channels"):
        head.local_branch(Tensor(np.ones((1, 3, 8, 8))))


# --- global branch --------------------------------------------------------


def test_global_branch_token_counts():
    head = make_head()  # 8x8 feature, p=4 -> 4 patch tokens; m=4 -> 9 learned
    seq = head.global_branch(Tensor(np.zeros((2, 4, 8, 8))))
    assert seq.shape == (2, 9 + 4, 16)
    assert head.vit.n_patches == 4 and head.vit.n_learned == 9


def test_depth_zero_is_patch_projection_plus_positions():
    head = make_head(depth=0)
    feat = Tensor(np.random.default_rng(2).standard_normal((1, 4, 8, 8)))
    seq = head.global_branch(feat)
    want = head.vit.patch_tokens(feat).data + head.vit.pos.data
    np.testing.assert_allclose(seq.data[:, head.vit.n_learned :], want, atol=1e-15)
    np.testing.assert_allclose(seq.data[0, : head.vit.n_learned], head.vit.tokens.data)


def test_patch_permutation_equivariance_without_positions():
    head = make_head(depth=2)
    rng = np.random.default_rng(3)
    tokens = rng.standard_normal((1, 4, 16))
    out = head.vit.encode(Tensor(tokens)).data
    perm = np.array([2, 0, 3, 1])
    out_perm = head.vit.encode(Tensor(tokens[:, perm])).data
    lead = head.vit.n_learned
    np.testing.assert_allclose(out_perm[:, :lead], out[:, :lead], atol=1e-12)
    np.testing.assert_allclose(out_perm[:, lead:], out[:, lead:][:, perm], atol=1e-12)


def test_indivisible_patch_extent_rejected():
    with pytest.raises(ConfigError, match="divisible"):
        PatchTransformer(np.random.default_rng(0), 4, (6, 6), toy_cfg())


# --- bins -----------------------------------------------------------------


def test_equal_widths_give_uniform_edges():
    rel = Tensor(np.full((1, 4), 0.25))
    bins = build_bins(rel, 0.0, 100.0)
    np.testing.assert_allclose(bins.edges.data[0], [0, 25, 50, 75, 100], atol=1e-12)
    np.testing.assert_allclose(bins.centers.data[0], [12.5, 37.5, 62.5, 87.5], atol=1e-12)


def test_known_widths_give_known_edges():
    rel = Tensor(np.array([[0.1, 0.2, 0.3, 0.4]]))
    bins = build_bins(rel, 0.0, 10.0)
    np.testing.assert_allclose(bins.edges.data[0], [0, 1, 3, 6, 10], atol=1e-12)


def test_compute_bins_from_equal_logits():
    head = make_head(n_bins=4)
    head.bin_fc.weight.data = np.zeros_like(head.bin_fc.weight.data)
    head.bin_fc.bias.data = np.zeros(4)
    bins = head.compute_bins(Tensor(np.random.default_rng(0).standard_normal((3, 16))))
    np.testing.assert_allclose(
        bins.edges.data, np.tile([0, 25, 50, 75, 100], (3, 1)), atol=1e-12
    )


def test_binset_validation_catches_bad_edges():
    rel = Tensor(np.array([[0.5, 0.5]]))
    bins = build_bins(rel, 0.0, 10.0)
    bad = BinSet(
        n_bins=2, h_min=0.0, h_max=10.0,
        rel_widths=rel,
        edges=Tensor(np.array([[0.0, 6.0, 5.0]])),
        centers=bins.centers,
    )
    with pytest.raises(ContractViolation, match="increasing"):
        bad.validate()


# --- range attention ------------------------------------------------------


def test_range_attention_one_hot_tokens_select_channels():
    local = Tensor(np.random.default_rng(4).standard_normal((2, 5, 3, 3)))
    tokens = Tensor(np.tile(np.eye(5)[None], (2, 1, 1)))
    r = AdaBinsHead.range_attention(local, tokens)
    np.testing.assert_array_equal(r.data, local.data)


def test_range_attention_zero_local_gives_zero():
    local = Tensor(np.zeros((1, 6, 4, 4)))
    tokens = Tensor(np.random.default_rng(0).standard_normal((1, 3, 6)))
    assert np.all(AdaBinsHead.range_attention(local, tokens).data == 0)


def test_range_attention_single_pixel_is_matvec():
    rng = np.random.default_rng(5)
    lvec = rng.standard_normal(6)
    g = rng.standard_normal((4, 6))
    local = Tensor(lvec.reshape(1, 6, 1, 1))
    tokens = Tensor(g[None])
    r = AdaBinsHead.range_attention(local, tokens)
    np.testing.assert_allclose(r.data[0, :, 0, 0], g @ lvec, atol=1e-12)


def test_range_attention_dim_mismatch():
    with pytest.raises(ContractViolation, match="token dim"):
        AdaBinsHead.range_attention(
            Tensor(np.zeros((1, 6, 2, 2))), Tensor(np.zeros((1, 3, 5)))
        )


# --- bin probabilities and gate -------------------------------------------


def test_zero_prob_conv_gives_uniform_bins():
    head = make_head(n_bins=8)
    head.fg_prob_conv.weight.data = np.zeros_like(head.fg_prob_conv.weight.data)
    head.fg_prob_conv.bias.data = np.zeros(8)
    ram = Tensor(np.random.default_rng(6).standard_normal((2, 4, 8, 8)))
    p = head.bin_probabilities(ram, head.fg_prob_conv)
    np.testing.assert_allclose(p.data, 1.0 / 8.0, atol=1e-12)


def test_two_bin_probabilities_match_logistic():
    head = make_head(n_bins=2)
    rng = np.random.default_rng(7)
    head.fg_prob_conv.weight.data = rng.standard_normal((2, 4, 1, 1))
    head.fg_prob_conv.bias.data = rng.standard_normal(2)
    ram_np = rng.standard_normal((1, 4, 3, 3))
    p = head.bin_probabilities(Tensor(ram_np), head.fg_prob_conv)
    w = head.fg_prob_conv.weight.data[:, :, 0, 0]
    logits = np.einsum("nc,bchw->bnhw", w, ram_np) + head.fg_prob_conv.bias.data.reshape(1, 2, 1, 1)
    want = 1.0 / (1.0 + np.exp(-(logits[:, 0] - logits[:, 1])))
    np.testing.assert_allclose(p.data[:, 0], want, rtol=1e-12)


def test_extreme_logits_still_yield_valid_bins():
    # softmax underflow must not collapse a bin to zero width
    head = make_head()
    head.bin_fc.weight.data = np.eye(head.bin_fc.weight.shape[0], head.bin_fc.weight.shape[1])
    head.bin_fc.bias.data = np.zeros_like(head.bin_fc.bias.data)
    tok = np.zeros((1, head.bin_fc.weight.shape[0]))
    tok[0, 0], tok[0, 1] = 1000.0, -1000.0
    bins = head.compute_bins(Tensor(tok))
    bins.validate()
    assert bins.rel_widths.data.min() > 0


def test_zero_htc_weights_give_half_gate():
    head = make_head()
    head.htc_conv.weight.data = np.zeros_like(head.htc_conv.weight.data)
    head.htc_conv.bias.data = np.zeros(1)
    _, gate = head.head_tail_cut(Tensor(np.random.default_rng(0).standard_normal((1, 4, 8, 8))))
    np.testing.assert_array_equal(gate.data, 0.5)


def test_gate_monotone_in_logit():
    head = make_head()
    ram = np.zeros((1, 4, 1, 1))
    base = head.head_tail_cut(Tensor(ram))[1].data[0, 0, 0, 0]
    bumped = ram.copy()
    bumped[0] += np.sign(head.htc_conv.weight.data[0, :, 0, 0]).reshape(4, 1, 1)
    higher = head.head_tail_cut(Tensor(bumped))[1].data[0, 0, 0, 0]
    assert higher > base


# --- combine ---------------------------------------------------------------


def test_combine_extremes_and_checkerboard():
    rng = np.random.default_rng(8)
    a = Tensor(rng.random((1, 3, 2, 2)))
    b = Tensor(rng.random((1, 3, 2, 2)))
    all_fg = AdaBinsHead.combine(a, b, Tensor(np.full((1, 1, 2, 2), 0.9)))
    np.testing.assert_array_equal(all_fg.data, a.data)
    all_bg = AdaBinsHead.combine(a, b, Tensor(np.full((1, 1, 2, 2), 0.1)))
    np.testing.assert_array_equal(all_bg.data, b.data)
    checker = np.indices((2, 2)).sum(axis=0) % 2
    gate = Tensor(np.where(checker, 0.9, 0.1)[None, None])
    mixed = AdaBinsHead.combine(a, b, gate)
    want = np.where(checker[None, None] == 1, a.data, b.data)
    np.testing.assert_array_equal(mixed.data, want)


# --- full forward ----------------------------------------------------------


def test_toy_forward_satisfies_all_invariants():
    head = make_head()
    out = head(Tensor(np.random.default_rng(9).standard_normal((2, 4, 8, 8))))
    out.validate()
    assert out.probs.shape == (2, 8, 8, 8)
    assert out.heights.shape == (2, 1, 8, 8)
    assert out.fg_prob.shape == (2, 1, 8, 8)


def test_different_images_give_different_bins():
    head = make_head()
    rng = np.random.default_rng(10)
    a = head(Tensor(rng.standard_normal((1, 4, 8, 8))))
    b = head(Tensor(rng.standard_normal((1, 4, 8, 8))))
    assert not np.array_equal(a.bins.edges.data, b.bins.edges.data)


def test_identical_images_give_identical_outputs():
    head = make_head()
    x = np.random.default_rng(11).standard_normal((1, 4, 8, 8))
    a, b = head(Tensor(x)), head(Tensor(x))
    np.testing.assert_array_equal(a.heights.data, b.heights.data)
    np.testing.assert_array_equal(a.probs.data, b.probs.data)


def test_no_htc_single_branch():
    head = make_head(use_htc=False)
    out = head(Tensor(np.random.default_rng(12).standard_normal((1, 4, 8, 8))))
    out.validate()
    assert out.r_bg is None and out.fg_prob is None and out.p_bg_bins is None
    assert out.probs is out.p_fg_bins


def test_degenerate_range_rejected_at_construction():
    with pytest.raises(ConfigError, match="degenerate"):
        make_head(h_min=5.0, h_max=5.0)

"""Mask-gated attention against an independent reference, plus decode plumbing."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from metaseg.autodiff import ParameterError, ShapeError, Tensor
from metaseg.decoder import (
    DecoderConfig,
    decode,
    init_decoder,
    mask_attention,
    predict_mask,
    prepare_support_mask,
)
from metaseg.params import ParamSet
from metaseg.seeding import derive_rng


def build(c, seed=0):
    ps = ParamSet()
    init_decoder(ps, c, derive_rng(seed, "dec"))
    return ps


def reference_block(f, m, wq, wk, wv, g, b, tau, eps_norm=1e-12, eps_in=1e-5):
    """Straight-line reply of the gated block in plain numpy.

    Written independently from the op library: naive unstabilized softmax,
    explicit loops avoided but no shared code.
    """
    k = (m * f) @ wk
    q = f @ wq

    def l2rows(x):
        n = np.sqrt((x * x).sum(axis=1, keepdims=True))
        return x / np.maximum(n, eps_norm)

    scores = l2rows(q) @ l2rows(k).T / tau
    e = np.exp(scores)
    att = e / e.sum(axis=0, keepdims=True)
    v = m @ wv
    gated = (att @ v) * f
    mu = gated.mean(axis=0, keepdims=True)
    var = ((gated - mu) ** 2).mean(axis=0, keepdims=True)
    return (gated - mu) / np.sqrt(var + eps_in) * g + b


class TestMaskAttention:
    def test_matches_reference_on_50_instances(self):
        cfg = DecoderConfig()
        rng = np.random.default_rng(2024)
        for trial in range(50):
            n = int(rng.integers(2, 9))
            c = int(rng.integers(2, 5))
            ps = ParamSet()
            wq, wk, wv = (rng.standard_normal((c, c)) for _ in range(3))
            g = rng.uniform(0.5, 1.5, c)
            b = rng.standard_normal(c)
            ps.add("dec.level0.attn.wq", wq)
            ps.add("dec.level0.attn.wk", wk)
            ps.add("dec.level0.attn.wv", wv)
            ps.add("dec.level0.norm.g", g)
            ps.add("dec.level0.norm.b", b)
            f = rng.standard_normal((n, c))
            m = rng.uniform(0, 1, (n, c))
            got = mask_attention(Tensor(f), Tensor(m), ps, 0, cfg.tau).data
            want = reference_block(f, m, wq, wk, wv, g, b, cfg.tau)
            assert_allclose(got, want, atol=1e-10, rtol=1e-10)

    def test_zero_gate_collapses_to_bias(self):
        # M' = 0 kills K and V; attended values vanish, the gating product is
        # zero everywhere, and instance norm of zeros is exactly beta
        rng = np.random.default_rng(5)
        c = 3
        ps = build(c)
        f = Tensor(rng.standard_normal((6, c)))
        gate = Tensor(np.zeros((6, c)))
        out = mask_attention(f, gate, ps, 1, 0.1).data
        want = np.tile(ps["dec.level1.norm.b"].data, (6, 1))
        assert np.array_equal(out, want)

    def test_row_permutation_equivariance(self):
        # reductions reorder floating-point sums, so equality is to 1e-12
        rng = np.random.default_rng(6)
        c, n = 4, 7
        ps = build(c)
        f = rng.standard_normal((n, c))
        m = rng.uniform(0, 1, (n, c))
        perm = rng.permutation(n)
        base = mask_attention(Tensor(f), Tensor(m), ps, 0, 0.1).data
        permed = mask_attention(Tensor(f[perm]), Tensor(m[perm]), ps, 0, 0.1).data
        assert_allclose(permed, base[perm], atol=1e-12, rtol=1e-12)

    def test_gradcheck_through_block(self):
        from metaseg.gradcheck import finite_diff_check

        rng = np.random.default_rng(7)
        c, n = 3, 5
        m = Tensor(rng.uniform(0, 1, (n, c)))

        def f(feat, wq, wk, wv, g, b):
            ps = ParamSet()
            ps._entries.update(
                {
                    "dec.level0.attn.wq": wq,
                    "dec.level0.attn.wk": wk,
                    "dec.level0.attn.wv": wv,
                    "dec.level0.norm.g": g,
                    "dec.level0.norm.b": b,
                }
            )
            out = mask_attention(feat, m, ps, 0, 0.1)
            w = Tensor(np.linspace(0.1, 1.0, out.data.size).reshape(out.shape))
            from metaseg import autodiff as ad

            return ad.tsum(ad.mul(out, w))

        rep = finite_diff_check(
            f,
            [
                rng.standard_normal((n, c)),
                rng.standard_normal((c, c)),
                rng.standard_normal((c, c)),
                rng.standard_normal((c, c)),
                rng.uniform(0.5, 1.5, c),
                rng.standard_normal(c),
            ],
            name="mask_attention",
        )
        assert rep.passed, rep


class TestPrepareSupportMask:
    def test_rejects_nonbinary(self):
        with pytest.raises(ParameterError):
            prepare_support_mask(np.full((8, 8), 0.5), 4, 2, 2.0)

    def test_rejects_misaligned_grid(self):
        with pytest.raises(ShapeError):
            prepare_support_mask(np.zeros((9, 9), dtype=np.uint8), 4, 2, 2.0)

    def test_area_average_exact_with_tiny_blur(self):
        # one fully-lit patch cell: its token weight is 1, all others 0
        # (sigma ~ 0 makes the blur numerically the identity)
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[0:2, 2:4] = 1  # exactly token (0, 1) on a 4x4 grid
        out = prepare_support_mask(mask, 4, 3, 1e-4).data
        want = np.zeros((16, 3))
        want[1, :] = 1.0
        assert_allclose(out, want, atol=1e-12)

    def test_half_cell_gives_half_weight(self):
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[0, 0:2] = 1  # half the pixels of token (0, 0)
        out = prepare_support_mask(mask, 4, 1, 1e-4).data
        assert_allclose(out[0, 0], 0.5, atol=1e-12)

    def test_blur_spreads_to_neighbors_and_tiles_channels(self):
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[6:10, 6:10] = 1
        out = prepare_support_mask(mask, 8, 4, 2.0).data
        assert out.shape == (64, 4)
        # every channel column identical
        for c in range(1, 4):
            assert np.array_equal(out[:, c], out[:, 0])
        # mass leaks beyond the lit cells but stays in [0, 1]
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert (out[:, 0] > 1e-4).sum() > 4


class TestDecode:
    def g(self):
        rng = np.random.default_rng(8)
        c, grid = 3, 4
        levels = [Tensor(rng.standard_normal((c, grid, grid))) for _ in range(4)]
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[4:10, 4:10] = 1
        return build(c), levels, mask

    def test_logits_shape_and_finite(self):
        ps, levels, mask = self.g()
        out = decode(levels, mask, ps, DecoderConfig(), (16, 16))
        assert out.shape == (16, 16)
        assert np.all(np.isfinite(out.data))

    def test_gated_and_plain_differ(self):
        ps, levels, mask = self.g()
        a = decode(levels, mask, ps, DecoderConfig(), (16, 16), gated=True)
        b = decode(levels, mask, ps, DecoderConfig(), (16, 16), gated=False)
        assert not np.array_equal(a.data, b.data)

    def test_support_mask_changes_output(self):
        ps, levels, mask = self.g()
        other = np.zeros_like(mask)
        other[0:4, 0:4] = 1
        a = decode(levels, mask, ps, DecoderConfig(), (16, 16))
        b = decode(levels, other, ps, DecoderConfig(), (16, 16))
        assert not np.array_equal(a.data, b.data)

    def test_wrong_level_count_rejected(self):
        ps, levels, mask = self.g()
        with pytest.raises(ShapeError):
            decode(levels[:3], mask, ps, DecoderConfig(), (16, 16))


def test_predict_mask_tie_goes_foreground():
    logits = np.zeros((4, 4))  # sigmoid(0) = 0.5 exactly
    assert np.all(predict_mask(logits) == 1)
    assert predict_mask(np.array([[-0.1]]))[0, 0] == 0


def test_config_validation():
    with pytest.raises(ParameterError):
        DecoderConfig(tau=0.0)
    with pytest.raises(ParameterError):
        DecoderConfig(blur_sigma=-1.0)

"""Finite-difference gradient oracle and a named check suite over the op catalog.

The oracle perturbs one input coordinate at a time with a central difference
and compares against the tape's analytic gradient.  All checks run in float64;
the suite wraps every registered op (plus a deep composite) in a scalar
objective with random co-inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    """The function under test produced non-finite values at or near x0."""


@dataclass
class GradCheckReport:
    name: str
    max_abs_err: float
    max_rel_err: float
    n_coords: int
    passed: bool


def _scalar_eval(f: Callable, xs: list[np.ndarray]) -> float:
    ts = [Tensor(x) for x in xs]
    out = f(*ts)
    if out.data.size != 1:
        raise ad.ContractError("gradcheck target must return a scalar")
    v = float(out.data)
    if not np.isfinite(v):
        raise OracleError("objective returned a non-finite value")
    return v


def finite_diff_check(
    f: Callable,
    xs: Sequence[np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
    name: str = "fn",
) -> GradCheckReport:
    """Check d f(xs) / d xs against central differences, coordinate by coordinate.

    ``f`` maps len(xs) tensors to a scalar tensor.  Errors are relative to
    ``max(|analytic|, |numeric|, 1)`` per coordinate so tiny gradients are
    compared absolutely.
    """
    xs = [np.asarray(x, dtype=np.float64) for x in xs]
    leaves = [Tensor(x, requires_grad=True) for x in xs]
    with ad.Tape() as tape:
        out = f(*leaves)
        if out.data.size != 1:
            raise ad.ContractError("gradcheck target must return a scalar")
        if not np.isfinite(out.data).all():
            raise OracleError("objective returned a non-finite value at x0")
    grads = ad.backward(tape, out, wrt=leaves)

    max_abs = 0.0
    max_rel = 0.0
    n_coords = 0
    for xi, leaf in enumerate(leaves):
        analytic = grads[leaf].data
        flat = xs[xi].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = _scalar_eval(f, xs)
            flat[j] = orig - h
            fm = _scalar_eval(f, xs)
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[j]
            abs_err = abs(a - numeric)
            rel_err = abs_err / max(abs(a), abs(numeric), 1.0)
            max_abs = max(max_abs, abs_err)
            max_rel = max(max_rel, rel_err)
            n_coords += 1
    return GradCheckReport(name, max_abs, max_rel, n_coords, max_rel <= tol)


# ---------------------------------------------------------------------------
# suite: one scalar objective per catalog op


def _weighted(t: Tensor) -> Tensor:
    """Deterministically weighted sum so every output coordinate is exercised.

    The weights must not change between calls: the finite-difference oracle
    re-evaluates the objective many times.
    """
    n = t.data.size
    w = (0.5 + 0.4 * np.cos(np.linspace(0.0, 3.0, n))).reshape(t.shape)
    return ad.tsum(ad.mul(t, Tensor(w)))


def op_check_cases(seed: int) -> list[tuple[str, Callable, list[np.ndarray]]]:
    """(name, scalar objective, inputs) for every op in the catalog."""
    rng = np.random.default_rng([seed, 7])

    def r(*shape):
        return rng.standard_normal(shape)

    def rpos(*shape):
        return rng.uniform(0.5, 2.0, size=shape)

    pts = rng.uniform(0.05, 0.95, size=(6, 2))
    cases: list[tuple[str, Callable, list[np.ndarray]]] = [
        ("add", lambda a, b: _weighted(ad.add(a, b)), [r(3, 4), r(3, 4)]),
        ("add_broadcast", lambda a, b: _weighted(ad.add(a, b)), [r(3, 4), r(1, 4)]),
        ("sub", lambda a, b: _weighted(ad.sub(a, b)), [r(3, 4), r(3, 4)]),
        ("mul", lambda a, b: _weighted(ad.mul(a, b)), [r(3, 4), r(3, 4)]),
        ("div", lambda a, b: _weighted(ad.div(a, b)), [r(3, 4), rpos(3, 4)]),
        ("neg", lambda a: _weighted(ad.neg(a)), [r(3, 4)]),
        ("power", lambda a: _weighted(ad.power(a, 3.0)), [rpos(3, 4)]),
        ("exp", lambda a: _weighted(ad.exp(a)), [r(3, 4)]),
        ("log", lambda a: _weighted(ad.log(a)), [rpos(3, 4)]),
        ("sqrt", lambda a: _weighted(ad.sqrt(a)), [rpos(3, 4)]),
        ("clip_min", lambda a: _weighted(ad.clip_min(a, 0.1)), [rpos(3, 4)]),
        ("sigmoid", lambda a: _weighted(ad.sigmoid(a)), [r(3, 4)]),
        ("softplus", lambda a: _weighted(ad.softplus(a)), [r(3, 4)]),
        ("erf", lambda a: _weighted(ad.erf(a)), [r(3, 4)]),
        ("gelu", lambda a: _weighted(ad.gelu(a)), [r(3, 4)]),
        ("relu", lambda a: _weighted(ad.relu(a)), [rpos(3, 4)]),
        ("sum_all", lambda a: ad.tsum(a), [r(3, 4)]),
        ("sum_axis", lambda a: _weighted(ad.tsum(a, axis=1, keepdims=True)), [r(3, 4)]),
        ("mean", lambda a: _weighted(ad.tmean(a, axis=0)), [r(3, 4)]),
        ("reshape", lambda a: _weighted(ad.reshape(a, (4, 3))), [r(3, 4)]),
        ("transpose", lambda a: _weighted(ad.transpose(a)), [r(3, 4)]),
        (
            "concat",
            lambda a, b: _weighted(ad.concat([a, b], axis=1)),
            [r(3, 2), r(3, 4)],
        ),
        ("narrow", lambda a: _weighted(ad.narrow(a, 1, 1, 3)), [r(3, 5)]),
        ("matmul", lambda a, b: _weighted(ad.matmul(a, b)), [r(3, 4), r(4, 2)]),
        (
            "einsum2",
            lambda a, b: _weighted(ad.einsum2("sa,sb->ab", a, b)),
            [r(5, 3), r(5, 2)],
        ),
        ("softmax_rows", lambda a: _weighted(ad.softmax_rows(a)), [r(4, 5)]),
        ("softmax_col", lambda a: _weighted(ad.softmax_col(a, 0.7)), [r(4, 5)]),
        (
            "l2_normalize_rows",
            lambda a: _weighted(ad.l2_normalize_rows(a)),
            [r(4, 5) + 0.5],
        ),
        (
            "instance_norm",
            lambda x, g, b: _weighted(ad.instance_norm(x, g, b)),
            [r(6, 3), rpos(3), r(3)],
        ),
        (
            "layer_norm",
            lambda x, g, b: _weighted(ad.layer_norm(x, g, b)),
            [r(4, 6), rpos(6), r(6)],
        ),
        (
            "replicate_pad2d",
            lambda a: _weighted(ad.replicate_pad2d(a, 1, 2)),
            [r(2, 4, 5)],
        ),
        (
            "replicate_fold2d",
            lambda a: _weighted(ad.replicate_fold2d(a, 1, 1)),
            [r(2, 5, 6)],
        ),
        ("windows2d", lambda a: _weighted(ad.windows2d(a, 2, 3)), [r(2, 4, 5)]),
        (
            "windows_fold2d",
            lambda a: _weighted(ad.windows_fold2d(a, 4, 5)),
            [r(2, 3, 3, 2, 3)],
        ),
        (
            "conv2d_valid",
            lambda x, w: _weighted(ad.conv2d_valid(x, w)),
            [r(2, 5, 5), r(3, 2, 3, 3)],
        ),
        (
            "conv3x3",
            lambda x, w, b: _weighted(ad.conv3x3(x, w, b)),
            [r(2, 4, 4), r(3, 2, 3, 3), r(3)],
        ),
        (
            "upsample_bilinear",
            lambda a: _weighted(ad.upsample(a, (7, 6), "bilinear")),
            [r(2, 3, 4)],
        ),
        (
            "upsample_nearest",
            lambda a: _weighted(ad.upsample(a, (6, 7), "nearest")),
            [r(2, 3, 4)],
        ),
        (
            "bilinear_sample",
            lambda a: _weighted(ad.bilinear_sample(a, pts)),
            [r(3, 5, 6)],
        ),
        (
            "point_scatter",
            lambda v: _weighted(ad.point_scatter(v, pts, (3, 5, 6))),
            [r(6, 3)],
        ),
        ("gaussian_blur", lambda a: _weighted(ad.gaussian_blur(a, 0.8)), [r(6, 7)]),
    ]
    return cases


def composite_attention_case(seed: int):
    """Deep composite: the full mask-gated attention block as one objective."""
    rng = np.random.default_rng([seed, 11])
    n, c = 6, 4
    f = rng.standard_normal((n, c))
    m = rng.uniform(0.0, 1.0, size=(n, c))
    wk, wq, wv = (rng.standard_normal((c, c)) * 0.5 for _ in range(3))
    gamma = rng.uniform(0.5, 1.5, size=c)
    beta = rng.standard_normal(c)
    wsum = Tensor(rng.standard_normal((n, c)))
    m_const = Tensor(m)

    def objective(f_t, wk_t, wq_t, wv_t, g_t, b_t):
        k = ad.matmul(ad.mul(m_const, f_t), wk_t)
        q = ad.matmul(f_t, wq_t)
        attn = ad.softmax_col(
            ad.matmul(ad.l2_normalize_rows(q), ad.transpose(ad.l2_normalize_rows(k))),
            0.1,
        )
        v = ad.matmul(m_const, wv_t)
        out = ad.instance_norm(ad.mul(ad.matmul(attn, v), f_t), g_t, b_t)
        return ad.tsum(ad.mul(out, wsum))

    return objective, [f, wk, wq, wv, gamma, beta]


def run_suite(seeds: Sequence[int] = (0, 1, 2), tol: float = 1e-4) -> list[GradCheckReport]:
    """Finite-difference every catalog op (plus the composite) for each seed."""
    reports: list[GradCheckReport] = []
    for seed in seeds:
        for name, fn, xs in op_check_cases(seed):
            reports.append(finite_diff_check(fn, xs, tol=tol, name=f"{name}[s{seed}]"))
        comp_f, comp_xs = composite_attention_case(seed)
        reports.append(
            finite_diff_check(comp_f, comp_xs, tol=tol, name=f"composite[s{seed}]")
        )
    for rep in reports:
        if not rep.passed:
            log.warning("gradcheck FAILED %s rel=%.3e", rep.name, rep.max_rel_err)
    return reports

"""Dense float tensors with reverse-mode autodiff on an explicit tape.

A ``Tape`` records every differentiable op executed while it is active, in
creation order, which is already a topological order of the graph.  ``backward``
replays that list once in reverse.  Every vjp is written in terms of the public
ops in this module, so running ``backward(..., create_graph=True)`` records the
adjoint computation onto the active tape and second derivatives come out of a
second sweep instead of a separate code path.

Tensors are immutable once created; ops return fresh tensors.  Data is float32
or float64 and stays in whatever dtype the inputs carry.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np
from scipy import special as _sps


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class ParameterError(ValueError):
    """An op was configured with an out-of-range parameter."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where the caller demanded finite math."""


class ContractError(RuntimeError):
    """An API contract was violated (non-scalar loss, backward off-tape, ...)."""


_FLOATS = (np.float32, np.float64)


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in _FLOATS:
        arr = arr.astype(np.float64 if dtype is None else dtype)
    if dtype is not None and arr.dtype != dtype:
        arr = arr.astype(dtype)
    return arr


class _Node:
    __slots__ = ("name", "parents", "vjp")

    def __init__(self, name: str, parents: tuple["Tensor", ...], vjp: Callable):
        self.name = name
        self.parents = parents
        self.vjp = vjp


class Tensor:
    """Immutable ndarray wrapper; ``node`` is set only on taped op outputs."""

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar; all routed through the taped ops below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of op outputs plus the leaves they touched."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.leaves: list[Tensor] = []
        self._leaf_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _STACK.stack.append(self)
        return self

    def __exit__(self, *exc):
        popped = _STACK.stack.pop()
        if popped is not self:  # pragma: no cover - programming error
            raise ContractError("tape stack corrupted")
        return False

    def _register(self, out: Tensor):
        self.nodes.append(out)
        for p in out.node.parents:
            if p.requires_grad and p.node is None and id(p) not in self._leaf_ids:
                self._leaf_ids.add(id(p))
                self.leaves.append(p)


class _Stack(threading.local):
    def __init__(self):
        self.stack: list[Tape | None] = []


_STACK = _Stack()


def _active() -> Tape | None:
    return _STACK.stack[-1] if _STACK.stack else None


class _pause_tape:
    """Context that hides the active tape (used by backward without create_graph)."""

    def __enter__(self):
        _STACK.stack.append(None)

    def __exit__(self, *exc):
        _STACK.stack.pop()
        return False


def _make(name: str, out_data: np.ndarray, parents: Sequence, vjp: Callable) -> Tensor:
    parents = tuple(p if isinstance(p, Tensor) else Tensor(p) for p in parents)
    out = Tensor(out_data)
    tape = _active()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = _Node(name, parents, vjp)
        tape._register(out)
    return out


def _coerce(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(_as_array(x, dtype))


def constant(data, dtype=None) -> Tensor:
    return Tensor(_as_array(data, dtype))


def assert_finite(t: Tensor | np.ndarray, stage: str) -> None:
    arr = t.data if isinstance(t, Tensor) else t
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {stage}")


def backward(
    tape: Tape,
    loss: Tensor,
    wrt: Sequence[Tensor] | None = None,
    create_graph: bool = False,
) -> dict[Tensor, Tensor]:
    """Reverse sweep over ``tape`` from scalar ``loss``.

    Returns a dict mapping leaves (or the given ``wrt`` tensors) to gradients.
    Leaves the loss never touched map to zeros.  With ``create_graph`` the
    adjoint ops are themselves recorded so the result supports another sweep.
    """
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if loss.node is None and not loss.requires_grad:
        targets = wrt if wrt is not None else []
        return {t: Tensor(np.zeros_like(t.data)) for t in targets}

    grads: dict[int, Tensor] = {id(loss): Tensor(np.ones_like(loss.data))}
    guard = _pause_tape() if not create_graph else _null_ctx()
    with guard:
        for out in reversed(tape.nodes):
            g = grads.pop(id(out), None)
            if g is None or out.node is None:
                continue
            parent_grads = out.node.vjp(g)
            for p, pg in zip(out.node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else add(acc, pg)

    targets = list(wrt) if wrt is not None else tape.leaves
    out: dict[Tensor, Tensor] = {}
    for t in targets:
        g = grads.get(id(t))
        out[t] = g if g is not None else Tensor(np.zeros_like(t.data))
    return out


class _null_ctx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


# ---------------------------------------------------------------------------
# elementwise ops


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        i + extra for i, n in enumerate(shape) if n == 1 and g.shape[i + extra] != 1
    )
    out = tsum(g, axis=axes, keepdims=False) if axes else g
    return reshape(out, shape)


def add(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, like=a)
    out = a.data + b.data
    return _make(
        "add",
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, like=a)
    out = a.data - b.data
    return _make(
        "sub",
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)),
    )


def mul(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, like=a)
    out = a.data * b.data
    return _make(
        "mul",
        out,
        (a, b),
        lambda g: (_unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)),
    )


def div(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, like=a)
    out = a.data / b.data
    return _make(
        "div",
        out,
        (a, b),
        lambda g: (
            _unbroadcast(div(g, b), a.shape),
            _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _coerce(a)
    return _make("neg", -a.data, (a,), lambda g: (neg(g),))


def power(a, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a python scalar exponent."""
    a = _coerce(a)
    p = float(p)
    out = a.data**p
    return _make(
        "power", out, (a,), lambda g: (mul(g, mul(constant(p), power(a, p - 1.0))),)
    )


def exp(a) -> Tensor:
    a = _coerce(a)
    cell: list[Tensor] = []  # vjp uses the taped output so double-backward works
    out = _make("exp", np.exp(a.data), (a,), lambda g: (mul(g, cell[0]),))
    cell.append(out)
    return out


def log(a) -> Tensor:
    a = _coerce(a)
    return _make("log", np.log(a.data), (a,), lambda g: (div(g, a),))


def sqrt(a) -> Tensor:
    a = _coerce(a)
    cell: list[Tensor] = []
    out = _make(
        "sqrt",
        np.sqrt(a.data),
        (a,),
        lambda g: (div(mul(g, constant(0.5)), cell[0]),),
    )
    cell.append(out)
    return out


def clip_min(a, lo: float) -> Tensor:
    """Elementwise ``max(a, lo)``; gradient passes only where ``a > lo``."""
    a = _coerce(a)
    lo = float(lo)
    mask = Tensor((a.data > lo).astype(a.data.dtype))
    return _make("clip_min", np.maximum(a.data, lo), (a,), lambda g: (mul(g, mask),))


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    cell: list[Tensor] = []
    out = _make(
        "sigmoid",
        _sps.expit(a.data),
        (a,),
        lambda g: (mul(g, mul(cell[0], sub(1.0, cell[0]))),),
    )
    cell.append(out)
    return out


def softplus(a) -> Tensor:
    """``log(1 + e^a)`` computed stably; derivative is ``sigmoid(a)``."""
    a = _coerce(a)
    out = np.logaddexp(np.zeros((), dtype=a.data.dtype), a.data)
    return _make("softplus", out, (a,), lambda g: (mul(g, sigmoid(a)),))


def erf(a) -> Tensor:
    a = _coerce(a)
    c = 2.0 / math.sqrt(math.pi)
    return _make(
        "erf",
        _sps.erf(a.data),
        (a,),
        lambda g: (mul(g, mul(constant(c), exp(neg(mul(a, a))))),),
    )


def gelu(a) -> Tensor:
    """Exact erf form: ``0.5 x (1 + erf(x / sqrt(2)))``."""
    a = _coerce(a)
    inv_sqrt2 = 1.0 / math.sqrt(2.0)

    def vjp(g):
        phi = mul(constant(0.5), add(1.0, erf(mul(a, inv_sqrt2))))
        dens = mul(
            constant(1.0 / math.sqrt(2.0 * math.pi)),
            exp(mul(constant(-0.5), mul(a, a))),
        )
        return (mul(g, add(phi, mul(a, dens))),)

    out = 0.5 * a.data * (1.0 + _sps.erf(a.data * inv_sqrt2))
    return _make("gelu", out, (a,), vjp)


def relu(a) -> Tensor:
    a = _coerce(a)
    mask = Tensor((a.data > 0).astype(a.data.dtype))
    return _make("relu", np.maximum(a.data, 0), (a,), lambda g: (mul(g, mask),))


# ---------------------------------------------------------------------------
# reductions and rearrangement


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    in_shape = a.shape
    if axis is None:
        red = tuple(range(a.ndim))
    else:
        red = (axis,) if isinstance(axis, int) else tuple(axis)
        red = tuple(ax % a.ndim for ax in red)
    kept = tuple(1 if i in red else n for i, n in enumerate(in_shape))

    def vjp(g):
        gk = reshape(g, kept) if not keepdims else g
        return (mul(gk, Tensor(np.ones(in_shape, dtype=a.data.dtype))),)

    return _make("sum", out, (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax % a.ndim] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    orig = a.shape
    return _make(
        "reshape", a.data.reshape(shape), (a,), lambda g: (reshape(g, orig),)
    )


def transpose(a, axes=None) -> Tensor:
    a = _coerce(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(
        "transpose", np.transpose(a.data, axes), (a,), lambda g: (transpose(g, inv),)
    )


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_coerce(p) for p in parts]
    if not parts:
        raise ShapeError("concat needs at least one part")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            narrow(g, axis, int(offsets[i]), int(offsets[i + 1]))
            for i in range(len(parts))
        )

    return _make("concat", out, tuple(parts), vjp)


def narrow(a, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``a[..., start:stop, ...]`` along ``axis``."""
    a = _coerce(a)
    axis = axis % a.ndim
    n = a.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"narrow [{start}:{stop}] out of range for axis size {n}")
    idx = tuple(slice(None) if i != axis else slice(start, stop) for i in range(a.ndim))

    def vjp(g):
        zshape_lo = list(a.shape)
        zshape_lo[axis] = start
        zshape_hi = list(a.shape)
        zshape_hi[axis] = n - stop
        lo = Tensor(np.zeros(zshape_lo, dtype=a.data.dtype))
        hi = Tensor(np.zeros(zshape_hi, dtype=a.data.dtype))
        return (concat([lo, g, hi], axis=axis),)

    return _make("narrow", a.data[idx], (a,), vjp)


# ---------------------------------------------------------------------------
# contractions


def matmul(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, like=a)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul expects (m,k)@(k,n), got {a.shape} @ {b.shape}")
    return _make(
        "matmul",
        a.data @ b.data,
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
    )


def einsum2(spec: str, a, b) -> Tensor:
    """Two-operand einsum without repeated indices inside an operand.

    Adjoints follow from rewriting the spec: for ``sa,sb->so`` the gradient of
    ``a`` is ``einsum2("so,sb->sa", g, b)`` and symmetrically for ``b``.
    """
    a = _coerce(a)
    b = _coerce(b, like=a)
    lhs, so = spec.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for s, t in ((sa, a), (sb, b)):
        if len(set(s)) != len(s):
            raise ParameterError(f"einsum2 spec {spec!r}: repeated index in {s!r}")
        if len(s) != t.ndim:
            raise ShapeError(f"einsum2 spec {s!r} does not match ndim {t.ndim}")
    for ch in sa:
        if ch not in sb + so:
            raise ParameterError(f"einsum2 spec {spec!r}: index {ch!r} unmatched")
    for ch in sb:
        if ch not in sa + so:
            raise ParameterError(f"einsum2 spec {spec!r}: index {ch!r} unmatched")
    out = np.einsum(spec, a.data, b.data)
    return _make(
        "einsum2",
        out,
        (a, b),
        lambda g: (
            einsum2(f"{so},{sb}->{sa}", g, b),
            einsum2(f"{sa},{so}->{sb}", a, g),
        ),
    )


# ---------------------------------------------------------------------------
# normalizations and softmaxes


def softmax_rows(a) -> Tensor:
    """Row-stochastic softmax with max-subtraction for stability."""
    a = _coerce(a)
    z = a.data - np.max(a.data, axis=1, keepdims=True)
    e = np.exp(z)
    cell: list[Tensor] = []

    def vjp(g):
        s = cell[0]
        inner = tsum(mul(g, s), axis=1, keepdims=True)
        return (mul(s, sub(g, inner)),)

    out = _make("softmax_rows", e / np.sum(e, axis=1, keepdims=True), (a,), vjp)
    cell.append(out)
    return out


def softmax_col(a, tau: float) -> Tensor:
    """Column-stochastic softmax of ``a / tau`` with max-subtraction."""
    a = _coerce(a)
    if not tau > 0:
        raise ParameterError(f"softmax_col temperature must be positive, got {tau}")
    z = a.data / tau
    z = z - np.max(z, axis=0, keepdims=True)
    e = np.exp(z)
    cell: list[Tensor] = []

    def vjp(g):
        s = cell[0]
        inner = tsum(mul(g, s), axis=0, keepdims=True)
        return (mul(constant(1.0 / tau), mul(s, sub(g, inner))),)

    out = _make("softmax_col", e / np.sum(e, axis=0, keepdims=True), (a,), vjp)
    cell.append(out)
    return out


def l2_normalize_rows(a, eps: float = 1e-12) -> Tensor:
    """Scale each row to unit length; zero rows stay zero via the eps guard."""
    a = _coerce(a)
    norms = sqrt(tsum(mul(a, a), axis=1, keepdims=True))
    return div(a, clip_min(norms, eps))


def instance_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize each column (channel) of an (n, c) matrix over the n axis."""
    x = _coerce(x)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"instance_norm expects (n>=1, c), got {x.shape}")
    mu = tmean(x, axis=0, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=0, keepdims=True)
    xhat = div(centered, sqrt(add(var, eps)))
    return add(mul(xhat, gamma), beta)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize each row (token) of an (n, d) matrix over the d axis."""
    x = _coerce(x)
    mu = tmean(x, axis=1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=1, keepdims=True)
    xhat = div(centered, sqrt(add(var, eps)))
    return add(mul(xhat, gamma), beta)


# ---------------------------------------------------------------------------
# spatial ops: padding, windows, conv, resampling


def replicate_pad2d(x, ph: int, pw: int) -> Tensor:
    """Edge-replicate padding of a (c, h, w) map."""
    x = _coerce(x)
    if x.ndim != 3:
        raise ShapeError(f"replicate_pad2d expects (c,h,w), got {x.shape}")
    out = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)), mode="edge")
    return _make(
        "replicate_pad2d", out, (x,), lambda g: (replicate_fold2d(g, ph, pw),)
    )


def replicate_fold2d(x, ph: int, pw: int) -> Tensor:
    """Adjoint of replicate_pad2d: folds padded borders back into the edges."""
    x = _coerce(x)
    if x.ndim != 3:
        raise ShapeError(f"replicate_fold2d expects (c,h,w), got {x.shape}")
    core = x.data
    if ph:
        mid = core[:, ph:-ph, :].copy()
        mid[:, 0, :] += core[:, :ph, :].sum(axis=1)
        mid[:, -1, :] += core[:, -ph:, :].sum(axis=1)
        core = mid
    if pw:
        mid = core[:, :, pw:-pw].copy()
        mid[:, :, 0] += core[:, :, :pw].sum(axis=2)
        mid[:, :, -1] += core[:, :, -pw:].sum(axis=2)
        core = mid
    return _make(
        "replicate_fold2d", core, (x,), lambda g: (replicate_pad2d(g, ph, pw),)
    )


def windows2d(x, kh: int, kw: int) -> Tensor:
    """All kh x kw sliding windows of a (c, h, w) map -> (c, ho, wo, kh, kw)."""
    x = _coerce(x)
    if x.ndim != 3:
        raise ShapeError(f"windows2d expects (c,h,w), got {x.shape}")
    c, h, w = x.shape
    if kh > h or kw > w:
        raise ShapeError(f"window {kh}x{kw} larger than map {h}x{w}")
    out = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(1, 2))
    return _make("windows2d", out.copy(), (x,), lambda g: (windows_fold2d(g, h, w),))


def windows_fold2d(x, h: int, w: int) -> Tensor:
    """Adjoint of windows2d: scatter-add windows back onto a (c, h, w) map."""
    x = _coerce(x)
    if x.ndim != 5:
        raise ShapeError(f"windows_fold2d expects (c,ho,wo,kh,kw), got {x.shape}")
    c, ho, wo, kh, kw = x.shape
    out = np.zeros((c, h, w), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i : i + ho, j : j + wo] += x.data[:, :, :, i, j]
    return _make("windows_fold2d", out, (x,), lambda g: (windows2d(g, kh, kw),))


def conv2d_valid(x, w) -> Tensor:
    """Valid cross-correlation of (c,h,w) with (o,c,kh,kw) filters."""
    w_t = _coerce(w)
    win = windows2d(x, w_t.shape[2], w_t.shape[3])
    return einsum2("chwij,ocij->ohw", win, w_t)


def conv3x3(x, w, b=None) -> Tensor:
    """3x3 conv with edge-replicate padding; preserves spatial size."""
    w_t = _coerce(w)
    if w_t.shape[2:] != (3, 3):
        raise ShapeError(f"conv3x3 expects (o,c,3,3) filters, got {w_t.shape}")
    y = conv2d_valid(replicate_pad2d(x, 1, 1), w_t)
    if b is not None:
        b_t = _coerce(b)
        y = add(y, reshape(b_t, (b_t.shape[0], 1, 1)))
    return y


def _interp_matrix(n_out: int, n_in: int, mode: str, dtype) -> np.ndarray:
    """Row-stochastic (n_out, n_in) resampling matrix, align-corners."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    scale = (n_in - 1) / (n_out - 1) if n_out > 1 else 0.0
    for i in range(n_out):
        pos = i * scale
        if mode == "nearest":
            m[i, int(round(pos))] = 1.0
        else:
            j0 = min(int(np.floor(pos)), n_in - 2)
            f = pos - j0
            m[i, j0] = 1.0 - f
            m[i, j0 + 1] = f
    return m


def upsample(x, out_hw: tuple[int, int], mode: str = "bilinear") -> Tensor:
    """Resize a (c, h, w) map with align-corners bilinear or nearest sampling."""
    x = _coerce(x)
    if x.ndim != 3:
        raise ShapeError(f"upsample expects (c,h,w), got {x.shape}")
    if mode not in ("bilinear", "nearest"):
        raise ParameterError(f"unknown upsample mode {mode!r}")
    ho, wo = out_hw
    ah = Tensor(_interp_matrix(ho, x.shape[1], mode, x.data.dtype))
    aw = Tensor(_interp_matrix(wo, x.shape[2], mode, x.data.dtype))
    y = einsum2("Hh,chw->cHw", ah, x)
    return einsum2("Ww,cHw->cHW", aw, y)


def _corner_weights(points: np.ndarray, h: int, w: int):
    """Shared geometry for bilinear gather/scatter at normalized (x, y) points."""
    if points.ndim != 2 or points.shape[1] != 2:
        raise ShapeError(f"points must be (p, 2), got {points.shape}")
    if points.size and (points.min() < 0.0 or points.max() > 1.0):
        raise ParameterError("sample points must lie in [0, 1]^2")
    gx = points[:, 0] * (w - 1)
    gy = points[:, 1] * (h - 1)
    x0 = np.clip(np.floor(gx).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(gy).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = gx - x0
    fy = gy - y0
    ws = (
        ((y0, x0), (1 - fy) * (1 - fx)),
        ((y0, x1), (1 - fy) * fx),
        ((y1, x0), fy * (1 - fx)),
        ((y1, x1), fy * fx),
    )
    return ws


def bilinear_sample(fmap, points: np.ndarray) -> Tensor:
    """Sample a (c, h, w) map at p normalized (x, y) points -> (p, c).

    Align-corners convention: (0,0) is the center of the top-left texel and
    (1,1) the bottom-right.  Points outside [0,1]^2 raise a range error.
    Gradients flow to the feature map only; points are fixed geometry.
    """
    fmap = _coerce(fmap)
    if fmap.ndim != 3:
        raise ShapeError(f"bilinear_sample expects (c,h,w), got {fmap.shape}")
    points = np.asarray(points, dtype=np.float64)
    c, h, w = fmap.shape
    ws = _corner_weights(points, h, w)
    acc = np.zeros((points.shape[0], c), dtype=fmap.data.dtype)
    for (yy, xx), wgt in ws:
        acc += fmap.data[:, yy, xx].T * wgt[:, None].astype(fmap.data.dtype)
    return _make(
        "bilinear_sample",
        acc,
        (fmap,),
        lambda g: (point_scatter(g, points, (c, h, w)),),
    )


def point_scatter(vals, points: np.ndarray, chw: tuple[int, int, int]) -> Tensor:
    """Adjoint of bilinear_sample: splat (p, c) values onto a (c, h, w) map."""
    vals = _coerce(vals)
    points = np.asarray(points, dtype=np.float64)
    c, h, w = chw
    if vals.ndim != 2 or vals.shape[1] != c:
        raise ShapeError(f"point_scatter expects (p,{c}) values, got {vals.shape}")
    ws = _corner_weights(points, h, w)
    out = np.zeros((c, h, w), dtype=vals.data.dtype)
    for (yy, xx), wgt in ws:
        np.add.at(
            out,
            (slice(None), yy, xx),
            (vals.data * wgt[:, None].astype(vals.data.dtype)).T,
        )
    return _make(
        "point_scatter", out, (vals,), lambda g: (bilinear_sample(g, points),)
    )


def gaussian_blur(x, sigma: float) -> Tensor:
    """Separable Gaussian blur of an (h, w) map with edge-replicate padding.

    Kernel radius is ceil(3 sigma); taps are normalized to sum to one so flat
    regions pass through unchanged.
    """
    x = _coerce(x)
    if x.ndim != 2:
        raise ShapeError(f"gaussian_blur expects (h,w), got {x.shape}")
    if not sigma > 0:
        raise ParameterError(f"blur sigma must be positive, got {sigma}")
    r = int(math.ceil(3.0 * sigma))
    t = np.arange(-r, r + 1, dtype=x.data.dtype)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    k = k / k.sum()
    h, w = x.shape
    y = reshape(x, (1, h, w))
    kv = Tensor(k.reshape(1, 1, 2 * r + 1, 1))
    kh = Tensor(k.reshape(1, 1, 1, 2 * r + 1))
    y = conv2d_valid(replicate_pad2d(y, r, 0), kv)
    y = conv2d_valid(replicate_pad2d(y, 0, r), kh)
    return reshape(y, (h, w))


# ---------------------------------------------------------------------------
# op catalog for the finite-difference sweep


def op_catalog() -> dict[str, Callable]:
    """Name -> callable map of every differentiable op exposed by this module."""
    return {
        "add": add,
        "sub": sub,
        "mul": mul,
        "div": div,
        "neg": neg,
        "power": power,
        "exp": exp,
        "log": log,
        "sqrt": sqrt,
        "clip_min": clip_min,
        "sigmoid": sigmoid,
        "softplus": softplus,
        "erf": erf,
        "gelu": gelu,
        "relu": relu,
        "sum": tsum,
        "mean": tmean,
        "reshape": reshape,
        "transpose": transpose,
        "concat": concat,
        "narrow": narrow,
        "matmul": matmul,
        "einsum2": einsum2,
        "softmax_rows": softmax_rows,
        "softmax_col": softmax_col,
        "l2_normalize_rows": l2_normalize_rows,
        "instance_norm": instance_norm,
        "layer_norm": layer_norm,
        "replicate_pad2d": replicate_pad2d,
        "replicate_fold2d": replicate_fold2d,
        "windows2d": windows2d,
        "windows_fold2d": windows_fold2d,
        "conv2d_valid": conv2d_valid,
        "conv3x3": conv3x3,
        "upsample": upsample,
        "bilinear_sample": bilinear_sample,
        "point_scatter": point_scatter,
        "gaussian_blur": gaussian_blur,
    }

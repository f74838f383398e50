"""Dense float64 tensors with reverse-mode differentiation.

Values live in numpy arrays; every primitive records how to push a
gradient back to its parents, so `backward` on any scalar yields exact
gradients for weights, intermediate activations, and inputs. Non-finite
values are rejected the moment they appear instead of propagating
silently. Everything is deterministic: no op consumes randomness.
"""

import itertools

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_tid_counter = itertools.count()


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """Immutable n-d float64 value, optionally part of a gradient graph.

    `tid` is a creation-ordered id: parents are always created before
    children, so decreasing tid is a valid reverse-topological order for
    the backward sweep. Leaves created with requires_grad=True receive
    entries in the gradient map returned by `backward`.
    """

    __slots__ = ("data", "requires_grad", "tid", "_vjps")

    def __init__(self, data, requires_grad: bool = False, _vjps=(), _own: bool = False):
        if _own:
            arr = data  # freshly computed inside an op, safe to freeze in place
        else:
            arr = np.array(data, dtype=np.float64, order="C")
        _check_finite(arr, "tensor data")
        if arr.flags.writeable:
            arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.tid = next(_tid_counter)
        self._vjps = tuple(_vjps)

    @property
    def shape(self):
        return self.data.shape

    @property
    def _tracked(self) -> bool:
        return self.requires_grad or bool(self._vjps)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tid={self.tid})"

    # arithmetic sugar used throughout the layers and losses
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents_vjps) -> Tensor:
    """Wrap an op result, keeping vjps only when a parent is tracked."""
    vjps = tuple((p, fn) for p, fn in parents_vjps if p._tracked)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim and not data.flags["C_CONTIGUOUS"]:
        data = np.ascontiguousarray(data)
    return Tensor(data, _vjps=vjps, _own=True)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the parent's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc
    return _make(out, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from exc
    return _make(out, [
        (a, lambda g: _unbroadcast(g * b.data, a.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.shape)),
    ])


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, [(a, lambda g: -g)])


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _make(out, [
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ])


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), [(a, lambda g: g * mask)])


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, [(a, lambda g: 2.0 * a.data * g)])


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, [(a, lambda g: g / a.data)])


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return y * (g - dot)

    return _make(y, [(a, vjp)])


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable log(softmax(a)); same math as softmax then log."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    y = np.exp(out)

    def vjp(g):
        return g - y * g.sum(axis=axis, keepdims=True)

    return _make(out, [(a, vjp)])


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.shape).copy()

    return _make(out, [(a, vjp)])


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g / count, a.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg / count, a.shape).copy()

    return _make(out, [(a, vjp)])


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from exc
    return _make(out, [(a, lambda g: g.reshape(a.shape))])


def powi(a: Tensor, p: float) -> Tensor:
    """Elementwise a**p for real p (used for inverse norms)."""
    out = np.power(a.data, p)
    return _make(out, [(a, lambda g: g * p * np.power(a.data, p - 1.0))])


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Direct valid-padding 2-d convolution.

    x: (N, Cin, H, W); w: (Cout, Cin, kh, kw). Output spatial size is
    floor((H - kh)/stride) + 1. Small desk-scale inputs only.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: x {x.shape}, w {w.shape}")
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: {cin} input channels vs kernel {cin_w}")
    if kh > h or kw > wd:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{wd}")
    if stride < 1:
        raise ContractError("conv2d: stride must be >= 1")

    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]  # (N,Cin,Ho,Wo,kh,kw)
    out = np.einsum("nchwij,ocij->nohw", windows, w.data, optimize=True)
    ho, wo = out.shape[2], out.shape[3]

    def vjp_x(g):
        gx = np.zeros((n, cin, h, wd))
        for ki in range(kh):
            for kj in range(kw):
                patch = np.einsum("nohw,oc->nchw", g, w.data[:, :, ki, kj], optimize=True)
                gx[:, :, ki:ki + ho * stride:stride, kj:kj + wo * stride:stride] += patch
        return gx

    def vjp_w(g):
        return np.einsum("nchwij,nohw->ocij", windows, g, optimize=True)

    return _make(out, [(x, vjp_x), (w, vjp_w)])


_FORWARD_OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "relu": relu,
    "conv2d": conv2d,
    "softmax": softmax,
    "log": log,
    "sum": tsum,
    "mean": tmean,
    "square": square,
    "reshape": reshape,
}


def forward_op(kind: str, *inputs, **params) -> Tensor:
    """Apply a primitive by name. Unknown kinds are a contract violation."""
    try:
        fn = _FORWARD_OPS[kind]
    except KeyError:
        raise ContractError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **params)


# ---------------------------------------------------------------------------
# backward


class GradMap:
    """Gradients keyed by tensor id, produced by one backward sweep.

    Tensors the root does not depend on get a zero gradient of the right
    shape, so every differentiable leaf always has an answer.
    """

    def __init__(self, grads: dict):
        self._grads = grads

    def get(self, t: Tensor) -> Tensor:
        g = self._grads.get(t.tid)
        if g is None:
            return Tensor(np.zeros(t.shape))
        return Tensor(g)

    def __contains__(self, t: Tensor) -> bool:
        return t.tid in self._grads


def backward(root: Tensor) -> GradMap:
    """Reverse-mode sweep from a scalar root.

    Returns gradients for every tensor the root depends on (leaves and
    intermediates alike). Each graph node is processed exactly once, in
    decreasing creation order, which respects topology by construction.
    """
    if root.data.shape != ():
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")

    # collect the reachable subgraph
    nodes = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.tid in nodes:
            continue
        nodes[t.tid] = t
        for parent, _ in t._vjps:
            if parent.tid not in nodes:
                stack.append(parent)

    grads = {root.tid: np.ones(())}
    for tid in sorted(nodes, reverse=True):
        t = nodes[tid]
        g = grads.get(tid)
        if g is None:
            continue
        for parent, vjp in t._vjps:
            pg = vjp(g)
            _check_finite(pg, "gradient")
            if parent.tid in grads:
                grads[parent.tid] = grads[parent.tid] + pg
            else:
                grads[parent.tid] = pg
    return GradMap(grads)


def finite_diff_grad(f, x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar-valued f at x.

    Independent of the tape: f is called 2*size times on plain perturbed
    copies. Used as the oracle the backward pass is checked against.
    """
    if h <= 0:
        raise ContractError("finite_diff_grad: h must be positive")
    base = x.data
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        bump = np.zeros_like(base).reshape(-1)
        bump[i] = h
        bump = bump.reshape(base.shape)
        fp = f(Tensor(base + bump)).item()
        fm = f(Tensor(base - bump)).item()
        flat[i] = (fp - fm) / (2.0 * h)
    return Tensor(grad)

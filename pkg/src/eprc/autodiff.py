"""Small reverse-mode automatic differentiation over dense numpy arrays.

Values live in :class:`Tensor` objects. Every primitive records its parents
and a closure that maps the output gradient to parent gradients, so the
graph is built while the forward pass runs. :func:`grad` walks that tape
backwards.

Arithmetic defaults to float32; wrap code in ``precision("float64")`` for
gradient checks.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor", "Graph", "ShapeError", "NonFiniteError",
    "precision", "default_dtype", "check_finite", "tensor", "constant", "grad",
    "matmul", "conv2d", "bias_add", "relu", "max_pool2x2", "reshape",
    "transpose", "getitem", "add", "sub", "mul", "neg", "scale", "sum",
    "softplus", "tanh", "sigmoid", "log", "maximum", "softmax_cross_entropy",
    "custom_op", "numerical_gradient",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with a primitive."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or infinity."""


_DTYPE = np.float32
_CHECK_FINITE = False


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the dtype used for new tensors ("float32"/"float64")."""
    global _DTYPE
    old = _DTYPE
    _DTYPE = np.dtype(name).type
    try:
        yield
    finally:
        _DTYPE = old


@contextlib.contextmanager
def check_finite(enabled: bool = True):
    """Raise :class:`NonFiniteError` as soon as any primitive emits a non-finite value."""
    global _CHECK_FINITE
    old = _CHECK_FINITE
    _CHECK_FINITE = enabled
    try:
        yield
    finally:
        _CHECK_FINITE = old


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad=False, name=None, *, _parents=(), _backward=None, _op="leaf"):
        if not isinstance(data, np.ndarray) or data.dtype.kind != "f":
            data = np.asarray(data, dtype=_DTYPE)
        self.data = data
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.parents = _parents
        self.backward_fn = _backward
        self.op = _op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self.parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def backward(self, seed=1.0):
        """Gradients of this scalar w.r.t. every leaf that requires grad, keyed by tensor."""
        return grad(self, None, seed=seed)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=_DTYPE), requires_grad=requires_grad, name=name)


def constant(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=_DTYPE))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DTYPE))


def _make(data, parents, backward, op) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: produced non-finite values")
    return Tensor(data, _parents=parents, _backward=backward, _op=op)


def custom_op(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Register an externally computed value whose parent gradients come from ``backward``.

    ``backward(g)`` must return one array (or None) per parent.
    """
    return _make(data, tuple(parents), backward, op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad * bd, (a, b), backward, "mul")


def neg(a) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    return _make(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,), "scale")


def sum(a: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.asarray(out, dtype=a.data.dtype), (a,), backward, "sum")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1 - t * t),), "tanh")


def _sigmoid(x):
    # exp of -|x| only, avoids overflow
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data).astype(a.data.dtype, copy=False)
    return _make(s, (a,), lambda g: (g * s * (1 - s),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0, x).astype(x.dtype, copy=False)
    s = _sigmoid(x).astype(x.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * s,), "softplus")


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise NonFiniteError("log: argument must be positive")
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def maximum(a: Tensor, floor: float) -> Tensor:
    """Clamp from below by a constant; gradient is zero where clamped."""
    keep = a.data > floor
    out = np.where(keep, a.data, a.data.dtype.type(floor))
    return _make(out, (a,), lambda g: (g * keep,), "maximum")


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    old = a.shape
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.data.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        out[index] = g
        return (out,)

    return _make(a.data[index], (a,), backward, "getitem")


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias_add: bias {b.shape} does not match channels of {x.shape}")
    axes = tuple(range(x.ndim - 1))
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=axes)), "bias_add")


def _pad_same(kh, kw):
    return ((kh - 1) // 2, kh - 1 - (kh - 1) // 2), ((kw - 1) // 2, kw - 1 - (kw - 1) // 2)


def conv2d(x: Tensor, w: Tensor, padding: str = "valid") -> Tensor:
    """Stride-1 2-D convolution (cross-correlation). x: NHWC, w: HWIO."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    if padding not in ("valid", "same"):
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    kh, kw, cin, cout = w.shape
    xd = x.data
    if padding == "same":
        ph, pw = _pad_same(kh, kw)
        xd = np.pad(xd, ((0, 0), ph, pw, (0, 0)))
    n, hp, wp, _ = xd.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than input {x.shape}")
    # (n, ho, wo, cin, kh, kw) -> (n*ho*wo, kh*kw*cin)
    cols = sliding_window_view(xd, (kh, kw), axis=(1, 2))
    cols = cols.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout)
    xshape, wshape = x.shape, w.shape

    def backward(g):
        g2 = g.reshape(n * ho * wo, cout)
        gw = (cols.T @ g2).reshape(wshape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
            gxp = np.zeros((n, hp, wp, cin), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + ho, j:j + wo, :] += gcols[:, :, :, i, j, :]
            if padding == "same":
                gxp = gxp[:, ph[0]:ph[0] + xshape[1], pw[0]:pw[0] + xshape[2], :]
            gx = gxp
        return gx, gw

    return _make(out, (x, w), backward, "conv2d")


def max_pool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 over NHWC; odd trailing rows/cols are dropped."""
    if x.ndim != 4:
        raise ShapeError(f"max_pool2x2: expected NHWC input, got {x.shape}")
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ShapeError(f"max_pool2x2: input {x.shape} too small")
    xd = x.data[:, :2 * h2, :2 * w2, :]
    blocks = xd.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    shape = x.shape

    def backward(g):
        gb = np.zeros((n, h2, w2, c, 4), dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)
        if gb.shape != shape:
            full = np.zeros(shape, dtype=g.dtype)
            full[:, :2 * h2, :2 * w2, :] = gb
            gb = full
        return (gb,)

    return _make(out, (x,), backward, "max_pool2x2")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy (nats) of integer ``labels`` under softmax(``logits``)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    n = z.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (g / n),)

    return _make(np.asarray(loss, dtype=z.dtype), (logits,), backward, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt: Iterable[Tensor] | None = None, seed=1.0):
    """Reverse-mode gradients of scalar ``output``.

    Returns a list of arrays aligned with ``wrt``; with ``wrt=None`` a dict
    mapping every reachable leaf tensor to its gradient. Leaves that do not
    influence the output get zeros.
    """
    if output.size != 1:
        raise ShapeError(f"grad: output must be scalar, got shape {output.shape}")
    grads = {id(output): np.full(output.shape, seed, dtype=output.data.dtype)}
    leaves = {}
    for node in reversed(_toposort(output)):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if g is not None:
                leaves[id(node)] = (node, g)
            continue
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if wrt is None:
        return {node: g for node, g in leaves.values()}
    out = []
    for t in wrt:
        hit = leaves.get(id(t))
        out.append(np.zeros_like(t.data) if hit is None else np.asarray(hit[1]).reshape(t.shape))
    return out


class Graph:
    """A differentiable function of named leaves.

    ``fn`` receives one :class:`Tensor` per leaf name (as keyword arguments)
    and returns a Tensor. :meth:`evaluate` records the tape, :meth:`backward`
    returns gradients keyed by leaf name.
    """

    def __init__(self, fn: Callable[..., Tensor], leaves: Sequence[str], trainable: Sequence[str] | None = None):
        self.fn = fn
        self.leaves = tuple(leaves)
        self.trainable = tuple(self.leaves if trainable is None else trainable)
        self._inputs: dict[str, Tensor] = {}
        self._output: Tensor | None = None

    def evaluate(self, bindings: Mapping[str, object]) -> Tensor:
        missing = [k for k in self.leaves if k not in bindings]
        if missing:
            raise KeyError(f"unbound leaves: {missing}")
        self._inputs = {
            k: Tensor(np.array(bindings[k], dtype=_DTYPE), requires_grad=k in self.trainable, name=k)
            for k in self.leaves
        }
        with check_finite(True):
            self._output = self.fn(**self._inputs)
        return self._output

    def backward(self, seed=1.0) -> dict[str, np.ndarray]:
        if self._output is None:
            raise RuntimeError("evaluate() must be called before backward()")
        names = list(self.trainable)
        gs = grad(self._output, [self._inputs[k] for k in names], seed=seed)
        return dict(zip(names, gs))


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def log2(x: Tensor) -> Tensor:
    return scale(log(x), 1 / math.log(2))

"""Learned univariate densities for the latents, and the integer tables derived from them.

Each column of a group's latent matrix gets its own cumulative distribution
function, a small monotone network: every layer multiplies by a positive
(softplus'd) matrix, adds a bias, and adds a gated ``tanh`` of itself with
gate magnitude below one, so every layer is strictly increasing. A final
sigmoid maps the logit to a probability.

Training uses the noisy relaxation: the bits of a latent are estimated as the
probability mass of the unit interval centred on ``value + U(-1/2, 1/2)``.
After training the same CDF is integrated over integer bins and quantized to
a frequency table for the range coder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .kernels import density_backend

PRECISION = 16
TOTAL = 1 << PRECISION
PROB_FLOOR = 2.0 ** -32
NUM_ESCAPES = 2


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


class DensityModel:
    """``columns`` independent monotone CDFs sharing one layout.

    Parameters are raw (unconstrained) tensors with the column axis first:
    ``matrices[k]`` has shape ``(columns, out, in)`` and is passed through
    softplus, ``factors[k]`` through tanh.
    """

    def __init__(self, columns: int, filters=(3, 3, 3), init_scale: float = 4.0, seed: int = 0,
                 dtype=None):
        if columns < 1:
            raise ValueError("columns must be >= 1")
        self.columns = columns
        self.filters = tuple(int(f) for f in filters)
        self.init_scale = float(init_scale)
        dtype = np.dtype(dtype or ad.default_dtype()).type
        rng = np.random.default_rng([seed, 0xD5])
        widths = (1,) + self.filters + (1,)
        scale = self.init_scale ** (1 / (len(self.filters) + 1))
        self.matrices, self.biases, self.factors = [], [], []
        for k in range(len(widths) - 1):
            base = np.log(np.expm1(1 / scale / widths[k + 1]))
            # multiplicative jitter breaks the symmetry between hidden units; zero biases
            # keep every logit an odd function of its input, so cdf(0) = 1/2 at init
            raw = base + 0.1 * rng.standard_normal((columns, widths[k + 1], widths[k]))
            self.matrices.append(ad.Tensor(raw.astype(dtype), requires_grad=True, name=f"matrix_{k}"))
            self.biases.append(ad.Tensor(np.zeros((columns, widths[k + 1]), dtype), requires_grad=True,
                                         name=f"bias_{k}"))
            if k < len(self.filters):
                self.factors.append(ad.Tensor(np.zeros((columns, widths[k + 1]), dtype), requires_grad=True,
                                              name=f"factor_{k}"))

    def parameters(self) -> list[ad.Tensor]:
        return [*self.matrices, *self.biases, *self.factors]

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def astype(self, dtype) -> "DensityModel":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    @property
    def packable(self) -> bool:
        return self.filters == (3, 3, 3)

    def packed(self, dtype=np.float64) -> np.ndarray:
        """Effective (constrained) parameters, one 43-vector per column, for the compiled kernel."""
        if not self.packable:
            raise ValueError("only the (3, 3, 3) layout can be packed")
        ell = self.columns
        parts = [_softplus(m.data.astype(np.float64)).reshape(ell, -1) for m in self.matrices]
        parts += [b.data.astype(np.float64).reshape(ell, -1) for b in self.biases]
        parts += [np.tanh(f.data.astype(np.float64)).reshape(ell, -1) for f in self.factors]
        return np.concatenate(parts, axis=1).astype(dtype)

    def unpack_gradient(self, gpacked: np.ndarray) -> list[np.ndarray]:
        """Chain rule from gradients w.r.t. packed effective parameters to the raw tensors."""
        out, offset = [], 0
        for m in self.matrices:
            n = m.data[0].size
            g = gpacked[:, offset:offset + n].reshape(m.shape)
            out.append(g * _sigmoid(m.data.astype(np.float64)))
            offset += n
        for b in self.biases:
            n = b.data[0].size
            out.append(gpacked[:, offset:offset + n].reshape(b.shape))
            offset += n
        for f in self.factors:
            n = f.data[0].size
            t = np.tanh(f.data.astype(np.float64))
            out.append(gpacked[:, offset:offset + n].reshape(f.shape) * (1 - t * t))
            offset += n
        return out

    # -- differentiable path -------------------------------------------------

    def logits(self, x: ad.Tensor) -> ad.Tensor:
        """CDF logits at ``x`` of shape (d, columns), built from autodiff primitives."""
        d = x.shape[0]
        h = ad.reshape(x, (d, self.columns, 1))
        for k, m in enumerate(self.matrices):
            cin = m.shape[2]
            prod = ad.mul(ad.reshape(h, (d, self.columns, 1, cin)), ad.softplus(m))
            h = ad.add(ad.sum(prod, axis=-1), self.biases[k])
            if k < len(self.factors):
                h = ad.add(h, ad.mul(ad.tanh(self.factors[k]), ad.tanh(h)))
        return ad.reshape(h, (d, self.columns))

    # -- plain numerics -------------------------------------------------------

    def logits_numpy(self, x, column: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape
        flat = x.reshape(-1)
        kernel = density_backend()
        if kernel is not None and self.packable:
            return kernel.logits(flat, self.packed()[column]).reshape(shape)
        h = flat[:, None]
        for k, m in enumerate(self.matrices):
            w = _softplus(m.data[column].astype(np.float64))
            h = h @ w.T + self.biases[k].data[column].astype(np.float64)
            if k < len(self.factors):
                h = h + np.tanh(self.factors[k].data[column].astype(np.float64)) * np.tanh(h)
        return h[:, 0].reshape(shape)


def cdf(model: DensityModel, column: int, x) -> np.ndarray:
    """P(X <= x) under column ``column`` of ``model`` (float64)."""
    return _sigmoid(model.logits_numpy(x, column))


def interval_probability(model: DensityModel, column: int, lower, upper) -> np.ndarray:
    """P(lower < X <= upper), evaluated in whichever sigmoid tail keeps precision."""
    lo = model.logits_numpy(lower, column)
    hi = model.logits_numpy(upper, column)
    s = np.where(lo + hi > 0, -1.0, 1.0)
    return s * (_sigmoid(s * hi) - _sigmoid(s * lo))


def _nll_graph(model: DensityModel, noisy: ad.Tensor, floor: float) -> ad.Tensor:
    lower = model.logits(ad.add(noisy, -0.5))
    upper = model.logits(ad.add(noisy, 0.5))
    s = ad.constant(np.where(lower.data + upper.data > 0, -1.0, 1.0))
    lik = ad.mul(s, ad.sub(ad.sigmoid(ad.mul(s, upper)), ad.sigmoid(ad.mul(s, lower))))
    bits = ad.scale(ad.log(ad.maximum(lik, floor)), -1 / math.log(2))
    return ad.sum(bits)


def _nll_kernel(kernel, model: DensityModel, noisy: ad.Tensor, floor: float) -> ad.Tensor:
    x = noisy.data
    dtype = x.dtype
    packed = model.packed(dtype)
    need = noisy.requires_grad or any(p.requires_grad for p in model.parameters())
    total = 0.0
    dx = np.empty_like(x) if need else None
    gpacked = np.zeros((model.columns, packed.shape[1]))
    for c in range(model.columns):
        col = np.ascontiguousarray(x[:, c])
        bits, gx, gp = kernel.nll_column(col, packed[c], floor, need)
        total += bits
        if need:
            dx[:, c] = gx
            gpacked[c] = gp
    params = model.parameters()
    graw = model.unpack_gradient(gpacked) if need else None

    def backward(g):
        g = float(g)
        return (dx * dtype.type(g), *[(gr * g).astype(p.data.dtype) for gr, p in zip(graw, params)])

    return ad.custom_op(np.asarray(total, dtype=dtype), (noisy, *params), backward, "nll_noisy")


def nll_noisy(model: DensityModel, noisy: ad.Tensor, floor: float = PROB_FLOOR, backend: str = "auto") -> ad.Tensor:
    """Total bits ``sum -log2 P(v - 1/2 < X <= v + 1/2)`` over every entry ``v`` of ``noisy``.

    ``noisy`` has shape (d, columns). ``backend`` is "auto", "compiled" or "python".
    """
    if noisy.ndim != 2 or noisy.shape[1] != model.columns:
        raise ad.ShapeError(f"nll_noisy: expected (d, {model.columns}) values, got {noisy.shape}")
    kernel = density_backend() if backend != "python" else None
    if backend == "compiled" and (kernel is None or not model.packable):
        raise RuntimeError("compiled density kernel unavailable")
    if kernel is not None and model.packable:
        return _nll_kernel(kernel, model, noisy, floor)
    return _nll_graph(model, noisy, floor)


# ---------------------------------------------------------------------------
# frequency tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PmfTable:
    """Integer frequencies for symbols ``symbol_min..symbol_max`` plus two escapes.

    ``freqs[0]`` codes values below the range, ``freqs[-1]`` values above it.
    """

    symbol_min: int
    symbol_max: int
    freqs: tuple

    def __post_init__(self):
        f = np.asarray(self.freqs)
        if self.symbol_min > self.symbol_max:
            raise ValueError("symbol_min must not exceed symbol_max")
        if f.shape != (self.symbol_max - self.symbol_min + 1 + NUM_ESCAPES,):
            raise ValueError(f"expected {self.symbol_max - self.symbol_min + 3} frequencies, got {f.shape}")
        if f.min() < 1 or int(f.sum()) != TOTAL:
            raise ValueError(f"frequencies must be >= 1 and sum to {TOTAL}")

    @property
    def num_symbols(self) -> int:
        return len(self.freqs)

    def freq_array(self) -> np.ndarray:
        return np.asarray(self.freqs, dtype=np.uint32)

    def cum_array(self) -> np.ndarray:
        cum = np.zeros(len(self.freqs) + 1, dtype=np.uint32)
        np.cumsum(self.freq_array(), out=cum[1:])
        return cum

    def probabilities(self) -> np.ndarray:
        return self.freq_array() / TOTAL


def quantize_pmf(probs, precision: int = PRECISION) -> np.ndarray:
    """Integer frequencies summing to ``2**precision``, each >= 1.

    Largest-remainder rounding of ``probs * 2**precision``; when entries must be
    raised to 1, the excess is taken from the entries furthest above target.
    """
    total = 1 << precision
    p = np.clip(np.asarray(probs, dtype=np.float64), 0.0, None)
    if p.size == 0 or p.size > total:
        raise ValueError("table size must be in [1, 2**precision]")
    s = p.sum()
    p = p / s if s > 0 else np.full(p.size, 1.0 / p.size)
    target = p * total
    freq = np.maximum(np.floor(target), 1).astype(np.int64)
    deficit = total - int(freq.sum())
    if deficit > 0:
        order = np.argsort(-(target - freq), kind="stable")
        while deficit > 0:
            take = order[:deficit]
            freq[take] += 1
            deficit = total - int(freq.sum())
    while deficit < 0:
        over = np.where(freq > 1, freq - target, -np.inf)
        order = np.argsort(-over, kind="stable")
        n = min(-deficit, int((freq > 1).sum()))
        freq[order[:n]] -= 1
        deficit = total - int(freq.sum())
    return freq.astype(np.uint32)


def table_from_probabilities(symbol_min: int, symbol_max: int, probs) -> PmfTable:
    """Build a table from raw probabilities ordered as (low escape, in-range..., high escape)."""
    if symbol_min == symbol_max:
        freqs = (1, TOTAL - NUM_ESCAPES, 1)
    else:
        freqs = tuple(int(v) for v in quantize_pmf(probs))
    return PmfTable(int(symbol_min), int(symbol_max), freqs)


def extract_pmf_table(model: DensityModel, column: int, observed) -> PmfTable:
    """Discretize column ``column`` of ``model`` over the range of ``observed`` integers."""
    observed = np.asarray(observed)
    if observed.size == 0:
        lo = hi = 0
    else:
        lo, hi = int(observed.min()), int(observed.max())
    n = np.arange(lo, hi + 1, dtype=np.float64)
    inside = interval_probability(model, column, n - 0.5, n + 0.5)
    below = _sigmoid(model.logits_numpy(np.array([lo - 0.5]), column))[0]
    above = _sigmoid(-model.logits_numpy(np.array([hi + 0.5]), column))[0]
    probs = np.concatenate([[below], inside, [above]])
    return table_from_probabilities(lo, hi, probs)

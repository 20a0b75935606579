"""Parameter decoders: integer latent rows -> real weight rows.

Every decoder is row-wise linear, ``W_row = (latent_row + shift) @ M``:

* ``scalar``: one column, ``W = (latent + shift) * scale``; used for dense
  layers and biases.
* ``affine``: ``M`` is a learned matrix.
* ``dft`` / ``random_orthogonal``: ``M = diag(scale) @ B`` with ``B`` a fixed
  orthonormal basis and only ``scale`` learned.

Convolution kernels of shape (H, W, I, O) are laid out with one row per
(input, output) channel pair and ``ell`` spatial taps per row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .quantizer import round_half_away, ste_round

MODES = ("scalar", "affine", "dft", "random_orthogonal")


def make_dft_basis(ell: int, shape: tuple | None = None) -> np.ndarray:
    """Orthonormal real inverse-DFT basis (DCT-II rows); row 0 is the constant vector.

    With ``shape=(h, w)`` (``h * w == ell``) the separable 2-D basis is returned,
    rows ordered by (vertical, horizontal) frequency.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if shape is not None:
        h, w = shape
        if h * w != ell:
            raise ValueError(f"shape {shape} does not have {ell} entries")
        return np.kron(make_dft_basis(h), make_dft_basis(w))
    n = np.arange(ell)
    k = n[:, None]
    basis = np.cos(np.pi * (2 * n[None, :] + 1) * k / (2 * ell))
    basis[0] *= math.sqrt(1.0 / ell)
    basis[1:] *= math.sqrt(2.0 / ell)
    return basis


def make_random_orthogonal(ell: int, seed: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix from QR of a seeded Gaussian matrix."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    a = np.random.default_rng([int(seed), 0x0B]).standard_normal((ell, ell))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q


def is_orthonormal(b: np.ndarray, tol: float = 1e-6) -> bool:
    b = np.asarray(b, dtype=np.float64)
    return b.ndim == 2 and b.shape[0] == b.shape[1] and np.abs(b @ b.T - np.eye(b.shape[0])).max() <= tol


def fixed_basis(mode: str, ell: int, kernel_hw: tuple | None = None, seed: int = 0) -> tuple[np.ndarray, str]:
    """The fixed basis for ``mode`` and the string recorded in containers to rebuild it."""
    if mode == "dft":
        if kernel_hw is not None and kernel_hw[0] * kernel_hw[1] == ell:
            return make_dft_basis(ell, kernel_hw), f"dct2:{kernel_hw[0]}x{kernel_hw[1]}"
        return make_dft_basis(ell), f"dct:{ell}"
    if mode == "random_orthogonal":
        return make_random_orthogonal(ell, seed), f"randorth:{ell}:{seed}"
    raise ValueError(f"mode {mode!r} has no fixed basis")


def basis_from_name(name: str) -> np.ndarray:
    kind, _, arg = name.partition(":")
    if kind == "dct2":
        h, w = (int(v) for v in arg.split("x"))
        return make_dft_basis(h * w, (h, w))
    if kind == "dct":
        return make_dft_basis(int(arg))
    if kind == "randorth":
        ell, seed = (int(v) for v in arg.split(":"))
        return make_random_orthogonal(ell, seed)
    raise ValueError(f"unknown basis {name!r}")


@dataclass
class DecoderParameters:
    mode: str
    shift: ad.Tensor
    scale: ad.Tensor | None = None       # scalar scale or basis_scale
    transform: ad.Tensor | None = None   # affine mode
    basis: np.ndarray | None = None      # fixed-basis modes
    basis_name: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown decoder mode {self.mode!r}")
        ell = self.ell
        if self.mode == "affine":
            if self.transform is None or self.transform.shape != (ell, ell):
                raise ad.ShapeError("affine decoder needs an (ell, ell) transform")
        elif self.scale is None or self.scale.shape != (ell,):
            raise ad.ShapeError("decoder needs a length-ell scale")
        if self.mode == "scalar" and ell != 1:
            raise ad.ShapeError(f"scalar decoder needs ell=1, got {ell}")
        if self.mode in ("dft", "random_orthogonal"):
            if self.basis is None or not is_orthonormal(self.basis):
                raise ValueError("fixed basis must be orthonormal")

    @property
    def ell(self) -> int:
        return self.shift.shape[0]

    def parameters(self) -> list[ad.Tensor]:
        return [self.shift, self.transform if self.mode == "affine" else self.scale]

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def matrix(self) -> np.ndarray:
        """The effective ``M`` of ``(latent + shift) @ M`` as float64."""
        if self.mode == "affine":
            return self.transform.data.astype(np.float64)
        m = np.diag(self.scale.data.astype(np.float64))
        return m @ self.basis if self.basis is not None else m


def init_decoder(mode: str, ell: int, init_std: float, kernel_hw: tuple | None = None,
                 seed: int = 0, dtype=None) -> DecoderParameters:
    """Decoder that starts out as plain scalar quantization with step ``init_std``."""
    dtype = np.dtype(dtype or ad.default_dtype()).type
    shift = ad.Tensor(np.zeros(ell, dtype), requires_grad=True, name="shift")
    if mode == "affine":
        t = ad.Tensor((np.eye(ell) * init_std).astype(dtype), requires_grad=True, name="transform")
        return DecoderParameters(mode, shift, transform=t)
    scale = ad.Tensor(np.full(ell, init_std, dtype), requires_grad=True, name="scale")
    if mode == "scalar":
        return DecoderParameters(mode, shift, scale=scale)
    basis, name = fixed_basis(mode, ell, kernel_hw, seed)
    return DecoderParameters(mode, shift, scale=scale, basis=basis.astype(dtype), basis_name=name)


def decode_rows(values: ad.Tensor, psi: DecoderParameters) -> ad.Tensor:
    """Apply ``(values + shift) @ M`` to every row."""
    if values.ndim != 2 or values.shape[1] != psi.ell:
        raise ad.ShapeError(f"decoder: latent rows {values.shape} do not have {psi.ell} columns")
    shifted = ad.add(values, psi.shift)
    if psi.mode == "affine":
        return ad.matmul(shifted, psi.transform)
    scaled = ad.mul(shifted, psi.scale)
    if psi.basis is None:
        return scaled
    return ad.matmul(scaled, ad.constant(psi.basis.astype(values.data.dtype, copy=False)))


def encode_rows(rows: np.ndarray, psi: DecoderParameters) -> np.ndarray:
    """Continuous latents whose decode is ``rows`` (inverse of :func:`decode_rows`)."""
    m = psi.matrix()
    return np.linalg.solve(m.T, np.asarray(rows, np.float64).T).T - psi.shift.data.astype(np.float64)


# ---------------------------------------------------------------------------
# latent layout
# ---------------------------------------------------------------------------

def rows_from_weight(w: np.ndarray, kind: str, ell: int) -> np.ndarray:
    """Lay a parameter tensor out as a (d, ell) latent matrix."""
    w = np.asarray(w)
    if kind == "conv":
        h, wd, i, o = w.shape
        if (h * wd) % ell:
            raise ValueError(f"ell={ell} does not divide the {h}x{wd} kernel")
        return w.transpose(2, 3, 0, 1).reshape(-1, ell)
    if w.size % ell:
        raise ValueError(f"ell={ell} does not divide {w.size} parameters")
    return w.reshape(-1, ell)


def weight_from_rows(rows: ad.Tensor, kind: str, shape: tuple) -> ad.Tensor:
    if kind == "conv":
        h, w, i, o = shape
        return ad.transpose(ad.reshape(rows, (i, o, h, w)), (2, 3, 0, 1))
    return ad.reshape(rows, shape)


@dataclass
class LatentTensor:
    """Latent matrix for one weight or bias slot.

    ``surrogate`` is the continuous training variable; ``integers`` the stored
    values once finalized.
    """

    slot: str
    group: str
    kind: str                      # "dense", "conv" or "bias"
    target_shape: tuple
    ell: int
    surrogate: ad.Tensor | None = None
    integers: np.ndarray | None = field(default=None, repr=False)

    @property
    def rows(self) -> int:
        return int(np.prod(self.target_shape)) // self.ell

    @property
    def finalized(self) -> bool:
        return self.integers is not None

    def finalize(self, values: np.ndarray | None = None) -> np.ndarray:
        src = self.surrogate.data if values is None else values
        ints = round_half_away(np.asarray(src, dtype=np.float64)).astype(np.int64)
        self.integers = ints
        self.surrogate = None
        return ints

    def values(self) -> ad.Tensor:
        """Integer-valued rows entering the decoder (straight-through while training)."""
        if self.integers is not None:
            return ad.constant(self.integers)
        return ste_round(self.surrogate)


def _decode(latent: LatentTensor, psi: DecoderParameters, values) -> ad.Tensor:
    v = latent.values() if values is None else values
    if not isinstance(v, ad.Tensor):
        v = ad.constant(v)
    if v.shape != (latent.rows, latent.ell):
        raise ad.ShapeError(f"{latent.slot}: latent {v.shape} != ({latent.rows}, {latent.ell})")
    return weight_from_rows(decode_rows(v, psi), latent.kind, latent.target_shape)


def decode_dense(latent: LatentTensor, psi: DecoderParameters, values=None) -> ad.Tensor:
    """Dense weights (I, O) from scalar-decoded latents."""
    if psi.mode != "scalar":
        raise ValueError("dense layers use the scalar decoder")
    return _decode(latent, psi, values)


def decode_conv(latent: LatentTensor, psi: DecoderParameters, values=None) -> ad.Tensor:
    """Convolution kernel (H, W, I, O)."""
    if latent.kind != "conv":
        raise ValueError(f"{latent.slot} is not a convolution kernel")
    return _decode(latent, psi, values)


def decode_bias(latent: LatentTensor, psi: DecoderParameters, values=None) -> ad.Tensor:
    if psi.mode != "scalar":
        raise ValueError("biases use the scalar decoder")
    return _decode(latent, psi, values)


def decode_latent(latent: LatentTensor, psi: DecoderParameters, values=None) -> ad.Tensor:
    """Decode any slot kind with the group's decoder."""
    return _decode(latent, psi, values)

"""Straight-through rounding and uniform-noise perturbation of latent surrogates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Nearest integer, ties away from zero. Exact for every finite float."""
    x = np.asarray(x)
    whole = np.trunc(x)
    frac = x - whole  # exact: no rounding error in the subtraction
    return whole + np.sign(frac) * (np.abs(frac) >= 0.5)


def ste_round(x: ad.Tensor) -> ad.Tensor:
    """Round to the nearest integer on the forward pass, identity on the backward pass."""
    if not np.all(np.isfinite(x.data)):
        raise ad.NonFiniteError("ste_round: non-finite input")
    out = round_half_away(x.data).astype(x.data.dtype, copy=False)
    return ad.custom_op(out, (x,), lambda g: (g,), "ste_round")


@dataclass(frozen=True)
class NoiseDraw:
    values: np.ndarray
    seed: int
    step: int


def noise_generator(seed: int, step: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, step, stream) triple."""
    return np.random.default_rng([int(seed), int(step), int(stream)])


def draw_noise(shape, seed: int, step: int, stream: int = 0, dtype=None) -> NoiseDraw:
    dtype = np.dtype(dtype or ad.default_dtype()).type
    values = noise_generator(seed, step, stream).random(shape, dtype=dtype)
    values -= dtype(0.5)
    return NoiseDraw(values, seed, step)


def add_uniform_noise(x: ad.Tensor, rng: np.random.Generator | NoiseDraw) -> ad.Tensor:
    """Add i.i.d. U[-1/2, 1/2) noise; the gradient w.r.t. ``x`` is the identity."""
    if isinstance(rng, NoiseDraw):
        noise = rng.values
        if noise.shape != x.shape:
            raise ad.ShapeError(f"add_uniform_noise: noise {noise.shape} vs input {x.shape}")
    else:
        noise = rng.random(x.shape, dtype=x.data.dtype) - x.data.dtype.type(0.5)
    return ad.custom_op(x.data + noise.astype(x.data.dtype, copy=False), (x,), lambda g: (g,), "uniform_noise")

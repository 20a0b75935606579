"""Bit-exact range coding of integer symbols under a :class:`~eprc.density.PmfTable`.

Format
------
The coder keeps a 64-bit ``low``/``range`` pair. Each symbol narrows the
range to ``(range >> 16) * freq``; whenever the range drops below 2**32 the
top 32 bits of ``low`` are emitted as a big-endian word and the state is
shifted. Carries out of ``low`` are propagated into words already emitted.

At the end the shortest bit string whose every continuation lies inside the
final interval is appended, so a segment's ``bit_length`` is never below the
self-information of its symbols and at most two bits above it (plus the tiny
loss from truncating ``range``). The decoder reads zero bits past the end.

Values outside the table range are sent as an escape symbol followed by the
Elias-gamma code of the overshoot, one equiprobable binary decision per bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import NUM_ESCAPES, PRECISION, PmfTable
from .kernels import coder_backend

HALF = 1 << (PRECISION - 1)


class CorruptStreamError(ValueError):
    """The stream does not decode under the given table."""


@dataclass(frozen=True)
class Bitstream:
    data: bytes
    bit_length: int

    def __post_init__(self):
        if self.bit_length > 8 * len(self.data) or self.bit_length < 8 * len(self.data) - 7:
            raise ValueError("bit_length inconsistent with byte count")

    def __len__(self):
        return len(self.data)


def _gamma_bits(n: int) -> list[int]:
    length = n.bit_length()
    return [0] * (length - 1) + [(n >> i) & 1 for i in range(length - 1, -1, -1)]


def _split(symbols, table: PmfTable):
    """Table indices and escape overshoots (or None when every value is in range)."""
    v = np.asarray(symbols, dtype=np.int64).reshape(-1)
    idx = v - table.symbol_min + 1
    below = v < table.symbol_min
    above = v > table.symbol_max
    if not (below.any() or above.any()):
        return idx, None
    top = table.num_symbols - 1
    extra = np.zeros_like(v)
    extra[below] = table.symbol_min - 1 - v[below]
    extra[above] = v[above] - table.symbol_max - 1
    idx[below] = 0
    idx[above] = top
    return idx, extra


def _pairs(symbols, table: PmfTable):
    idx, extra = _split(symbols, table)
    cum, freq = table.cum_array(), table.freq_array()
    starts, freqs = cum[idx], freq[idx]
    if extra is None:
        return starts, freqs
    s_out, f_out = [], []
    last = 0
    for i in np.flatnonzero((idx == 0) | (idx == table.num_symbols - 1)):
        s_out.append(starts[last:i + 1])
        f_out.append(freqs[last:i + 1])
        bits = np.array(_gamma_bits(int(extra[i]) + 1), dtype=np.uint32)
        s_out.append(bits * HALF)
        f_out.append(np.full(bits.size, HALF, dtype=np.uint32))
        last = i + 1
    s_out.append(starts[last:])
    f_out.append(freqs[last:])
    return np.concatenate(s_out).astype(np.uint32), np.concatenate(f_out).astype(np.uint32)


def _terminate(words: np.ndarray, low: int, rng: int) -> Bitstream:
    out = [int(w) for w in words]
    high = low + rng
    for k in range(1, 65):
        step = 1 << (64 - k)
        v = -(-low // step)
        if (v + 1) * step <= high:
            break
    value = v * step
    if value >> 64:
        j = len(out) - 1
        while out[j] == 0xFFFFFFFF:
            out[j] = 0
            j -= 1
        out[j] += 1
        value &= (1 << 64) - 1
    nbits = 32 * len(out) + k
    head = np.array(out, dtype=">u4").tobytes()
    tail = (value >> (64 - k)) << ((-k) % 8)
    data = head + tail.to_bytes((k + 7) // 8, "big")
    return Bitstream(data, nbits)


def encode(symbols, table: PmfTable) -> Bitstream:
    """Range-code ``symbols`` (integers; out-of-range values take the escape path)."""
    starts, freqs = _pairs(symbols, table)
    words, low, rng = coder_backend().encode_pairs(np.ascontiguousarray(starts, np.uint32),
                                                   np.ascontiguousarray(freqs, np.uint32))
    return _terminate(words, low, rng)


def decode(stream: Bitstream, table: PmfTable, count: int) -> np.ndarray:
    """Inverse of :func:`encode` for the same table and symbol count."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    data = stream.data + b"\0" * ((-len(stream.data)) % 4)
    words = np.frombuffer(data, dtype=">u4").astype(np.uint32)
    backend = coder_backend()
    top = table.num_symbols - 1
    try:
        idx, extra = backend.decode_symbols(words, table.cum_array(), table.freq_array(), count, 0, top)
    except ValueError as exc:
        raise CorruptStreamError(str(exc)) from None
    values = idx + (table.symbol_min - 1)
    low, high = idx == 0, idx == top
    values[low] = table.symbol_min - 1 - extra[low]
    values[high] = table.symbol_max + 1 + extra[high]
    return values


def self_information(symbols, table: PmfTable) -> float:
    """Ideal code length in bits, ``sum -log2(freq / 2**16)`` (escapes add their gamma bits)."""
    idx, extra = _split(symbols, table)
    logp = np.log2(table.freq_array().astype(np.float64)) - PRECISION
    bits = float(-logp[idx].sum())
    if extra is not None:
        esc = (idx == 0) | (idx == table.num_symbols - 1)
        bits += float(sum(len(_gamma_bits(int(e) + 1)) for e in extra[esc]))
    return bits


__all__ = ["Bitstream", "CorruptStreamError", "encode", "decode", "self_information", "NUM_ESCAPES"]

"""Pure-Python range coder loops; same arithmetic as ``eprc._ext._coder``."""
from __future__ import annotations

from bisect import bisect_right

import numpy as np

PRECISION = 16
HALF = 1 << (PRECISION - 1)
WORD_TOP = 1 << 32
MASK64 = (1 << 64) - 1


class CorruptStreamError(ValueError):
    pass


def encode_pairs(starts, freqs):
    low, rng = 0, MASK64
    out = []
    for start, freq in zip(starts.tolist(), freqs.tolist()):
        r = rng >> PRECISION
        low += r * start
        if low > MASK64:
            low &= MASK64
            j = len(out) - 1
            while out[j] == 0xFFFFFFFF:
                out[j] = 0
                j -= 1
            out[j] += 1
        rng = r * freq
        if rng < WORD_TOP:
            out.append(low >> 32)
            low = (low << 32) & MASK64
            rng <<= 32
    return np.array(out, dtype=np.uint32), low, rng


class _Reader:
    __slots__ = ("words", "pos", "diff", "rng")

    def __init__(self, words):
        self.words = words
        self.pos = 0
        self.rng = MASK64
        self.diff = (self.next() << 32) | self.next()

    def next(self):
        w = self.words[self.pos] if self.pos < len(self.words) else 0
        self.pos += 1
        return w

    def renorm(self):
        if self.rng < WORD_TOP:
            self.diff = (self.diff << 32) | self.next()
            self.rng <<= 32

    def bit(self):
        r = self.rng >> PRECISION
        v = self.diff // r
        if v >= (1 << PRECISION):
            raise CorruptStreamError("range decoder left the coding interval")
        b = 1 if v >= HALF else 0
        self.diff -= r * b * HALF
        self.rng = r * HALF
        self.renorm()
        return b


def decode_symbols(words, cum, freq, count, esc_lo, esc_hi):
    rd = _Reader(words.tolist())
    cum = cum.tolist()
    freq = freq.tolist()
    idx = np.zeros(count, dtype=np.int64)
    ext = np.zeros(count, dtype=np.int64)
    for i in range(count):
        r = rd.rng >> PRECISION
        v = rd.diff // r
        if v >= (1 << PRECISION):
            raise CorruptStreamError("range decoder left the coding interval")
        s = bisect_right(cum, v) - 1
        rd.diff -= r * cum[s]
        rd.rng = r * freq[s]
        if rd.diff >= rd.rng:
            raise CorruptStreamError("range decoder left the coding interval")
        rd.renorm()
        idx[i] = s
        if s == esc_lo or s == esc_hi:
            zeros = 0
            while rd.bit() == 0:
                zeros += 1
                if zeros > 62:
                    raise CorruptStreamError("escape length out of range")
            val = 1
            for _ in range(zeros):
                val = (val << 1) | rd.bit()
            ext[i] = val - 1
    return idx, ext

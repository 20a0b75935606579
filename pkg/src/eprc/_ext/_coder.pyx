# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops of the range coder (see eprc.coder for the format)."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint32_t, uint64_t, int64_t

cnp.import_array()

cdef enum:
    PRECISION = 16
    HALF = 32768

cdef uint64_t WORD_TOP = 4294967296ULL
cdef uint64_t FULL = 0xFFFFFFFFFFFFFFFFULL


class CorruptStreamError(ValueError):
    pass


def encode_pairs(const uint32_t[::1] starts, const uint32_t[::1] freqs):
    """Encode (start, freq) pairs. Returns (words, low, range) before termination."""
    cdef Py_ssize_t n = starts.shape[0], i, j, nw = 0
    cdef uint64_t low = 0, rng = FULL, r, new_low
    # each symbol emits at most one word
    out_arr = np.zeros(n + 2, dtype=np.uint32)
    cdef uint32_t[::1] out = out_arr
    with nogil:
        for i in range(n):
            r = rng >> PRECISION
            new_low = low + r * starts[i]
            if new_low < low:
                j = nw - 1
                while out[j] == 0xFFFFFFFFU:
                    out[j] = 0
                    j -= 1
                out[j] += 1
            low = new_low
            rng = r * freqs[i]
            if rng < WORD_TOP:
                out[nw] = <uint32_t>(low >> 32)
                nw += 1
                low <<= 32
                rng <<= 32
    return out_arr[:nw].copy(), int(low), int(rng)


cdef struct State:
    uint64_t diff
    uint64_t rng
    Py_ssize_t pos
    Py_ssize_t nwords
    const uint32_t *words


cdef inline uint64_t _next(State *st) nogil:
    cdef uint64_t w = 0
    if st.pos < st.nwords:
        w = st.words[st.pos]
    st.pos += 1
    return w


cdef inline void _renorm(State *st) nogil:
    if st.rng < WORD_TOP:
        st.diff = (st.diff << 32) | _next(st)
        st.rng <<= 32


cdef inline int _decode_bit(State *st) nogil:
    cdef uint64_t r = st.rng >> PRECISION
    cdef uint64_t v = st.diff // r
    cdef int bit
    if v >= (1 << PRECISION):
        return -1
    bit = 1 if v >= HALF else 0
    st.diff -= r * (<uint64_t>bit * HALF)
    st.rng = r * HALF
    _renorm(st)
    return bit


def decode_symbols(const uint32_t[::1] words, const uint32_t[::1] cum, const uint32_t[::1] freq,
                   Py_ssize_t count, Py_ssize_t esc_lo, Py_ssize_t esc_hi):
    """Decode ``count`` table indices; escape indices are followed by an Elias-gamma extra.

    ``cum`` has one more entry than ``freq``. Returns (indices, extras)."""
    cdef Py_ssize_t nsym = freq.shape[0], i, k, s, zeros
    cdef uint64_t r, v, val
    cdef int bad = 0, bit
    cdef State st
    idx_arr = np.zeros(count, dtype=np.int64)
    ext_arr = np.zeros(count, dtype=np.int64)
    cdef int64_t[::1] idx = idx_arr
    cdef int64_t[::1] ext = ext_arr
    lookup_arr = np.zeros(1 << PRECISION, dtype=np.uint32)
    cdef uint32_t[::1] lookup = lookup_arr
    cdef uint32_t dummy = 0
    st.words = &words[0] if words.shape[0] > 0 else &dummy
    st.nwords = words.shape[0]
    st.pos = 0
    st.rng = FULL
    with nogil:
        for s in range(nsym):
            for k in range(cum[s], cum[s + 1]):
                lookup[k] = <uint32_t>s
        st.diff = _next(&st) << 32
        st.diff |= _next(&st)
        for i in range(count):
            r = st.rng >> PRECISION
            v = st.diff // r
            if v >= (1 << PRECISION):
                bad = 1
                break
            s = lookup[v]
            st.diff -= r * cum[s]
            st.rng = r * freq[s]
            if st.diff >= st.rng:
                bad = 1
                break
            _renorm(&st)
            idx[i] = s
            if s == esc_lo or s == esc_hi:
                zeros = 0
                bit = _decode_bit(&st)
                while bit == 0:
                    zeros += 1
                    if zeros > 62:
                        break
                    bit = _decode_bit(&st)
                if bit != 1:
                    bad = 1
                    break
                val = 1
                for k in range(zeros):
                    bit = _decode_bit(&st)
                    if bit < 0:
                        bad = 1
                        break
                    val = (val << 1) | <uint64_t>bit
                if bad:
                    break
                ext[i] = <int64_t>(val - 1)
    if bad:
        raise CorruptStreamError("range decoder left the coding interval")
    return idx_arr, ext_arr

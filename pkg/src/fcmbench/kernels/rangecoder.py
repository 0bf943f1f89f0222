"""Adaptive binary arithmetic coder (bit-oriented, carry-free via
pending-bit renormalization).

Contexts are 16-bit probabilities of the zero bin, updated with an
exponential shift-5 rule. The encoder tracks an information-theoretic
rate estimate (sum of -log2 p) alongside the actual bit count; the two
agree within a fraction of a percent on non-trivial streams.

State is kept in small numpy arrays so the same functions run either
njit-compiled or interpreted (numpy fallback backend).
"""

import math

import numpy as np

from . import jit

MAX_CODE = (1 << 32) - 1
HALF = 1 << 31
QUARTER = 1 << 30
THREE_QUARTER = HALF + QUARTER

PROB_ONE = 1 << 16
PROB_INIT = PROB_ONE // 2
PROB_MIN = 32
PROB_MAX = PROB_ONE - 32
ADAPT_SHIFT = 5

# enc/dec state array layout
LOW, HIGH, PENDING, BITPOS, VALUE, NBITS = 0, 1, 2, 3, 4, 5


def new_state():
    st = np.zeros(6, dtype=np.int64)
    st[HIGH] = MAX_CODE
    return st


def new_contexts(n: int):
    return np.full(n, PROB_INIT, dtype=np.int64)


@jit
def _put_bit(buf, pos, bit):
    if bit:
        buf[pos >> 3] |= np.uint8(1 << (7 - (pos & 7)))


@jit
def _get_bit(buf, pos):
    if pos >= buf.shape[0] * 8:
        return 0
    return (buf[pos >> 3] >> (7 - (pos & 7))) & 1


@jit
def _emit(st, buf, bit):
    _put_bit(buf, st[BITPOS], bit)
    st[BITPOS] += 1
    inv = 1 - bit
    while st[PENDING] > 0:
        _put_bit(buf, st[BITPOS], inv)
        st[BITPOS] += 1
        st[PENDING] -= 1


@jit
def _enc_renorm(st, buf):
    while True:
        if st[HIGH] < HALF:
            _emit(st, buf, 0)
        elif st[LOW] >= HALF:
            _emit(st, buf, 1)
            st[LOW] -= HALF
            st[HIGH] -= HALF
        elif st[LOW] >= QUARTER and st[HIGH] < THREE_QUARTER:
            st[PENDING] += 1
            st[LOW] -= QUARTER
            st[HIGH] -= QUARTER
        else:
            break
        st[LOW] = (st[LOW] << 1) & MAX_CODE
        st[HIGH] = ((st[HIGH] << 1) & MAX_CODE) | 1


@jit
def enc_bin(st, est, buf, ctxs, ctx, bit):
    p0 = ctxs[ctx]
    rng = st[HIGH] - st[LOW] + 1
    split = st[LOW] + ((rng * p0) >> 16) - 1
    if bit == 0:
        st[HIGH] = split
        est[0] += -math.log2(p0 / PROB_ONE)
        p0 += (PROB_ONE - p0) >> ADAPT_SHIFT
    else:
        st[LOW] = split + 1
        est[0] += -math.log2(1.0 - p0 / PROB_ONE)
        p0 -= p0 >> ADAPT_SHIFT
    if p0 < PROB_MIN:
        p0 = PROB_MIN
    elif p0 > PROB_MAX:
        p0 = PROB_MAX
    ctxs[ctx] = p0
    _enc_renorm(st, buf)


@jit
def enc_bypass(st, est, buf, bit):
    rng = st[HIGH] - st[LOW] + 1
    split = st[LOW] + (rng >> 1) - 1
    if bit == 0:
        st[HIGH] = split
    else:
        st[LOW] = split + 1
    est[0] += 1.0
    _enc_renorm(st, buf)


@jit
def enc_bypass_bits(st, est, buf, value, nbits):
    for i in range(nbits - 1, -1, -1):
        enc_bypass(st, est, buf, (value >> i) & 1)


@jit
def enc_eg0(st, est, buf, value):
    # order-0 exp-golomb: unary prefix of floor(log2(v+1)) ones, then bits
    v = value + 1
    nbits = 0
    while (v >> (nbits + 1)) > 0:
        nbits += 1
    for _ in range(nbits):
        enc_bypass(st, est, buf, 1)
    enc_bypass(st, est, buf, 0)
    enc_bypass_bits(st, est, buf, v - (1 << nbits), nbits)


@jit
def enc_finish(st, est, buf):
    st[PENDING] += 1
    if st[LOW] < QUARTER:
        _emit(st, buf, 0)
    else:
        _emit(st, buf, 1)
    # byte alignment
    while st[BITPOS] & 7:
        _put_bit(buf, st[BITPOS], 0)
        st[BITPOS] += 1


@jit
def dec_init(st, buf):
    st[LOW] = 0
    st[HIGH] = MAX_CODE
    value = 0
    pos = 0
    for _ in range(32):
        value = ((value << 1) | _get_bit(buf, pos)) & MAX_CODE
        pos += 1
    st[VALUE] = value
    st[NBITS] = pos


@jit
def _dec_renorm(st, buf):
    while True:
        if st[HIGH] < HALF:
            pass
        elif st[LOW] >= HALF:
            st[LOW] -= HALF
            st[HIGH] -= HALF
            st[VALUE] -= HALF
        elif st[LOW] >= QUARTER and st[HIGH] < THREE_QUARTER:
            st[LOW] -= QUARTER
            st[HIGH] -= QUARTER
            st[VALUE] -= QUARTER
        else:
            break
        st[LOW] = (st[LOW] << 1) & MAX_CODE
        st[HIGH] = ((st[HIGH] << 1) & MAX_CODE) | 1
        st[VALUE] = ((st[VALUE] << 1) & MAX_CODE) | _get_bit(buf, st[NBITS])
        st[NBITS] += 1


@jit
def dec_bin(st, buf, ctxs, ctx):
    p0 = ctxs[ctx]
    rng = st[HIGH] - st[LOW] + 1
    split = st[LOW] + ((rng * p0) >> 16) - 1
    if st[VALUE] <= split:
        bit = 0
        st[HIGH] = split
        p0 += (PROB_ONE - p0) >> ADAPT_SHIFT
    else:
        bit = 1
        st[LOW] = split + 1
        p0 -= p0 >> ADAPT_SHIFT
    if p0 < PROB_MIN:
        p0 = PROB_MIN
    elif p0 > PROB_MAX:
        p0 = PROB_MAX
    ctxs[ctx] = p0
    _dec_renorm(st, buf)
    return bit


@jit
def dec_bypass(st, buf):
    rng = st[HIGH] - st[LOW] + 1
    split = st[LOW] + (rng >> 1) - 1
    if st[VALUE] <= split:
        bit = 0
        st[HIGH] = split
    else:
        bit = 1
        st[LOW] = split + 1
    _dec_renorm(st, buf)
    return bit


@jit
def dec_bypass_bits(st, buf, nbits):
    value = 0
    for _ in range(nbits):
        value = (value << 1) | dec_bypass(st, buf)
    return value


@jit
def dec_eg0(st, buf):
    nbits = 0
    while dec_bypass(st, buf) == 1:
        nbits += 1
        if nbits > 40:  # corrupt stream guard
            return -1
    return (1 << nbits) + dec_bypass_bits(st, buf, nbits) - 1

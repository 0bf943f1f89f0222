"""Quantization kernels: dead-zone scalar quantizer, level rate model,
and the 4-state dependent-quantization trellis.

The rate model here is the one shared by every RD decision in the
engine: sig bin + sign + greater-than-1 bin + order-0 exp-golomb
remainder, plus an exp-golomb last-position cost per coded block.

Trellis states 0..3: states {0,1} reconstruct on the scalar lattice
l*Qstep, states {2,3} on the interleaved offset lattice
sign(l)*(|l|-0.5)*Qstep (zero stays zero). Transitions are driven by
level parity: next = TRANS[state][level & 1].
"""

import numpy as np

from . import NUMBA_ENABLED, jit

TRANS = np.array([[0, 2], [2, 0], [1, 3], [3, 1]], dtype=np.int64)


def qstep_for_qp(qp: int) -> float:
    return 2.0 ** ((qp - 4) / 6.0)


def eg0_bits_array(k):
    """Vectorized order-0 exp-golomb bit count for k >= 0."""
    k = np.asarray(k, dtype=np.int64)
    return 2 * np.floor(np.log2(k + 1)).astype(np.int64) + 1


@jit
def eg0_bits(k):
    v = k + 1
    n = 0
    while (v >> (n + 1)) > 0:
        n += 1
    return 2 * n + 1


@jit
def level_bits(level):
    if level == 0:
        return 1.0
    a = level if level > 0 else -level
    bits = 3.0  # sig + sign + gt1
    if a >= 2:
        bits += eg0_bits(a - 2)
    return bits


def quantize_scalar(coeffs: np.ndarray, qstep: float) -> np.ndarray:
    """Dead-zone scalar: level = sign(c) * floor(|c|/Qstep + 0.4)."""
    c = np.asarray(coeffs, dtype=np.float64)
    return (np.sign(c) * np.floor(np.abs(c) / qstep + 0.4)).astype(np.int32)


def dequantize_scalar(levels: np.ndarray, qstep: float) -> np.ndarray:
    return (levels.astype(np.float64) * qstep).astype(np.float32)


def block_rate_bits(levels_scan: np.ndarray) -> float:
    """Model rate of one coded block given its scanned levels.

    Zero blocks cost nothing here; the cbf bin is charged by the caller.
    """
    nz = np.nonzero(levels_scan)[0]
    if nz.size == 0:
        return 0.0
    last = int(nz[-1])
    lv = levels_scan[: last + 1]
    a = np.abs(lv)
    bits = float(last + 1)  # sig bins
    nonzero = a > 0
    bits += 2.0 * np.count_nonzero(nonzero)  # sign + gt1
    big = a >= 2
    if big.any():
        bits += float(eg0_bits_array(a[big] - 2).sum())
    bits += float(eg0_bits(last))
    return bits


def batch_rate_bits(levels: np.ndarray) -> np.ndarray:
    """block_rate_bits over a batch (M, n) of scanned level vectors."""
    m, n = levels.shape
    a = np.abs(levels)
    nonzero = a > 0
    any_nz = nonzero.any(axis=1)
    # last significant index per row (0 where empty; masked later)
    rev_arg = n - 1 - np.argmax(nonzero[:, ::-1], axis=1)
    last = np.where(any_nz, rev_arg, -1)
    idx = np.arange(n)[None, :]
    coded = idx <= last[:, None]
    bits = (last + 1).astype(np.float64)
    bits += 2.0 * np.count_nonzero(nonzero & coded, axis=1)
    rem = np.where(nonzero & (a >= 2), a - 2, 0)
    rem_bits = np.where(nonzero & (a >= 2), 2 * np.floor(np.log2(rem + 1)) + 1, 0.0)
    bits += rem_bits.sum(axis=1)
    bits += np.where(any_nz, 2 * np.floor(np.log2(last + 1, where=any_nz, out=np.zeros(m))) + 1, 0.0)
    return np.where(any_nz, bits, 0.0)


@jit
def _recon_value(state, level, qstep):
    if state < 2:
        return level * qstep
    if level == 0:
        return 0.0
    if level > 0:
        return (level - 0.5) * qstep
    return (level + 0.5) * qstep


@jit
def trellis_quantize(coeffs_scan, qstep, lam, last):
    """Exact DP over the 4-state dependent quantizer.

    Processes scan positions last..0 (reverse scan, mirroring the
    decoder's state replay), minimizing sum((c - recon)^2) + lam*bits.
    Returns (levels, cost) where cost covers positions 0..last only.
    """
    n = last + 1
    levels = np.zeros(coeffs_scan.shape[0], dtype=np.int32)
    if n <= 0:
        return levels, 0.0
    big = 1e300
    cost = np.full(4, big)
    cost[0] = 0.0
    # choice[i, s] = level chosen at scan position (last - i) arriving in state s
    choice = np.zeros((n, 4), dtype=np.int32)
    prev_state = np.zeros((n, 4), dtype=np.int32)
    cand = np.zeros(8, dtype=np.int64)
    for i in range(n):
        c = coeffs_scan[last - i]
        new_cost = np.full(4, big)
        new_choice = np.zeros(4, dtype=np.int32)
        new_prev = np.zeros(4, dtype=np.int32)
        # candidate levels: nearest on each lattice +-1, scalar level +-1, 0
        ls = int(np.floor(abs(c) / qstep + 0.4))
        l0 = int(np.rint(c / qstep))
        l1 = int(np.rint(c / qstep + (0.5 if c > 0 else -0.5)))
        sgn = 1 if c >= 0 else -1
        cand[0] = 0
        cand[1] = l0 - 1
        cand[2] = l0
        cand[3] = l0 + 1
        cand[4] = l1 - 1
        cand[5] = l1
        cand[6] = l1 + 1
        cand[7] = sgn * ls
        for s in range(4):
            if cost[s] >= big:
                continue
            for k in range(8):
                lv = cand[k]
                r = _recon_value(s, lv, qstep)
                d = (c - r) * (c - r)
                ct = cost[s] + d + lam * level_bits(lv)
                ns = TRANS[s][lv & 1]
                if ct < new_cost[ns]:
                    new_cost[ns] = ct
                    new_choice[ns] = lv
                    new_prev[ns] = s
        for s in range(4):
            cost[s] = new_cost[s]
            choice[i, s] = new_choice[s]
            prev_state[i, s] = new_prev[s]
    # pick best terminal state, backtrack
    best_s = 0
    for s in range(1, 4):
        if cost[s] < cost[best_s]:
            best_s = s
    total = cost[best_s]
    s = best_s
    for i in range(n - 1, -1, -1):
        levels[last - i] = choice[i, s]
        s = prev_state[i, s]
    return levels, total


@jit
def trellis_dequantize(levels_scan, qstep, last, out):
    """Replay the state machine over decoded levels (reverse scan)."""
    state = 0
    for i in range(last, -1, -1):
        out[i] = _recon_value(state, levels_scan[i], qstep)
        state = TRANS[state][levels_scan[i] & 1]
    for i in range(last + 1, levels_scan.shape[0]):
        out[i] = 0.0


def trellis_path_cost(levels_scan, coeffs_scan, qstep, lam, last):
    """Cost of an arbitrary level vector under trellis semantics.

    Independent of the DP above; used as the exhaustive-search oracle's
    evaluator and by tests.
    """
    state = 0
    total = 0.0
    for i in range(last, -1, -1):
        lv = int(levels_scan[i])
        if state < 2:
            r = lv * qstep
        elif lv == 0:
            r = 0.0
        else:
            r = (abs(lv) - 0.5) * qstep * (1 if lv > 0 else -1)
        d = float(coeffs_scan[i]) - r
        total += d * d + lam * (
            1.0 if lv == 0 else 3.0 + (eg0_bits(abs(lv) - 2) if abs(lv) >= 2 else 0.0)
        )
        state = int(TRANS[state][lv & 1])
    return total


if NUMBA_ENABLED:
    # warm the tiny kernels so first-use latency lands at import, not
    # in the middle of a timed encode
    _ = eg0_bits(3)
    _ = level_bits(-5)

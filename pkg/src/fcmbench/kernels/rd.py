"""Fused quantize+rate+distortion kernels for RD candidate costing.

One pass per candidate: dead-zone scalar levels, transform-domain SSE
against the dequantized reconstruction, and the level rate model
(sig + sign + gt1 + EG0 remainder + EG0 last position). The numba path
loops; the numpy fallback vectorizes the same arithmetic.
"""

import numpy as np

from . import NUMBA_ENABLED, jit
from .quant import eg0_bits


@jit
def _quant_rd_rows(coeffs, qstep, dist, bits):
    m, n = coeffs.shape
    for r in range(m):
        d = 0.0
        b = 0.0
        last = -1
        nz = 0
        for i in range(n):
            c = coeffs[r, i]
            a = c if c >= 0 else -c
            lv = int(a / qstep + 0.4)
            if lv > 0:
                last = i
                nz += 1
                b += 2.0  # sign + gt1
                if lv >= 2:
                    b += eg0_bits(lv - 2)
                rec = lv * qstep
                e = a - rec
                d += e * e
            else:
                d += c * c
        if last >= 0:
            b += (last + 1) + eg0_bits(last)  # sig bins + last position
        dist[r] = d
        bits[r] = b


def quant_rd_batch(coeffs, qstep):
    """(dist, bits) per row of a (M, N) float32 coefficient batch."""
    m = coeffs.shape[0]
    dist = np.empty(m, dtype=np.float64)
    bits = np.empty(m, dtype=np.float64)
    c2 = np.ascontiguousarray(coeffs.reshape(m, -1), dtype=np.float32)
    if NUMBA_ENABLED:
        _quant_rd_rows(c2, qstep, dist, bits)
        return dist, bits
    a = np.abs(c2.astype(np.float64))
    lv = np.floor(a / qstep + 0.4)
    rec = lv * qstep
    err = np.where(lv > 0, a - rec, c2.astype(np.float64))
    dist[:] = (err * err).sum(axis=1)
    nzmask = lv > 0
    any_nz = nzmask.any(axis=1)
    n = c2.shape[1]
    lastpos = np.where(any_nz, n - 1 - np.argmax(nzmask[:, ::-1], axis=1), -1)
    b = 2.0 * nzmask.sum(axis=1)
    big = lv >= 2
    rem = np.where(big, lv - 2, 0)
    b += np.where(big, 2 * np.floor(np.log2(rem + 1)) + 1, 0.0).sum(axis=1)
    lp = np.maximum(lastpos, 0)
    b += np.where(any_nz, (lastpos + 1) + 2 * np.floor(np.log2(lp + 1)) + 1, 0.0)
    bits[:] = b
    return dist, bits


def quant_rd_single(coeffs, qstep):
    d, b = quant_rd_batch(coeffs.reshape(1, -1), qstep)
    return float(d[0]), float(b[0])

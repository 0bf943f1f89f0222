"""Fully fused intra RD kernels for small blocks: reference build,
prediction, forward transform, quantization, rate and distortion in one
njit call. The numpy/BLAS path in the encoder handles large blocks;
these kernels kill the per-call overhead that dominates at 4..16.
"""

import numpy as np

from . import jit
from .intra import _build_reference_loop
from .quant import eg0_bits


@jit
def _predict_into(vals, ext, idx2d, frac2d, mode, w, h, r, pred):
    if mode >= 2:
        for i in range(h):
            for j in range(w):
                k = idx2d[i, j]
                f = frac2d[i, j]
                pred[i, j] = vals[k] * (np.float32(1.0) - f) + vals[k + 1] * f
        return
    if mode == 1:  # DC
        s = 0.0
        for j in range(w):
            s += vals[ext + 1 + r + j]
        for i in range(h):
            s += vals[ext - 1 - r - i]
        dc = np.float32(s / (w + h))
        for i in range(h):
            for j in range(w):
                pred[i, j] = dc
        return
    # planar
    tr = vals[ext + 1 + r + w]
    bl = vals[ext - 1 - r - h]
    for i in range(h):
        left = vals[ext - 1 - r - i]
        for j in range(w):
            top = vals[ext + 1 + r + j]
            hor = ((w - 1 - j) * left + (j + 1) * tr) / w
            ver = ((h - 1 - i) * top + (i + 1) * bl) / h
            pred[i, j] = np.float32(0.5) * (hor + ver)


@jit
def _block_rd(src, pred, tv, th, qstep, lam, c1, levels):
    """Forward DCT2 of (src - pred), scalar quantization, model rate
    and transform-domain SSE. Returns (cost, bits); levels filled in
    raster scan."""
    h, w = src.shape
    for i in range(h):
        for k in range(w):
            acc = np.float32(0.0)
            for j in range(h):
                acc += tv[i, j] * (src[j, k] - pred[j, k])
            c1[i, k] = acc
    dist = 0.0
    bits = 0.0
    last = -1
    n = 0
    for i in range(h):
        for l in range(w):
            acc = np.float32(0.0)
            for k in range(w):
                acc += c1[i, k] * th[l, k]
            c = float(acc)
            a = c if c >= 0 else -c
            lv = int(a / qstep + 0.4)
            if lv > 0:
                last = n
                bits += 2.0
                if lv >= 2:
                    bits += eg0_bits(lv - 2)
                e = a - lv * qstep
                dist += e * e
            else:
                dist += c * c
            levels[n] = lv if c >= 0 else -lv
            n += 1
    if last >= 0:
        bits += (last + 1) + eg0_bits(last)
    return dist + lam * bits, bits


@jit
def stage_a_costs(src, recon, coded, xloc, yloc, w, h, modes, idx_tbl, frac_tbl,
                  tv, th, qstep, lam, costs):
    """cost (dist + lam*rate_bits) per mode with the base toolset
    (line 0, DCT2, scalar quantization). idx_tbl/frac_tbl are the
    (65, h, w) projection tables for this geometry."""
    ext = h + w
    vals = np.zeros(2 * ext + 1, dtype=np.float32)
    _build_reference_loop(recon, coded, xloc, yloc, w, h, 0, vals)
    pred = np.empty((h, w), dtype=np.float32)
    c1 = np.empty((h, w), dtype=np.float32)
    levels = np.empty(h * w, dtype=np.int32)
    for mi in range(modes.shape[0]):
        m = modes[mi]
        t = m - 2 if m >= 2 else 0
        _predict_into(vals, ext, idx_tbl[t], frac_tbl[t], m, w, h, 0, pred)
        cost, _ = _block_rd(src, pred, tv, th, qstep, lam, c1, levels)
        costs[mi] = cost


@jit
def intra_code_block(src, recon, coded, xloc, yloc, w, h, modes, idx_tbl,
                     frac_tbl, tv, th, qstep, lam):
    """Interim coding of one block: best mode among `modes` with the
    base toolset, reconstructed in place. Returns (cost, mode); cost is
    dist + lam*residual_bits (header/cbf bins are the caller's)."""
    ext = h + w
    vals = np.zeros(2 * ext + 1, dtype=np.float32)
    _build_reference_loop(recon, coded, xloc, yloc, w, h, 0, vals)
    pred = np.empty((h, w), dtype=np.float32)
    c1 = np.empty((h, w), dtype=np.float32)
    levels = np.empty(h * w, dtype=np.int32)
    best_cost = 1e300
    best_mode = modes[0]
    for mi in range(modes.shape[0]):
        m = modes[mi]
        t = m - 2 if m >= 2 else 0
        _predict_into(vals, ext, idx_tbl[t], frac_tbl[t], m, w, h, 0, pred)
        cost, _ = _block_rd(src, pred, tv, th, qstep, lam, c1, levels)
        if cost < best_cost:
            best_cost = cost
            best_mode = m
    t = best_mode - 2 if best_mode >= 2 else 0
    _predict_into(vals, ext, idx_tbl[t], frac_tbl[t], best_mode, w, h, 0, pred)
    _block_rd(src, pred, tv, th, qstep, lam, c1, levels)
    deq = np.empty((h, w), dtype=np.float32)
    t1 = np.empty((h, w), dtype=np.float32)
    n = 0
    for i in range(h):
        for j in range(w):
            deq[i, j] = np.float32(levels[n] * qstep)
            n += 1
    for i in range(h):
        for j in range(w):
            acc = np.float32(0.0)
            for k in range(h):
                acc += tv[k, i] * deq[k, j]
            t1[i, j] = acc
    for i in range(h):
        for j in range(w):
            acc = np.float32(0.0)
            for k in range(w):
                acc += t1[i, k] * th[k, j]
            v = np.rint(pred[i, j] + acc)
            if v < 0:
                v = 0
            elif v > 1023:
                v = 1023
            recon[yloc + i, xloc + j] = np.uint16(v)
            coded[yloc + i, xloc + j] = True
    return best_cost, best_mode


@jit
def isp_variant_rd(src, recon, coded, xloc, yloc, w, h, mode, vertical,
                   idx_sub, frac_sub, tv, th, qstep, lam):
    """Sequential RD of one ISP variant: per sub-partition, predict
    from the live reconstruction, code with the scalar model, and
    reconstruct in place so later sub-partitions see it. Caller
    snapshots and restores recon/coded around the call. Returns the
    total cost including one cbf bin per sub-partition."""
    if vertical:
        parts = 2 if w == 8 else 4
        sw = w // parts
        sh = h
    else:
        parts = 2 if h == 8 else 4
        sw = w
        sh = h // parts
    total = 0.0
    ext = sh + sw
    vals = np.zeros(2 * ext + 1, dtype=np.float32)
    pred = np.empty((sh, sw), dtype=np.float32)
    c1 = np.empty((sh, sw), dtype=np.float32)
    levels = np.empty(sh * sw, dtype=np.int32)
    deq = np.empty((sh, sw), dtype=np.float32)
    t1 = np.empty((sh, sw), dtype=np.float32)
    for p in range(parts):
        ox = p * sw if vertical else 0
        oy = 0 if vertical else p * sh
        ax = xloc + ox
        ay = yloc + oy
        _build_reference_loop(recon, coded, ax, ay, sw, sh, 0, vals)
        t = mode - 2 if mode >= 2 else 0
        _predict_into(vals, ext, idx_sub[t], frac_sub[t], mode, sw, sh, 0, pred)
        cost, _ = _block_rd(src[oy : oy + sh, ox : ox + sw], pred,
                            tv, th, qstep, lam, c1, levels)
        total += cost + lam  # + cbf bin
        n = 0
        for i in range(sh):
            for j in range(sw):
                deq[i, j] = np.float32(levels[n] * qstep)
                n += 1
        # inverse: tv.T @ deq @ th, then add and clip
        for i in range(sh):
            for j in range(sw):
                acc = np.float32(0.0)
                for k in range(sh):
                    acc += tv[k, i] * deq[k, j]
                t1[i, j] = acc
        for i in range(sh):
            for j in range(sw):
                acc = np.float32(0.0)
                for k in range(sw):
                    acc += t1[i, k] * th[k, j]
                v = np.rint(pred[i, j] + acc)
                if v < 0:
                    v = 0
                elif v > 1023:
                    v = 1023
                recon[ay + i, ax + j] = np.uint16(v)
                coded[ay + i, ax + j] = True
    return total

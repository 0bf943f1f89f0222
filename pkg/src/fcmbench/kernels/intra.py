"""Intra prediction kernels.

Angular modes 2..66 map to 65 directions uniformly spaced in angle from
the 45-degree bottom-left diagonal (mode 2) through horizontal (18),
the top-left diagonal (34), vertical (50), to the 45-degree top-right
diagonal (66). Each target pixel projects along its direction onto the
reference L (top row / left column at line index r), with 2-tap linear
interpolation at fractional positions.

Projection geometry is cached per (w, h, r) as gather indices and
fractions into a combined reference array laid out contiguously along
the L:

    comb = [left arm bottom..top, corner, top arm left..right]

so predicting a whole mode batch is two gathers and a lerp.
"""

import math
from functools import lru_cache

import numpy as np

from . import NUMBA_ENABLED, jit

ANGLE_STEP_DEG = 45.0 / 16.0
MID_VALUE = 512.0


@jit
def _gather_lerp(comb, idx, frac, out):
    m, h, w = idx.shape
    for a in range(m):
        for i in range(h):
            for j in range(w):
                k = idx[a, i, j]
                f = frac[a, i, j]
                out[a, i, j] = comb[k] * (np.float32(1.0) - f) + comb[k + 1] * f


def _ext(w, h, r):
    # arm length beyond the corner; covers the worst-case projection
    # t_max = (w-1) + (h+r) at 45 degrees (and symmetrically for s)
    return h + w + 2 * r


@lru_cache(maxsize=None)
def projection_tables(w: int, h: int, r: int):
    """(idx, frac) int32/float32 arrays of shape (65, h, w) for modes
    2..66, indexing into a combined reference of length 2*ext+1."""
    ext = _ext(w, h, r)
    idx = np.empty((65, h, w), dtype=np.int32)
    frac = np.empty((65, h, w), dtype=np.float32)
    ys = np.arange(h, dtype=np.float64)[:, None] + np.zeros((1, w))
    xs = np.arange(w, dtype=np.float64)[None, :] + np.zeros((h, 1))
    for mi, mode in enumerate(range(2, 67)):
        if mode >= 34:  # vertical class: project up to the top row
            d = math.tan(math.radians((mode - 50) * ANGLE_STEP_DEG))
            t = xs + (ys + 1 + r) * d
            on_top = t >= -1.0 - r
            if d != 0:
                s = ys - (xs + 1 + r) / abs(d)
            else:
                s = np.full((h, w), np.inf)
            pos = np.where(on_top, ext + 1 + r + t, ext - (s + 1 + r))
        else:  # horizontal class: project left
            g = math.tan(math.radians((18 - mode) * ANGLE_STEP_DEG))
            s = ys + (xs + 1 + r) * g
            on_left = s >= -1.0 - r
            if g != 0:
                t = xs - (ys + 1 + r) / abs(g)
            else:
                t = np.full((h, w), np.inf)
            pos = np.where(on_left, ext - (s + 1 + r), ext + 1 + r + t)
        base = np.floor(pos)
        b = np.clip(base.astype(np.int64), 0, 2 * ext - 1).astype(np.int32)
        idx[mi] = b
        frac[mi] = (pos - base).astype(np.float32)
    idx.setflags(write=False)
    frac.setflags(write=False)
    return idx, frac


@jit
def _build_reference_loop(recon, coded, x0, y0, w, h, r, vals):
    ext = h + w + 2 * r
    hh, ww = recon.shape
    yt = y0 - 1 - r
    xl = x0 - 1 - r
    n = 2 * ext + 1
    avail = np.zeros(n, dtype=np.bool_)
    for p in range(n):
        if p >= ext:
            sy = yt
            sx = x0 + (p - ext - 1 - r)
        else:
            sy = y0 + (ext - p - 1 - r)
            sx = xl
        if 0 <= sy < hh and 0 <= sx < ww and coded[sy, sx]:
            vals[p] = np.float32(recon[sy, sx])
            avail[p] = True
    any_avail = False
    for p in range(n):
        if avail[p]:
            any_avail = True
            break
    if not any_avail:
        for p in range(n):
            vals[p] = np.float32(MID_VALUE)
        return
    # nearest-available fill: distance to previous/next available
    prev_i = -1
    prev_d = np.empty(n, dtype=np.int64)
    prev_v = np.empty(n, dtype=np.float32)
    for p in range(n):
        if avail[p]:
            prev_i = p
        prev_d[p] = (p - prev_i) if prev_i >= 0 else 1 << 30
        prev_v[p] = vals[prev_i] if prev_i >= 0 else np.float32(0.0)
    next_i = -1
    for p in range(n - 1, -1, -1):
        if avail[p]:
            next_i = p
        nd = (next_i - p) if next_i >= 0 else 1 << 30
        # ties go to the earlier (lower index) sample
        if prev_d[p] <= nd:
            vals[p] = prev_v[p]
        else:
            vals[p] = vals[next_i]


def build_reference(recon, coded, x0, y0, w, h, r):
    """Reference lines for a CU at (x0, y0) inside a coded region.

    recon: 2-D uint16 of the containing region (one CTU), coded: bool
    mask of already-reconstructed samples in it. Returns (comb,
    top_line, left_line) float32; top_line[k] / left_line[k] hold arm
    coordinate k-1-r (index 0 is the corner). Unavailable samples take
    the nearest available one along the L, or 512 if none exists.
    """
    ext = _ext(w, h, r)
    if NUMBA_ENABLED:
        vals = np.zeros(2 * ext + 1, dtype=np.float32)
        _build_reference_loop(recon, coded, x0, y0, w, h, r, vals)
        return vals, vals[ext:], vals[ext::-1]
    hh, ww = recon.shape
    yt = y0 - 1 - r
    xl = x0 - 1 - r
    p = np.arange(2 * ext + 1)
    on_top = p >= ext
    sy = np.where(on_top, yt, y0 + (ext - p - 1 - r))
    sx = np.where(on_top, x0 + (p - ext - 1 - r), xl)
    inside = (sy >= 0) & (sy < hh) & (sx >= 0) & (sx < ww)
    cy = np.clip(sy, 0, hh - 1)
    cx = np.clip(sx, 0, ww - 1)
    avail = inside & coded[cy, cx]
    vals = recon[cy, cx].astype(np.float32)
    if not avail.any():
        vals[:] = MID_VALUE
    else:
        pos = np.flatnonzero(avail)
        right = np.clip(np.searchsorted(pos, p), 0, pos.size - 1)
        left = np.clip(right - 1, 0, pos.size - 1)
        rp, lp = pos[right], pos[left]
        # ties go to the earlier (lower index) sample
        nearest = np.where(np.abs(rp - p) < np.abs(p - lp), rp, lp)
        vals = vals[nearest]
    top_line = vals[ext:]
    left_line = vals[ext::-1]
    return vals, top_line, left_line


def predict_planar(top_line, left_line, w, h, r):
    # arm index 1+r is the block-adjacent sample at coordinate 0
    top = top_line[1 + r : 1 + r + w].astype(np.float32)
    left = left_line[1 + r : 1 + r + h].astype(np.float32)
    tr = np.float32(top_line[1 + r + w])
    bl = np.float32(left_line[1 + r + h])
    xs = np.arange(w, dtype=np.float32)
    ys = np.arange(h, dtype=np.float32)
    hor = ((w - 1 - xs)[None, :] * left[:, None] + (xs + 1)[None, :] * tr) / np.float32(w)
    ver = ((h - 1 - ys)[:, None] * top[None, :] + (ys + 1)[:, None] * bl) / np.float32(h)
    return (hor + ver) * np.float32(0.5)


def predict_dc(top_line, left_line, w, h, r):
    top = top_line[1 + r : 1 + r + w]
    left = left_line[1 + r : 1 + r + h]
    dc = np.float32((float(top.sum()) + float(left.sum())) / (w + h))
    return np.full((h, w), dc, dtype=np.float32)


def predict_modes_batch(comb, top_line, left_line, modes, w, h, r):
    """(len(modes), h, w) float32 prediction stack."""
    out = np.empty((len(modes), h, w), dtype=np.float32)
    ang = [m for m in modes if m >= 2]
    if ang:
        idx, frac = projection_tables(w, h, r)
        rows = np.array([m - 2 for m in ang], dtype=np.int64)
        gi = np.ascontiguousarray(idx[rows])
        gf = np.ascontiguousarray(frac[rows])
        if NUMBA_ENABLED:
            pred = np.empty(gi.shape, dtype=np.float32)
            _gather_lerp(np.ascontiguousarray(comb, dtype=np.float32), gi, gf, pred)
        else:
            pred = comb[gi] * (np.float32(1.0) - gf) + comb[gi + 1] * gf
    k = 0
    for i, m in enumerate(modes):
        if m == 0:
            out[i] = predict_planar(top_line, left_line, w, h, r)
        elif m == 1:
            out[i] = predict_dc(top_line, left_line, w, h, r)
        else:
            out[i] = pred[k]
            k += 1
    return out

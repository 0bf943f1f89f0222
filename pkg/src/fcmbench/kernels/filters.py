"""Deblocking and sample-adaptive-offset kernels.

DBF smooths across CU boundaries whose two sides differ in prediction
(intra/inter, intra mode, or motion by >= 1 integer pixel), modifying
one sample each side with a 4-tap kernel, and skips edge samples whose
local gradient exceeds the threshold (2*Qstep). Minimum CU side is 4,
so edges of one orientation never share taps and each pass is a pure
gather-compute-scatter; vertical edges are filtered first.

SAO supports band offsets (4 consecutive 32-wide bands) and edge
offsets (4 categories along one of 4 directions), offsets in [-7, 7].
"""

import numpy as np

SAO_OFF, SAO_BAND, SAO_EDGE = 0, 1, 2
NUM_BANDS = 32
BAND_SHIFT = 5  # 10-bit samples / 32 bands
MAX_OFFSET = 7
EDGE_DIRS = ((0, 1), (1, 0), (1, 1), (1, -1))
EDGE_CATS = (0, 1, 3, 4)


def boundary_masks(decisions, height, width):
    """Per-sample edge-strength masks from a frame's CU decisions.

    Returns (vert, horz) bool arrays: vert[y, x] marks a filtered
    vertical edge between columns x-1 and x.
    """
    cu_id = np.full((height, width), -1, dtype=np.int32)
    pm = np.zeros((height, width), dtype=np.int8)
    im = np.full((height, width), -1, dtype=np.int16)
    mvx = np.zeros((height, width), dtype=np.int32)
    mvy = np.zeros((height, width), dtype=np.int32)
    for i, d in enumerate(decisions):
        sl = (slice(d.y, d.y + d.h), slice(d.x, d.x + d.w))
        cu_id[sl] = i
        inter = d.pred_mode == "inter"
        pm[sl] = 1 if inter else 0
        im[sl] = -1 if inter else d.intra_mode
        if inter and d.mv0 is not None:
            mvx[sl], mvy[sl] = d.mv0
    def differs(a, b):
        sl_a = tuple(a)
        sl_b = tuple(b)
        diff = (cu_id[sl_a] != cu_id[sl_b]) & (cu_id[sl_a] >= 0) & (cu_id[sl_b] >= 0)
        material = (
            (pm[sl_a] != pm[sl_b])
            | ((pm[sl_a] == 0) & (im[sl_a] != im[sl_b]))
            | (
                (pm[sl_a] == 1)
                & (
                    (np.abs(mvx[sl_a] - mvx[sl_b]) >= 4)
                    | (np.abs(mvy[sl_a] - mvy[sl_b]) >= 4)
                )
            )
        )
        return diff & material

    vert = np.zeros((height, width), dtype=bool)
    horz = np.zeros((height, width), dtype=bool)
    vert[:, 1:] = differs(
        (slice(None), slice(0, width - 1)), (slice(None), slice(1, width))
    )
    horz[1:, :] = differs(
        (slice(0, height - 1), slice(None)), (slice(1, height), slice(None))
    )
    return vert, horz


def _filter_pass(frame, ys, xs, axis, thresh):
    h, w = frame.shape
    if axis == 1:  # vertical edge between (y, x-1) and (y, x)
        p1 = frame[ys, np.maximum(xs - 2, 0)].astype(np.int32)
        p0 = frame[ys, xs - 1].astype(np.int32)
        q0 = frame[ys, xs].astype(np.int32)
        q1 = frame[ys, np.minimum(xs + 1, w - 1)].astype(np.int32)
    else:
        p1 = frame[np.maximum(ys - 2, 0), xs].astype(np.int32)
        p0 = frame[ys - 1, xs].astype(np.int32)
        q0 = frame[ys, xs].astype(np.int32)
        q1 = frame[np.minimum(ys + 1, h - 1), xs].astype(np.int32)
    g = np.abs(p0 - q0)
    act = (g > 0) & (g <= thresh)
    np0 = np.where(act, (p1 + 2 * p0 + q0 + 2) >> 2, p0)
    nq0 = np.where(act, (p0 + 2 * q0 + q1 + 2) >> 2, q0)
    if axis == 1:
        frame[ys, xs - 1] = np0.astype(np.uint16)
        frame[ys, xs] = nq0.astype(np.uint16)
    else:
        frame[ys - 1, xs] = np0.astype(np.uint16)
        frame[ys, xs] = nq0.astype(np.uint16)


def dbf_apply(frame, decisions, qstep):
    """Deblock one frame in place-free fashion; returns a new array."""
    out = frame.copy()
    vert, horz = boundary_masks(decisions, frame.shape[0], frame.shape[1])
    thresh = int(round(2.0 * qstep))
    ys, xs = np.nonzero(vert)
    if ys.size:
        _filter_pass(out, ys, xs, 1, thresh)
    ys, xs = np.nonzero(horz)
    if ys.size:
        _filter_pass(out, ys, xs, 0, thresh)
    return out


def edge_category(region, dy, dx):
    """Edge-offset category per sample: 0 valley, 1 concave, 2 flat
    (never offset), 3 convex, 4 peak."""
    r = region.astype(np.int32)
    h, w = r.shape
    ys = np.arange(h)
    xs = np.arange(w)
    n1 = r[np.clip(ys - dy, 0, h - 1)[:, None], np.clip(xs - dx, 0, w - 1)[None, :]]
    n2 = r[np.clip(ys + dy, 0, h - 1)[:, None], np.clip(xs + dx, 0, w - 1)[None, :]]
    return np.sign(r - n1) + np.sign(r - n2) + 2


def sao_apply_band(region, band_start, offsets):
    band = (region.astype(np.int32) >> BAND_SHIFT) - band_start
    out = region.astype(np.int32)
    for i in range(4):
        out[band == i] += int(offsets[i])
    return np.clip(out, 0, 1023).astype(np.uint16)


def sao_apply_edge(region, direction, offsets):
    cat = edge_category(region, *EDGE_DIRS[direction])
    out = region.astype(np.int32)
    for i, c in enumerate(EDGE_CATS):
        out[cat == c] += int(offsets[i])
    return np.clip(out, 0, 1023).astype(np.uint16)


def _delta_sse(err_sum, count, offset):
    # sum((e - o)^2 - e^2) over the class = -2*o*sum(e) + n*o^2
    return -2.0 * offset * err_sum + count * offset * offset


def _best_offset(err_sum, count, lo, hi):
    if count == 0:
        return 0
    o = int(round(err_sum / count))
    return max(lo, min(hi, o))


def sao_search_band(region, source):
    """Best (band_start, offsets, delta_sse) for band mode."""
    err = source.astype(np.float64) - region.astype(np.float64)
    band = region.astype(np.int32) >> BAND_SHIFT
    sums = np.zeros(NUM_BANDS)
    counts = np.zeros(NUM_BANDS, dtype=np.int64)
    np.add.at(sums, band.ravel(), err.ravel())
    np.add.at(counts, band.ravel(), 1)
    best = (0.0, 0, (0, 0, 0, 0))
    for start in range(NUM_BANDS - 3):
        offs = []
        delta = 0.0
        for i in range(4):
            o = _best_offset(sums[start + i], counts[start + i], -MAX_OFFSET, MAX_OFFSET)
            delta += _delta_sse(sums[start + i], counts[start + i], o)
            offs.append(o)
        if delta < best[0]:
            best = (delta, start, tuple(offs))
    return best[1], best[2], best[0]


def sao_search_edge(region, source):
    """Best (direction, offsets, delta_sse) for edge mode; category
    signs follow the usual convention (valley side positive)."""
    err = source.astype(np.float64) - region.astype(np.float64)
    best = (0.0, 0, (0, 0, 0, 0))
    for d in range(4):
        cat = edge_category(region, *EDGE_DIRS[d])
        offs = []
        delta = 0.0
        for i, c in enumerate(EDGE_CATS):
            m = cat == c
            n = int(m.sum())
            s = float(err[m].sum()) if n else 0.0
            lo, hi = (0, MAX_OFFSET) if c in (0, 1) else (-MAX_OFFSET, 0)
            o = _best_offset(s, n, lo, hi)
            delta += _delta_sse(s, n, o)
            offs.append(o)
        if delta < best[0]:
            best = (delta, d, tuple(offs))
    return best[1], best[2], best[0]

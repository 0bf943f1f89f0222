"""Motion compensation at integer and half-sample precision.

MVs are in quarter-sample units but the codec restricts them to even
values (half-sample maximum precision); fractional positions use
integer bilinear averaging with edge-clamped coordinates.
"""

import numpy as np


def _gather_clamped(ref, ys, xs):
    h, w = ref.shape
    return ref[np.clip(ys, 0, h - 1)[:, None], np.clip(xs, 0, w - 1)[None, :]]


def motion_compensate(ref, bx, by, w, h, mvx_q, mvy_q):
    """(h, w) float32 prediction from `ref` for a block at (bx, by)
    displaced by (mvx_q, mvy_q) quarter-sample units (must be even)."""
    ix, fx = mvx_q >> 2, (mvx_q & 3) != 0
    iy, fy = mvy_q >> 2, (mvy_q & 3) != 0
    ys = np.arange(by + iy, by + iy + h)
    xs = np.arange(bx + ix, bx + ix + w)
    a = _gather_clamped(ref, ys, xs).astype(np.int32)
    if not fx and not fy:
        return a.astype(np.float32)
    b = _gather_clamped(ref, ys, xs + 1).astype(np.int32)
    c = _gather_clamped(ref, ys + 1, xs).astype(np.int32)
    if fx and fy:
        d = _gather_clamped(ref, ys + 1, xs + 1).astype(np.int32)
        return ((a + b + c + d + 2) >> 2).astype(np.float32)
    if fx:
        return ((a + b + 1) >> 1).astype(np.float32)
    return ((a + c + 1) >> 1).astype(np.float32)


def per_subblock_compensate(ref, bx, by, w, h, sub_mvs):
    """Prediction with a per-4x4-sub-block MV field.

    sub_mvs: (h//4, w//4, 2) int array of quarter-unit (mvx, mvy).
    """
    out = np.empty((h, w), dtype=np.float32)
    for sy in range(h // 4):
        for sx in range(w // 4):
            mvx, mvy = int(sub_mvs[sy, sx, 0]), int(sub_mvs[sy, sx, 1])
            out[sy * 4 : sy * 4 + 4, sx * 4 : sx * 4 + 4] = motion_compensate(
                ref, bx + sx * 4, by + sy * 4, 4, 4, mvx, mvy
            )
    return out

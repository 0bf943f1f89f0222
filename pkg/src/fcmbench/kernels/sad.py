"""Full-search SAD kernels for motion estimation.

The numba path scans the window with row-wise early abort; the numpy
fallback evaluates whole-block SADs per offset. Both return identical
results: integer SADs are order-independent and the tie-break is
applied to exact values.

Tie-break among equal SADs: smallest |mx|+|my| (integer pixels), then
smallest my, then smallest mx, where (mx, my) is the full motion vector
including the search center.
"""

import numpy as np

from . import NUMBA_ENABLED, jit


@jit
def _sad_search_loop(cur, ref, bx, by, cx, cy, sr):
    h, w = cur.shape
    rh, rw = ref.shape
    best = np.int64(1) << 60
    bmx = np.int64(0)
    bmy = np.int64(0)
    found = False
    for dy in range(-sr, sr + 1):
        my = cy + dy
        ry = by + my
        if ry < 0 or ry + h > rh:
            continue
        for dx in range(-sr, sr + 1):
            mx = cx + dx
            rx = bx + mx
            if rx < 0 or rx + w > rw:
                continue
            sad = np.int64(0)
            aborted = False
            for i in range(h):
                row = np.int64(0)
                for j in range(w):
                    d = np.int64(cur[i, j]) - np.int64(ref[ry + i, rx + j])
                    row += d if d >= 0 else -d
                sad += row
                if sad > best:
                    aborted = True
                    break
            if aborted:
                continue
            if sad < best:
                best, bmx, bmy, found = sad, mx, my, True
            elif sad == best and found:
                a_new = abs(mx) + abs(my)
                a_old = abs(bmx) + abs(bmy)
                if a_new < a_old or (
                    a_new == a_old and (my < bmy or (my == bmy and mx < bmx))
                ):
                    bmx, bmy = mx, my
    return bmx, bmy, best, found


def _sad_search_numpy(cur, ref, bx, by, cx, cy, sr):
    h, w = cur.shape
    rh, rw = ref.shape
    cur64 = cur.astype(np.int64)
    best = 1 << 60
    bmx = bmy = 0
    found = False
    for dy in range(-sr, sr + 1):
        my = cy + dy
        ry = by + my
        if ry < 0 or ry + h > rh:
            continue
        for dx in range(-sr, sr + 1):
            mx = cx + dx
            rx = bx + mx
            if rx < 0 or rx + w > rw:
                continue
            sad = int(np.abs(cur64 - ref[ry : ry + h, rx : rx + w].astype(np.int64)).sum())
            if sad < best or (
                sad == best
                and found
                and (abs(mx) + abs(my), my, mx) < (abs(bmx) + abs(bmy), bmy, bmx)
            ):
                if sad < best:
                    found = True
                best, bmx, bmy = sad, mx, my
    return bmx, bmy, best, found


def sad_full_search(cur, ref, bx, by, cx, cy, sr):
    """Best integer MV by SAD over offsets within +-sr of (cx, cy).

    cur: (h, w) block, ref: full reference frame, (bx, by): block origin
    in the frame. Returns (mx, my, sad, found); found is False when the
    window is entirely outside the frame.
    """
    if NUMBA_ENABLED:
        mx, my, sad, found = _sad_search_loop(
            np.ascontiguousarray(cur, dtype=np.int32),
            np.ascontiguousarray(ref, dtype=np.int32),
            bx, by, cx, cy, sr,
        )
        return int(mx), int(my), int(sad), bool(found)
    return _sad_search_numpy(np.asarray(cur, np.int32), np.asarray(ref, np.int32),
                             bx, by, cx, cy, sr)


def block_sad(cur, patch):
    return int(np.abs(cur.astype(np.int64) - patch.astype(np.int64)).sum())

"""Prediction, transform, quantization and in-loop filter primitives.

Each operation is gated by the matching CodecConfig flag; the engine is
responsible for never requesting a disabled tool (doing so is a
contract violation raised as ValidationError).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import BCW_WEIGHTS, CodecConfig, MotionVector, clamp_mv
from .errors import ValidationError
from .kernels import filters as kf
from .kernels import intra as ki
from .kernels import mc as kmc
from .kernels import quant as kq
from .kernels import sad as ks
from .kernels import transforms as kt

SUPPORTED_SIZES = (4, 8, 16, 32, 64)
MTS_MAX_SIZE = 32


@dataclass(frozen=True)
class IntraRefs:
    """Reference lines for one CU; comb runs contiguously along the L."""

    comb: np.ndarray
    top: np.ndarray
    left: np.ndarray
    line: int  # reference line index r


def gather_references(recon, coded, x0, y0, w, h, line=0) -> IntraRefs:
    comb, top, left = ki.build_reference(recon, coded, x0, y0, w, h, line)
    return IntraRefs(comb, top, left, line)


def intra_predict(mode: int, refs: IntraRefs, w: int, h: int) -> np.ndarray:
    """Predict one block for one mode; see predict_all_modes for the
    batched variant the mode search uses."""
    if not (0 <= mode <= 66):
        raise ValidationError(f"intra mode {mode} out of range")
    return ki.predict_modes_batch(
        refs.comb, refs.top, refs.left, [mode], w, h, refs.line
    )[0]


def predict_all_modes(modes, refs: IntraRefs, w: int, h: int) -> np.ndarray:
    return ki.predict_modes_batch(refs.comb, refs.top, refs.left, list(modes), w, h, refs.line)


def isp_partitions(w: int, h: int, direction: str):
    """Sub-partition geometry: (x_off, y_off, sw, sh) in coding order.

    Vertical splits the width, horizontal the height; 4 parts, or 2
    when the split side is 8. Blocks too small return a single part.
    """
    if direction not in ("vertical", "horizontal"):
        raise ValidationError(f"bad ISP direction {direction!r}")
    if w < 8 or h < 8:
        return [(0, 0, w, h)]
    if direction == "vertical":
        parts = 2 if w == 8 else 4
        sw = w // parts
        return [(i * sw, 0, sw, h) for i in range(parts)]
    parts = 2 if h == 8 else 4
    sh = h // parts
    return [(0, i * sh, w, sh) for i in range(parts)]


def motion_search(cur, ref, bx, by, center: MotionVector, cfg: CodecConfig,
                  refine_half=True):
    """Full integer search within +-search_range of center (by SAD),
    then optional +-half-sample refinement via bilinear interpolation.

    Tie-breaks are deterministic: smallest |x|+|y|, then y, then x, and
    the integer candidate wins ties against half-sample refinements.
    Returns (MotionVector in quarter units, sad); falls back to a
    clamped zero MV when the whole window is off-frame.
    """
    cx, cy = center.x >> 2, center.y >> 2
    mx, my, best, found = ks.sad_full_search(cur, ref, bx, by, cx, cy, cfg.search_range)
    if not found:
        return MotionVector(0, 0, "integer"), ks.block_sad(
            cur, kmc.motion_compensate(ref, bx, by, cur.shape[1], cur.shape[0], 0, 0)
        )
    h, w = cur.shape
    qx, qy = 4 * mx, 4 * my
    if not refine_half:
        return MotionVector(qx, qy, "integer"), best
    bq = (qx, qy, "integer", best)
    bound = 4 * cfg.search_range
    for dy in (-2, 0, 2):
        for dx in (-2, 0, 2):
            if dx == 0 and dy == 0:
                continue
            nx, ny = qx + dx, qy + dy
            if abs(nx) > bound or abs(ny) > bound:
                continue
            pred = kmc.motion_compensate(ref, bx, by, w, h, nx, ny)
            sad = int(np.abs(cur.astype(np.int64) - pred.astype(np.int64)).sum())
            if sad < bq[3]:
                bq = (nx, ny, "half", sad)
    return MotionVector(bq[0], bq[1], bq[2]), bq[3]


@dataclass(frozen=True)
class InterCandidate:
    kind: str  # spatial | mmvd | temporal | sbtmvp | affine | zero
    mv: MotionVector
    merge_idx: int = -1
    mmvd: tuple = ()  # (base, step_idx, dir_idx)
    sub_mvs: object = None  # (h//4, w//4, 2) field for sbtmvp/affine


MMVD_STEPS = (1, 2, 4, 8)
MMVD_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def spatial_neighbor_positions(x, y, w, h):
    """left, above, above-right, below-left, above-left."""
    return (
        (x - 1, y + h - 1),
        (x + w - 1, y - 1),
        (x + w, y - 1),
        (x - 1, y + h),
        (x - 1, y - 1),
    )


def regular_merge_list(x, y, w, h, mv_lookup, colocated_lookup, search_range):
    """Deduplicated spatial candidates (max 4) + temporal + zero.

    mv_lookup(px, py) -> (mvx, mvy) in quarter units or None;
    colocated_lookup(cx, cy) -> same, from the previous frame.
    """
    cands = []
    for px, py in spatial_neighbor_positions(x, y, w, h):
        mv = mv_lookup(px, py)
        if mv is None:
            continue
        mv = clamp_mv(mv[0], mv[1], search_range)
        if mv not in cands:
            cands.append(mv)
        if len(cands) == 4:
            break
    tmv = colocated_lookup(x + w // 2, y + h // 2)
    if tmv is not None:
        tmv = clamp_mv(tmv[0], tmv[1], search_range)
        if tmv not in cands:
            cands.append(tmv)
    if (0, 0) not in cands:
        cands.append((0, 0))
    return cands


def inter_candidates(x, y, w, h, mv_lookup, colocated_lookup, cfg: CodecConfig,
                     affine_corners=None, sbtmvp_field=None):
    """Ordered translational candidate list per the merge derivation:
    spatial (deduplicated, max 4), mmvd expansions of the first two
    bases, temporal, sbtmvp, affine, zero."""
    spatial = []
    for px, py in spatial_neighbor_positions(x, y, w, h):
        mv = mv_lookup(px, py)
        if mv is None:
            continue
        mv = clamp_mv(mv[0], mv[1], cfg.search_range)
        if mv not in spatial:
            spatial.append(mv)
        if len(spatial) == 4:
            break
    tmv = colocated_lookup(x + w // 2, y + h // 2)
    if tmv is not None:
        tmv = clamp_mv(tmv[0], tmv[1], cfg.search_range)
    out = [
        InterCandidate("spatial", MotionVector(mx, my), merge_idx=i)
        for i, (mx, my) in enumerate(spatial)
    ]
    if cfg.mmvd_enabled:
        bases = list(spatial)
        for extra in (tmv, (0, 0)):
            if len(bases) >= 2:
                break
            if extra is not None and extra not in bases:
                bases.append(extra)
        for b, (bx_, by_) in enumerate(bases[:2]):
            for si, step in enumerate(MMVD_STEPS):
                for di, (sx, sy) in enumerate(MMVD_DIRS):
                    mx, my = clamp_mv(bx_ + 4 * step * sx, by_ + 4 * step * sy,
                                      cfg.search_range)
                    out.append(
                        InterCandidate("mmvd", MotionVector(mx, my), mmvd=(b, si, di))
                    )
    if tmv is not None:
        out.append(InterCandidate("temporal", MotionVector(*tmv)))
    if cfg.sbtmvp_enabled and sbtmvp_field is not None:
        out.append(InterCandidate("sbtmvp", MotionVector(0, 0), sub_mvs=sbtmvp_field))
    if cfg.affine_enabled and affine_corners is not None:
        field = affine_subblock_field(x, y, w, h, *affine_corners, cfg.search_range)
        out.append(InterCandidate("affine", MotionVector(*affine_corners[0]), sub_mvs=field))
    if not any(c.mv.x == 0 and c.mv.y == 0 and c.kind in ("spatial", "zero") for c in out):
        out.append(InterCandidate("zero", MotionVector(0, 0)))
    return out


def affine_subblock_field(x, y, w, h, mv_tl, mv_tr, search_range):
    """4-parameter affine per-4x4 MV field from the two top corner MVs,
    rounded to half-sample precision."""
    dx = (mv_tr[0] - mv_tl[0]) / w
    dy = (mv_tr[1] - mv_tl[1]) / w
    field = np.zeros((h // 4, w // 4, 2), dtype=np.int32)
    for sy in range(h // 4):
        for sx in range(w // 4):
            px = 4 * sx + 2
            py = 4 * sy + 2
            mvx = mv_tl[0] + dx * px - dy * py
            mvy = mv_tl[1] + dy * px + dx * py
            qx = int(np.rint(mvx / 2.0)) * 2
            qy = int(np.rint(mvy / 2.0)) * 2
            field[sy, sx] = clamp_mv(qx, qy, search_range)
    return field


def geo_weight_mask(w, h, split):
    """float32 weight of p0 per sample: 1 above the split line, 0 below,
    linear blend over a 2-sample band. split 0 = main diagonal, 1 =
    anti-diagonal."""
    ys = np.arange(h, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(w, dtype=np.float64)[None, :] + 0.5
    norm = float(np.hypot(w, h))
    if split == 0:
        d = (xs * h - ys * w) / norm
    else:
        d = ((w - xs) * h - ys * w) / norm
    wgt = np.clip(0.5 + d / 2.0, 0.0, 1.0)
    return wgt.astype(np.float32)


def blend_predictions(p0, p1, mode, cfg: CodecConfig, planar=None):
    """bcw(idx): weighted sum; geo(split): diagonal mask blend;
    ciip: (planar + inter) / 2."""
    kind = mode[0]
    if p1 is not None and p0.shape != p1.shape:
        raise ValidationError("blend inputs must have equal shapes")
    if kind == "bcw":
        if not cfg.bcw_enabled:
            raise ValidationError("bcw requested but disabled")
        w = np.float32(BCW_WEIGHTS[mode[1]])
        return w * p0 + (np.float32(1.0) - w) * p1
    if kind == "geo":
        if not cfg.geo_enabled:
            raise ValidationError("geo requested but disabled")
        m = geo_weight_mask(p0.shape[1], p0.shape[0], mode[1])
        return m * p0 + (np.float32(1.0) - m) * p1
    if kind == "ciip":
        if not cfg.ciip_enabled:
            raise ValidationError("ciip requested but disabled")
        inter = p0 if p1 is None else p1
        return (planar + inter) * np.float32(0.5)
    raise ValidationError(f"unknown blend mode {kind!r}")


def transform(block, type_h, type_v, inverse=False):
    h, w = block.shape[-2], block.shape[-1]
    if w not in SUPPORTED_SIZES or h not in SUPPORTED_SIZES:
        raise ValidationError(f"unsupported transform size {w}x{h}")
    for t, n in ((type_h, w), (type_v, h)):
        if t not in kt.KINDS:
            raise ValidationError(f"unknown transform type {t!r}")
        if t != kt.DCT2 and n > MTS_MAX_SIZE:
            raise ValidationError(f"{t} limited to {MTS_MAX_SIZE}, got {n}")
    if inverse:
        return kt.inverse(block, type_v, type_h)
    return kt.forward(block, type_v, type_h)


@dataclass(frozen=True)
class QuantResult:
    levels: np.ndarray  # int32, block shape
    bits: float  # model rate of the coded block (cbf excluded)
    cost: float  # D + lambda * bits over the block
    used_trellis: bool = False


def quantize(coeffs, qp, lam, mode="scalar") -> QuantResult:
    """Scalar dead-zone quantization, or the dependent-quantization
    scheme: a signaled choice between the scalar path and the 4-state
    trellis path, whichever costs less (the choice bin is charged to
    the trellis branch)."""
    qstep = kq.qstep_for_qp(qp)
    flat = np.ascontiguousarray(coeffs, dtype=np.float64).ravel()
    slv = kq.quantize_scalar(flat, qstep)
    sbits = kq.block_rate_bits(slv)
    srec = slv.astype(np.float64) * qstep
    scost = float(((flat - srec) ** 2).sum()) + lam * sbits
    if mode == "scalar":
        return QuantResult(slv.reshape(coeffs.shape), sbits, scost, False)
    if mode != "depquant":
        raise ValidationError(f"unknown quant mode {mode!r}")
    nz = np.nonzero(slv)[0]
    last = int(nz[-1]) if nz.size else -1
    tlv, _ = kq.trellis_quantize(flat, qstep, lam, last)
    tbits = kq.block_rate_bits(tlv)
    trec = np.zeros_like(flat)
    kq.trellis_dequantize(tlv, qstep, last, trec)
    # the signaled scalar-vs-trellis bin is charged to the trellis branch
    tcost = float(((flat - trec) ** 2).sum()) + lam * (tbits + 1.0)
    if tcost < scost:
        return QuantResult(tlv.reshape(coeffs.shape), tbits + 1.0, tcost, True)
    return QuantResult(slv.reshape(coeffs.shape), sbits, scost, False)


def dequantize(levels, qp, used_trellis=False):
    qstep = kq.qstep_for_qp(qp)
    flat = np.ascontiguousarray(levels, dtype=np.int32).ravel()
    if not used_trellis:
        return (flat.astype(np.float64) * qstep).astype(np.float32).reshape(levels.shape)
    nz = np.nonzero(flat)[0]
    last = int(nz[-1]) if nz.size else -1
    out = np.zeros(flat.shape, dtype=np.float64)
    kq.trellis_dequantize(flat, qstep, last, out)
    return out.astype(np.float32).reshape(levels.shape)


@dataclass(frozen=True)
class SaoParams:
    mode: int  # SAO_OFF / SAO_BAND / SAO_EDGE
    band_start: int = 0
    direction: int = 0
    offsets: tuple = (0, 0, 0, 0)


def sao_apply(region, params: SaoParams):
    if params.mode == kf.SAO_BAND:
        return kf.sao_apply_band(region, params.band_start, params.offsets)
    if params.mode == kf.SAO_EDGE:
        return kf.sao_apply_edge(region, params.direction, params.offsets)
    return region.copy()


SAO_BAND_BITS = 1.0 + 1.0 + 5.0 + 4 * 4.0
SAO_EDGE_BITS = 1.0 + 1.0 + 2.0 + 4 * 3.0


def sao_search(region, source, lam) -> SaoParams:
    """RD-best SAO parameters for one CTU region ("off" included)."""
    best_j = 0.0
    best = SaoParams(kf.SAO_OFF)
    start, offs, delta = kf.sao_search_band(region, source)
    j = delta + lam * SAO_BAND_BITS
    if j < best_j:
        best_j = j
        best = SaoParams(kf.SAO_BAND, band_start=start, offsets=offs)
    d, offs, delta = kf.sao_search_edge(region, source)
    j = delta + lam * SAO_EDGE_BITS
    if j < best_j:
        best_j = j
        best = SaoParams(kf.SAO_EDGE, direction=d, offsets=offs)
    return best


def loop_filter(frame, decisions, cfg: CodecConfig, source=None):
    """Apply DBF (if enabled) then per-CTU RD-chosen SAO (if enabled).

    Returns (filtered frame, sao parameter grid). The engine wraps DBF
    in its own frame-level RD gate; this operation applies it
    unconditionally per the flag.
    """
    from .kernels.quant import qstep_for_qp

    out = frame.copy()
    if cfg.dbf_enabled:
        out = kf.dbf_apply(out, decisions, qstep_for_qp(cfg.qp))
    sao_grid = None
    if cfg.sao_enabled:
        if source is None:
            raise ValidationError("SAO search needs the source frame")
        from .config import rd_lambda

        lam = rd_lambda(cfg.qp)
        h, w = out.shape
        c = cfg.ctu_size
        sao_grid = []
        for y0 in range(0, h, c):
            row = []
            for x0 in range(0, w, c):
                sl = (slice(y0, min(y0 + c, h)), slice(x0, min(x0 + c, w)))
                params = sao_search(out[sl], source[sl], lam)
                out[sl] = sao_apply(out[sl], params)
                row.append(params)
            sao_grid.append(row)
    return out, sao_grid

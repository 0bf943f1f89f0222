"""Shared coding machinery: frame context, candidate derivations,
reconstruction, partition legality, and the RDO rate model.

Everything here is used identically by the encoder's search/commit path
and by the decoder, which is what makes decode() bit-exact against the
encoder reconstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..config import CodecConfig, rd_lambda
from ..kernels import mc as kmc
from ..kernels import quant as kq
from ..kernels import transforms as kt
from .. import tools
from .records import CuRecord

MAX_CU = 64
MIN_CU = 4
QT_MIN_LEAF = 8  # quad split allowed down to 8x8 children

MTS_COMBOS = (
    (kt.DCT2, kt.DCT2),
    (kt.DST7, kt.DST7),
    (kt.DCT8, kt.DST7),
    (kt.DST7, kt.DCT8),
    (kt.DCT8, kt.DCT8),
)  # (horizontal, vertical) per mts_idx

SPLIT_KINDS = ("qt", "bh", "bv", "th", "tv")


@dataclass
class TuData:
    x: int
    y: int
    w: int
    h: int
    levels: np.ndarray  # int32 (h, w)
    cbf: bool
    used_trellis: bool = False
    type_h: str = kt.DCT2
    type_v: str = kt.DCT2


@dataclass
class CuDecision:
    x: int
    y: int
    w: int
    h: int
    qt_depth: int = 0
    mt_depth: int = 0
    pred_mode: str = "intra"
    intra_mode: int = 0
    mrl_idx: int = 0
    isp_mode: int = 0  # 0 none, 1 vertical, 2 horizontal
    mts_idx: int = 0
    skip: bool = False
    merge: bool = False
    merge_type: str = "regular"
    merge_idx: int = 0
    mmvd_flag: bool = False
    mmvd_params: tuple = ()
    ciip: bool = False
    imv: bool = False
    bi: bool = False
    bcw_idx: Optional[int] = None
    mv0: Optional[tuple] = None
    mv1: Optional[tuple] = None
    mvd0: Optional[tuple] = None
    mvd1: Optional[tuple] = None
    geo_split: int = 0
    sub_mvs: Optional[np.ndarray] = None
    sbt_idx: int = 0
    sbt_pos: int = 0
    root_cbf: bool = False
    tus: list = field(default_factory=list)

    def to_record(self, frame: int) -> CuRecord:
        inter = self.pred_mode == "inter"
        return CuRecord(
            frame=frame, x=self.x, y=self.y, width=self.w, height=self.h,
            qt_depth=self.qt_depth, mt_depth=self.mt_depth,
            pred_mode=self.pred_mode,
            intra_mode=None if inter else self.intra_mode,
            mrl_idx=0 if inter else self.mrl_idx,
            isp_mode=0 if inter else self.isp_mode,
            merge_flag=self.merge, skip_flag=self.skip,
            merge_type=self.merge_type if self.merge else None,
            merge_idx=self.merge_idx if (self.merge and self.merge_type == "regular"
                                         and not self.mmvd_flag) else None,
            mmvd_flag=self.mmvd_flag, imv_flag=self.imv,
            bcw_idx=self.bcw_idx, ciip_flag=self.ciip,
            mv=self.mv0 if inter else None,
            sbt_idx=self.sbt_idx, sbt_pos=self.sbt_pos, mts_idx=self.mts_idx,
            root_cbf=self.root_cbf, cbf_y=any(t.cbf for t in self.tus),
        )


class FrameCtx:
    """Mutable per-frame coding state shared by encode and decode."""

    def __init__(self, cfg: CodecConfig, height: int, width: int, frame_idx: int,
                 refs, ref_mvs):
        self.cfg = cfg
        self.h = height
        self.w = width
        self.frame_idx = frame_idx
        self.refs = refs  # list of reconstructed uint16 frames, newest first
        self.ref_mvs = ref_mvs  # matching (mvx, mvy, valid) 4x4 fields
        self.recon = np.zeros((height, width), dtype=np.uint16)
        self.coded = np.zeros((height, width), dtype=bool)
        gh, gw = height // 4 + 1, width // 4 + 1
        self.mvx = np.zeros((gh, gw), dtype=np.int32)
        self.mvy = np.zeros((gh, gw), dtype=np.int32)
        self.mv_valid = np.zeros((gh, gw), dtype=bool)
        self.lam = rd_lambda(cfg.qp)
        self.qstep = kq.qstep_for_qp(cfg.qp)
        self.ctu = (0, 0)  # origin of the CTU being coded

    @property
    def is_inter(self) -> bool:
        return self.frame_idx > 0 and len(self.refs) > 0

    @property
    def has_ref1(self) -> bool:
        return self.cfg.ref_frames == 2 and len(self.refs) >= 2

    def ctu_rect(self):
        cx, cy = self.ctu
        return cx, cy, min(self.cfg.ctu_size, self.w - cx), min(self.cfg.ctu_size, self.h - cy)

    def ctu_views(self):
        cx, cy, cw, ch = self.ctu_rect()
        sl = (slice(cy, cy + ch), slice(cx, cx + cw))
        return self.recon[sl], self.coded[sl]

    def mv_lookup(self, px: int, py: int):
        """Spatial MV at a sample position, restricted to the current
        CTU (coded-context locality rule)."""
        cx, cy, cw, ch = self.ctu_rect()
        if not (cx <= px < cx + cw and cy <= py < cy + ch):
            return None
        if not self.coded[py, px]:
            return None
        gy, gx = py // 4, px // 4
        if not self.mv_valid[gy, gx]:
            return None
        return int(self.mvx[gy, gx]), int(self.mvy[gy, gx])

    def colocated_lookup(self, px: int, py: int):
        if not self.ref_mvs:
            return None
        mvx, mvy, valid = self.ref_mvs[0]
        gy, gx = py // 4, px // 4
        if gy >= valid.shape[0] or gx >= valid.shape[1] or not valid[gy, gx]:
            return None
        return int(mvx[gy, gx]), int(mvy[gy, gx])

    def merge_list(self, x, y, w, h):
        return tools.regular_merge_list(
            x, y, w, h, self.mv_lookup, self.colocated_lookup, self.cfg.search_range
        )

    def sbtmvp_field(self, x, y, w, h):
        """Per-4x4 MV field copied from colocated sub-blocks; None when
        the tool cannot derive (no valid colocated center)."""
        if not self.ref_mvs or w < 8 or h < 8:
            return None
        center = self.colocated_lookup(x + w // 2, y + h // 2)
        if center is None:
            return None
        mvx, mvy, valid = self.ref_mvs[0]
        field_ = np.zeros((h // 4, w // 4, 2), dtype=np.int32)
        from ..config import clamp_mv

        for sy in range(h // 4):
            for sx in range(w // 4):
                gy, gx = (y + 4 * sy) // 4, (x + 4 * sx) // 4
                if gy < valid.shape[0] and gx < valid.shape[1] and valid[gy, gx]:
                    mv = (int(mvx[gy, gx]), int(mvy[gy, gx]))
                else:
                    mv = center
                # snap to half precision
                field_[sy, sx] = clamp_mv((mv[0] >> 1) << 1, (mv[1] >> 1) << 1,
                                          self.cfg.search_range)
        return field_

    def affine_corners(self, x, y, w, h):
        if w < 8 or h < 8:
            return None
        tl = self.mv_lookup(x - 1, y - 1)
        tr = self.mv_lookup(x + w, y - 1)
        if tl is None or tr is None:
            return None
        return tl, tr

    def record_motion(self, x, y, w, h, mv, sub_mvs=None):
        gy0, gx0 = y // 4, x // 4
        gh, gw = h // 4, w // 4
        if sub_mvs is not None:
            self.mvx[gy0 : gy0 + gh, gx0 : gx0 + gw] = sub_mvs[:, :, 0]
            self.mvy[gy0 : gy0 + gh, gx0 : gx0 + gw] = sub_mvs[:, :, 1]
        else:
            self.mvx[gy0 : gy0 + gh, gx0 : gx0 + gw] = mv[0]
            self.mvy[gy0 : gy0 + gh, gx0 : gx0 + gw] = mv[1]
        self.mv_valid[gy0 : gy0 + gh, gx0 : gx0 + gw] = True

    def clear_motion(self, x, y, w, h):
        gy0, gx0 = y // 4, x // 4
        self.mv_valid[gy0 : gy0 + h // 4, gx0 : gx0 + w // 4] = False


# ---------------------------------------------------------------------------
# partition legality

def node_options(fctx: FrameCtx, x, y, w, h, mt_depth, can_qt):
    """(leaf_ok, qt_ok, mtt kinds tuple) for a tree node; a node that
    crosses the frame boundary forces an unsignaled QT split."""
    cfg = fctx.cfg
    inside = x + w <= fctx.w and y + h <= fctx.h
    if not inside:
        return False, True, ()
    leaf_ok = w <= MAX_CU and h <= MAX_CU
    qt_ok = can_qt and w == h and w >= 2 * QT_MIN_LEAF
    kinds = []
    if mt_depth < cfg.max_mtt_depth and w <= MAX_CU and h <= MAX_CU:
        if h >= 8:
            kinds.append("bh")
        if w >= 8:
            kinds.append("bv")
        if h >= 16:
            kinds.append("th")
        if w >= 16:
            kinds.append("tv")
    return leaf_ok, qt_ok, tuple(kinds)


def split_children(x, y, w, h, kind):
    if kind == "qt":
        hw, hh = w // 2, h // 2
        return [
            (x, y, hw, hh), (x + hw, y, hw, hh),
            (x, y + hh, hw, hh), (x + hw, y + hh, hw, hh),
        ]
    if kind == "bh":
        return [(x, y, w, h // 2), (x, y + h // 2, w, h // 2)]
    if kind == "bv":
        return [(x, y, w // 2, h), (x + w // 2, y, w // 2, h)]
    if kind == "th":
        q = h // 4
        return [(x, y, w, q), (x, y + q, w, 2 * q), (x, y + 3 * q, w, q)]
    q = w // 4
    return [(x, y, q, h), (x + q, y, 2 * q, h), (x + 3 * q, y, q, h)]


# ---------------------------------------------------------------------------
# RDO rate model (context-free; tool syntax charged only when engaged)

def eg0_model_bits(v: int) -> float:
    return 2 * math.floor(math.log2(v + 1)) + 1

def mvd_model_bits(d: int) -> float:
    a = abs(d)
    return 1.0 if a == 0 else 2.0 + eg0_model_bits(a - 1)

def merge_idx_model_bits(idx: int, list_len: int) -> float:
    if list_len <= 1:
        return 0.0
    return float(min(idx + 1, list_len - 1))


# ---------------------------------------------------------------------------
# prediction + reconstruction (shared encoder commit / decoder path)

def intra_refs_for(fctx: FrameCtx, x, y, w, h, line):
    cx, cy, _, _ = fctx.ctu_rect()
    recon_v, coded_v = fctx.ctu_views()
    return tools.gather_references(recon_v, coded_v, x - cx, y - cy, w, h, line)


def predict_intra_block(fctx: FrameCtx, x, y, w, h, mode, line=0):
    refs = intra_refs_for(fctx, x, y, w, h, line)
    return tools.intra_predict(mode, refs, w, h)


def merge_candidate_mv(fctx: FrameCtx, dec: CuDecision):
    """Resolve the translational MV of a regular/mmvd merge decision."""
    cands = fctx.merge_list(dec.x, dec.y, dec.w, dec.h)
    if dec.mmvd_flag:
        base_i, step_i, dir_i = dec.mmvd_params
        base = cands[min(base_i, len(cands) - 1)]
        step = tools.MMVD_STEPS[step_i]
        sx, sy = tools.MMVD_DIRS[dir_i]
        from ..config import clamp_mv

        return clamp_mv(base[0] + 4 * step * sx, base[1] + 4 * step * sy,
                        fctx.cfg.search_range)
    return cands[min(dec.merge_idx, len(cands) - 1)]


def predict_inter_cu(fctx: FrameCtx, dec: CuDecision) -> np.ndarray:
    x, y, w, h = dec.x, dec.y, dec.w, dec.h
    ref0 = fctx.refs[0]
    if dec.merge_type in ("sbtmvp", "affine") and dec.sub_mvs is not None:
        pred = kmc.per_subblock_compensate(ref0, x, y, w, h, dec.sub_mvs)
    elif dec.merge_type == "geo":
        cands = fctx.merge_list(x, y, w, h)
        mv_a = cands[0]
        mv_b = cands[1] if len(cands) > 1 else cands[0]
        p0 = kmc.motion_compensate(ref0, x, y, w, h, mv_a[0], mv_a[1])
        p1 = kmc.motion_compensate(ref0, x, y, w, h, mv_b[0], mv_b[1])
        pred = tools.blend_predictions(p0, p1, ("geo", dec.geo_split), fctx.cfg)
    elif dec.bi:
        p0 = kmc.motion_compensate(ref0, x, y, w, h, dec.mv0[0], dec.mv0[1])
        p1 = kmc.motion_compensate(fctx.refs[1], x, y, w, h, dec.mv1[0], dec.mv1[1])
        idx = dec.bcw_idx if dec.bcw_idx is not None else 2
        if fctx.cfg.bcw_enabled:
            pred = tools.blend_predictions(p0, p1, ("bcw", idx), fctx.cfg)
        else:
            pred = (p0 + p1) * np.float32(0.5)
    else:
        pred = kmc.motion_compensate(ref0, x, y, w, h, dec.mv0[0], dec.mv0[1])
    if dec.ciip:
        planar = predict_intra_block(fctx, x, y, w, h, 0)
        pred = tools.blend_predictions(pred, None, ("ciip",), fctx.cfg, planar=planar)
    return pred


def reconstruct_tu(fctx: FrameCtx, tu: TuData, pred: np.ndarray) -> np.ndarray:
    if not tu.cbf:
        res = np.zeros_like(pred)
    else:
        deq = tools.dequantize(tu.levels, fctx.cfg.qp, tu.used_trellis)
        res = tools.transform(deq, tu.type_h, tu.type_v, inverse=True)
    out = np.rint(pred + res)
    return np.clip(out, 0, 1023).astype(np.uint16)


def reconstruct_cu(fctx: FrameCtx, dec: CuDecision, source=None):
    """Commit a decision into the frame context. Returns the recon
    block. The decoder calls this with source=None; the encoder passes
    the source frame only for bookkeeping-free symmetry (unused)."""
    x, y, w, h = dec.x, dec.y, dec.w, dec.h
    sl = (slice(y, y + h), slice(x, x + w))
    if dec.pred_mode == "intra" and dec.isp_mode:
        direction = "vertical" if dec.isp_mode == 1 else "horizontal"
        parts = tools.isp_partitions(w, h, direction)
        for (ox, oy, sw, sh), tu in zip(parts, dec.tus):
            pred = predict_intra_block(fctx, x + ox, y + oy, sw, sh, dec.intra_mode,
                                       line=0)
            blk = reconstruct_tu(fctx, tu, pred)
            fctx.recon[y + oy : y + oy + sh, x + ox : x + ox + sw] = blk
            fctx.coded[y + oy : y + oy + sh, x + ox : x + ox + sw] = True
        fctx.clear_motion(x, y, w, h)
        return fctx.recon[sl]
    if dec.pred_mode == "intra":
        pred = predict_intra_block(fctx, x, y, w, h, dec.intra_mode, line=dec.mrl_idx)
    else:
        pred = predict_inter_cu(fctx, dec)
    if dec.sbt_idx:
        blk = pred.copy()
        tu = dec.tus[0]
        tsl = (slice(tu.y - y, tu.y - y + tu.h), slice(tu.x - x, tu.x - x + tu.w))
        blk[tsl] = reconstruct_tu(fctx, tu, pred[tsl])
        blk = np.clip(np.rint(blk), 0, 1023).astype(np.uint16)
    elif dec.tus:
        blk = reconstruct_tu(fctx, dec.tus[0], pred)
    else:
        blk = np.clip(np.rint(pred), 0, 1023).astype(np.uint16)
    fctx.recon[sl] = blk
    fctx.coded[sl] = True
    if dec.pred_mode == "inter":
        if dec.sub_mvs is not None:
            fctx.record_motion(x, y, w, h, None, dec.sub_mvs)
        else:
            fctx.record_motion(x, y, w, h, dec.mv0)
    else:
        fctx.clear_motion(x, y, w, h)
    return blk


def sbt_types(sbt_idx: int, sbt_pos: int, w: int, h: int):
    """(x, y, w, h, type_h, type_v) of the coded half, VVC-style
    position rule with DCT2 fallback above the DST7/DCT8 size limit."""
    if sbt_idx == 1:  # vertical split: left/right halves
        hw = w // 2
        tx = 0 if sbt_pos == 0 else hw
        th_ = kt.DCT8 if sbt_pos == 0 else kt.DST7
        tv_ = kt.DST7
        geom = (tx, 0, hw, h)
    else:  # horizontal split
        hh = h // 2
        ty = 0 if sbt_pos == 0 else hh
        tv_ = kt.DCT8 if sbt_pos == 0 else kt.DST7
        th_ = kt.DST7
        geom = (0, ty, w, hh)
    gw, gh = geom[2], geom[3]
    if gw > tools.MTS_MAX_SIZE:
        th_ = kt.DCT2
    if gh > tools.MTS_MAX_SIZE:
        tv_ = kt.DCT2
    return geom + (th_, tv_)


def sbt_allowed(cfg: CodecConfig, dec_w: int, dec_h: int) -> tuple:
    """Legal sbt_idx values for a CU size."""
    kinds = []
    if dec_w >= 8:
        kinds.append(1)
    if dec_h >= 8:
        kinds.append(2)
    return tuple(kinds)

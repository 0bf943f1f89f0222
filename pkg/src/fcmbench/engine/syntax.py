"""Bitstream syntax: symmetric write/read of partition trees, CU
decisions, residuals, and in-loop filter parameters.

Syntax element order and the context set are fixed by bitstream
version 1 (see bitstream.py); any change must bump the version.
"""

from __future__ import annotations

import numpy as np

from ..errors import CorruptionError
from ..kernels import residual as kres
from ..kernels import transforms as kt
from .. import tools
from .coding import (
    CuDecision,
    FrameCtx,
    MTS_COMBOS,
    TuData,
    merge_candidate_mv,
    node_options,
    sbt_allowed,
    sbt_types,
    split_children,
    reconstruct_cu,
)
from .entropy import CTX, BinDecoder, BinEncoder

_SPLIT_CTX = (CTX["split_flag0"], CTX["split_flag1"], CTX["split_flag2"])


def _split_ctx(depth):
    return _SPLIT_CTX[min(depth, 2)]


def mvd_base(pred_mv, imv):
    """MVD reference point: the first merge candidate rounded to the
    signaled precision (integer pel for imv, half pel otherwise)."""
    if imv:
        return ((pred_mv[0] + 2) >> 2) << 2, ((pred_mv[1] + 2) >> 2) << 2
    return ((pred_mv[0] + 1) >> 1) << 1, ((pred_mv[1] + 1) >> 1) << 1


def _sorted_modes(cfg):
    return sorted(cfg.allowed_intra_modes)


def _mode_index_bits(n):
    return max(1, (n - 1).bit_length()) if n > 1 else 0


class SyntaxWriter:
    def __init__(self, enc: BinEncoder, fctx: FrameCtx):
        self.enc = enc
        self.fctx = fctx
        self.modes = _sorted_modes(fctx.cfg)

    # -- partition ---------------------------------------------------------

    def tree(self, node, x, y, w, h, qt_depth, mt_depth, can_qt):
        fctx = self.fctx
        if x >= fctx.w or y >= fctx.h:
            return
        leaf_ok, qt_ok, kinds = node_options(fctx, x, y, w, h, mt_depth, can_qt)
        tag = node[0]
        if not leaf_ok and not kinds:
            # forced (or only-option) quad split: no bins
            assert tag == "split" and node[1] == "qt"
        else:
            is_split = tag == "split"
            if leaf_ok and (qt_ok or kinds):
                self.enc.bin(_split_ctx(qt_depth + mt_depth), 1 if is_split else 0)
            if is_split:
                kind = node[1]
                if qt_ok and kinds:
                    self.enc.bin(CTX["qt_flag"], 1 if kind == "qt" else 0)
                if kind != "qt":
                    horiz = kind in ("bh", "th")
                    ternary = kind in ("th", "tv")
                    dirs = {k[1] for k in kinds}
                    if "h" in dirs and "v" in dirs:
                        self.enc.bin(CTX["mtt_dir"], 1 if horiz else 0)
                    avail = [k for k in kinds if k[1] == ("h" if horiz else "v")]
                    if len(avail) == 2:
                        self.enc.bin(CTX["mtt_type"], 1 if ternary else 0)
        if tag == "leaf":
            dec = node[1]
            self.cu(dec)
            reconstruct_cu(self.fctx, dec)
            return
        kind = node[1]
        children = split_children(x, y, w, h, kind)
        nq = qt_depth + (1 if kind == "qt" else 0)
        nm = mt_depth + (0 if kind == "qt" else 1)
        for child_node, (cx, cy, cw, ch) in zip(node[2], children):
            if child_node is None:
                continue
            self.tree(child_node, cx, cy, cw, ch, nq, nm,
                      can_qt and kind == "qt")

    # -- CU ----------------------------------------------------------------

    def cu(self, dec: CuDecision):
        fctx = self.fctx
        cfg = fctx.cfg
        if fctx.is_inter:
            self.enc.bin(CTX["skip_flag"], 1 if dec.skip else 0)
            if not dec.skip:
                self.enc.bin(CTX["pred_mode"], 1 if dec.pred_mode == "intra" else 0)
        if dec.pred_mode == "intra":
            self._intra_cu(dec)
        else:
            self._inter_cu(dec)

    def _intra_cu(self, dec):
        cfg = self.fctx.cfg
        if cfg.mrl_enabled:
            self.enc.bin(CTX["mrl0"], 1 if dec.mrl_idx > 0 else 0)
            if dec.mrl_idx > 0:
                self.enc.bin(CTX["mrl1"], 1 if dec.mrl_idx == 2 else 0)
        if cfg.isp_enabled and dec.w >= 8 and dec.h >= 8 and dec.mrl_idx == 0:
            self.enc.bin(CTX["isp0"], 1 if dec.isp_mode > 0 else 0)
            if dec.isp_mode > 0:
                self.enc.bin(CTX["isp1"], 1 if dec.isp_mode == 2 else 0)
        n = len(self.modes)
        if n > 1:
            self.enc.bypass_bits(self.modes.index(dec.intra_mode), _mode_index_bits(n))
        if dec.isp_mode:
            for tu in dec.tus:
                self._tu(tu, signal_cbf=True, allow_mts=False)
        else:
            mts_ok = cfg.mts_enabled and dec.w <= tools.MTS_MAX_SIZE and dec.h <= tools.MTS_MAX_SIZE
            self._tu(dec.tus[0], signal_cbf=True, allow_mts=mts_ok, mts_idx=dec.mts_idx)

    def _inter_cu(self, dec):
        fctx = self.fctx
        cfg = fctx.cfg
        if not dec.skip:
            self.enc.bin(CTX["merge_flag"], 1 if dec.merge else 0)
        if dec.merge:
            self._merge_syntax(dec)
        else:
            if fctx.has_ref1:
                self.enc.bin(CTX["bi_flag"], 1 if dec.bi else 0)
            if cfg.imv_enabled:
                self.enc.bin(CTX["imv_flag"], 1 if dec.imv else 0)
            self._mvd(dec.mvd0, dec.imv)
            if dec.bi:
                self._mvd(dec.mvd1, dec.imv)
                if cfg.bcw_enabled:
                    idx = dec.bcw_idx if dec.bcw_idx is not None else 2
                    self.enc.bin(CTX["bcw_flag"], 0 if idx == 2 else 1)
                    if idx != 2:
                        code = {0: 0, 1: 1, 3: 2, 4: 3}[idx]
                        self.enc.bin(CTX["bcw_idx0"], code >> 1)
                        self.enc.bin(CTX["bcw_idx1"], code & 1)
        if not dec.skip:
            self.enc.bin(CTX["root_cbf"], 1 if dec.root_cbf else 0)
            if dec.root_cbf:
                sbt_kinds = sbt_allowed(cfg, dec.w, dec.h)
                if cfg.sbt_enabled and sbt_kinds and not dec.ciip:
                    self.enc.bin(CTX["sbt_flag"], 1 if dec.sbt_idx else 0)
                    if dec.sbt_idx:
                        if len(sbt_kinds) == 2:
                            self.enc.bin(CTX["sbt_idx"], dec.sbt_idx - 1)
                        self.enc.bin(CTX["sbt_pos"], dec.sbt_pos)
                self._tu(dec.tus[0], signal_cbf=False, allow_mts=False)

    def _merge_syntax(self, dec):
        fctx = self.fctx
        cfg = fctx.cfg
        x, y, w, h = dec.x, dec.y, dec.w, dec.h
        if cfg.sbtmvp_enabled and fctx.sbtmvp_field(x, y, w, h) is not None:
            self.enc.bin(CTX["sbtmvp_flag"], 1 if dec.merge_type == "sbtmvp" else 0)
            if dec.merge_type == "sbtmvp":
                return
        if cfg.affine_enabled and fctx.affine_corners(x, y, w, h) is not None:
            self.enc.bin(CTX["affine_flag"], 1 if dec.merge_type == "affine" else 0)
            if dec.merge_type == "affine":
                return
        cands = fctx.merge_list(x, y, w, h)
        if cfg.geo_enabled and w >= 8 and h >= 8 and len(cands) >= 2:
            self.enc.bin(CTX["geo_flag"], 1 if dec.merge_type == "geo" else 0)
            if dec.merge_type == "geo":
                self.enc.bin(CTX["geo_split"], dec.geo_split)
                return
        if cfg.mmvd_enabled:
            self.enc.bin(CTX["mmvd_flag"], 1 if dec.mmvd_flag else 0)
        if dec.mmvd_flag:
            base, step, direc = dec.mmvd_params
            self.enc.bin(CTX["mmvd_base"], base)
            self.enc.bypass_bits(step, 2)
            self.enc.bypass_bits(direc, 2)
        else:
            self._merge_idx(dec.merge_idx, len(cands))
        if cfg.ciip_enabled and not dec.skip:
            self.enc.bin(CTX["ciip_flag"], 1 if dec.ciip else 0)

    def _merge_idx(self, idx, list_len):
        # truncated unary: idx ones then a zero, last position implicit
        if list_len <= 1:
            return
        cap = min(list_len - 1, 5)
        i = min(idx, cap)
        for k in range(i):
            self.enc.bin(CTX["merge_idx1" if k else "merge_idx0"], 1)
        if i < cap:
            self.enc.bin(CTX["merge_idx1" if i else "merge_idx0"], 0)

    def _mvd(self, mvd, imv):
        for d in mvd:
            v = d // 4 if imv else d // 2  # integer or half precision units
            a = abs(v)
            self.enc.bin(CTX["mvd_gt0"], 1 if a > 0 else 0)
            if a > 0:
                self.enc.eg0(a - 1)
                self.enc.bypass(0 if v > 0 else 1)

    def _tu(self, tu: TuData, signal_cbf, allow_mts, mts_idx=0):
        cfg = self.fctx.cfg
        if signal_cbf:
            self.enc.bin(CTX["cbf_y"], 1 if tu.cbf else 0)
        if not tu.cbf:
            return
        if allow_mts:
            self.enc.bin(CTX["mts_flag"], 1 if mts_idx else 0)
            if mts_idx:
                self.enc.bin(CTX["mts_idx0"], (mts_idx - 1) >> 1)
                self.enc.bin(CTX["mts_idx1"], (mts_idx - 1) & 1)
        if cfg.depquant_enabled:
            self.enc.bin(CTX["dq_mode"], 1 if tu.used_trellis else 0)
        flat = np.ascontiguousarray(tu.levels, dtype=np.int32).ravel()
        nz = np.nonzero(flat)[0]
        last = int(nz[-1])
        self.enc.eg0(last)
        self.enc._reserve(int(8 * (last + 1) + 16 * np.abs(flat).sum() + 64))
        kres.enc_tu_levels(self.enc.state, self.enc.est, self.enc.buf, self.enc.ctxs,
                           flat, last, CTX["sig"], CTX["gt1"])

    # -- filters -----------------------------------------------------------

    def filters(self, dbf_applied, sao_grid):
        cfg = self.fctx.cfg
        if cfg.dbf_enabled:
            self.enc.bin(CTX["dbf_frame"], 1 if dbf_applied else 0)
        if cfg.sao_enabled:
            from ..kernels import filters as kf

            for row in sao_grid:
                for p in row:
                    self.enc.bin(CTX["sao_on"], 0 if p.mode == kf.SAO_OFF else 1)
                    if p.mode == kf.SAO_OFF:
                        continue
                    self.enc.bin(CTX["sao_band"], 1 if p.mode == kf.SAO_BAND else 0)
                    if p.mode == kf.SAO_BAND:
                        self.enc.bypass_bits(p.band_start, 5)
                        for o in p.offsets:
                            self.enc.bypass_bits(abs(o), 3)
                            if o != 0:
                                self.enc.bypass(0 if o > 0 else 1)
                    else:
                        self.enc.bypass_bits(p.direction, 2)
                        for o in p.offsets:
                            self.enc.bypass_bits(abs(o), 3)


class SyntaxReader:
    def __init__(self, dec: BinDecoder, fctx: FrameCtx):
        self.dec = dec
        self.fctx = fctx
        self.modes = _sorted_modes(fctx.cfg)
        self.decisions = []

    def tree(self, x, y, w, h, qt_depth, mt_depth, can_qt):
        fctx = self.fctx
        if x >= fctx.w or y >= fctx.h:
            return
        leaf_ok, qt_ok, kinds = node_options(fctx, x, y, w, h, mt_depth, can_qt)
        if not leaf_ok and not kinds:
            kind = "qt"
            is_split = True
        else:
            is_split = True
            if leaf_ok and (qt_ok or kinds):
                is_split = bool(self.dec.bin(_split_ctx(qt_depth + mt_depth)))
            elif leaf_ok:
                is_split = False
            if is_split:
                kind = None
                if qt_ok and kinds:
                    kind = "qt" if self.dec.bin(CTX["qt_flag"]) else None
                elif qt_ok:
                    kind = "qt"
                if kind is None:
                    dirs = {k[1] for k in kinds}
                    if "h" in dirs and "v" in dirs:
                        horiz = bool(self.dec.bin(CTX["mtt_dir"]))
                    else:
                        horiz = "h" in dirs
                    avail = [k for k in kinds if k[1] == ("h" if horiz else "v")]
                    if len(avail) == 2:
                        ternary = bool(self.dec.bin(CTX["mtt_type"]))
                        kind = ("th" if horiz else "tv") if ternary else ("bh" if horiz else "bv")
                    else:
                        kind = avail[0]
        if not is_split:
            dec = self.cu(x, y, w, h, qt_depth, mt_depth)
            self.decisions.append(dec)
            reconstruct_cu(self.fctx, dec)
            return
        nq = qt_depth + (1 if kind == "qt" else 0)
        nm = mt_depth + (0 if kind == "qt" else 1)
        for cx, cy, cw, ch in split_children(x, y, w, h, kind):
            self.tree(cx, cy, cw, ch, nq, nm, can_qt and kind == "qt")

    def cu(self, x, y, w, h, qt_depth, mt_depth) -> CuDecision:
        fctx = self.fctx
        dec = CuDecision(x=x, y=y, w=w, h=h, qt_depth=qt_depth, mt_depth=mt_depth)
        if fctx.is_inter:
            dec.skip = bool(self.dec.bin(CTX["skip_flag"]))
            if dec.skip:
                dec.pred_mode = "inter"
                dec.merge = True
                self._read_merge(dec)
                return dec
            dec.pred_mode = "intra" if self.dec.bin(CTX["pred_mode"]) else "inter"
        else:
            dec.pred_mode = "intra"
        if dec.pred_mode == "intra":
            self._read_intra(dec)
        else:
            self._read_inter(dec)
        return dec

    def _read_intra(self, dec):
        cfg = self.fctx.cfg
        if cfg.mrl_enabled:
            if self.dec.bin(CTX["mrl0"]):
                dec.mrl_idx = 2 if self.dec.bin(CTX["mrl1"]) else 1
        if cfg.isp_enabled and dec.w >= 8 and dec.h >= 8 and dec.mrl_idx == 0:
            if self.dec.bin(CTX["isp0"]):
                dec.isp_mode = 2 if self.dec.bin(CTX["isp1"]) else 1
        n = len(self.modes)
        if n > 1:
            idx = self.dec.bypass_bits(_mode_index_bits(n))
            if idx >= n:
                raise CorruptionError("intra mode index out of range")
            dec.intra_mode = self.modes[idx]
        else:
            dec.intra_mode = self.modes[0]
        if dec.isp_mode:
            direction = "vertical" if dec.isp_mode == 1 else "horizontal"
            for ox, oy, sw, sh in tools.isp_partitions(dec.w, dec.h, direction):
                dec.tus.append(self._read_tu(dec.x + ox, dec.y + oy, sw, sh,
                                             signal_cbf=True, allow_mts=False))
        else:
            mts_ok = cfg.mts_enabled and dec.w <= tools.MTS_MAX_SIZE and dec.h <= tools.MTS_MAX_SIZE
            tu = self._read_tu(dec.x, dec.y, dec.w, dec.h, signal_cbf=True,
                               allow_mts=mts_ok)
            dec.tus.append(tu)
            dec.mts_idx = tu._mts_idx
            th, tv = MTS_COMBOS[dec.mts_idx]
            tu.type_h, tu.type_v = th, tv
        dec.root_cbf = any(t.cbf for t in dec.tus)

    def _read_inter(self, dec):
        fctx = self.fctx
        cfg = fctx.cfg
        dec.merge = bool(self.dec.bin(CTX["merge_flag"]))
        if dec.merge:
            self._read_merge(dec)
        else:
            if fctx.has_ref1:
                dec.bi = bool(self.dec.bin(CTX["bi_flag"]))
            if cfg.imv_enabled:
                dec.imv = bool(self.dec.bin(CTX["imv_flag"]))
            pred_mv = fctx.merge_list(dec.x, dec.y, dec.w, dec.h)[0]
            dec.mvd0 = self._read_mvd(dec.imv)
            dec.mv0 = self._apply_mvd(pred_mv, dec.mvd0, dec.imv)
            if dec.bi:
                dec.mvd1 = self._read_mvd(dec.imv)
                dec.mv1 = self._apply_mvd(pred_mv, dec.mvd1, dec.imv)
                if cfg.bcw_enabled:
                    if self.dec.bin(CTX["bcw_flag"]):
                        code = (self.dec.bin(CTX["bcw_idx0"]) << 1) | self.dec.bin(CTX["bcw_idx1"])
                        dec.bcw_idx = {0: 0, 1: 1, 2: 3, 3: 4}[code]
                    else:
                        dec.bcw_idx = 2
        if not dec.skip:
            dec.root_cbf = bool(self.dec.bin(CTX["root_cbf"]))
            if dec.root_cbf:
                sbt_kinds = sbt_allowed(cfg, dec.w, dec.h)
                if cfg.sbt_enabled and sbt_kinds and not dec.ciip:
                    if self.dec.bin(CTX["sbt_flag"]):
                        if len(sbt_kinds) == 2:
                            dec.sbt_idx = 1 + self.dec.bin(CTX["sbt_idx"])
                        else:
                            dec.sbt_idx = sbt_kinds[0]
                        dec.sbt_pos = self.dec.bin(CTX["sbt_pos"])
                if dec.sbt_idx:
                    ox, oy, sw, sh, th, tv = sbt_types(dec.sbt_idx, dec.sbt_pos,
                                                       dec.w, dec.h)
                    tu = self._read_tu(dec.x + ox, dec.y + oy, sw, sh,
                                       signal_cbf=False, allow_mts=False)
                    tu.type_h, tu.type_v = th, tv
                    dec.tus.append(tu)
                else:
                    dec.tus.append(self._read_tu(dec.x, dec.y, dec.w, dec.h,
                                                 signal_cbf=False, allow_mts=False))

    def _read_merge(self, dec):
        fctx = self.fctx
        cfg = fctx.cfg
        x, y, w, h = dec.x, dec.y, dec.w, dec.h
        dec.merge_type = "regular"
        field = fctx.sbtmvp_field(x, y, w, h) if cfg.sbtmvp_enabled else None
        if field is not None:
            if self.dec.bin(CTX["sbtmvp_flag"]):
                dec.merge_type = "sbtmvp"
                dec.sub_mvs = field
                dec.mv0 = (0, 0)
                return
        corners = fctx.affine_corners(x, y, w, h) if cfg.affine_enabled else None
        if corners is not None:
            if self.dec.bin(CTX["affine_flag"]):
                dec.merge_type = "affine"
                dec.sub_mvs = tools.affine_subblock_field(x, y, w, h, *corners,
                                                          cfg.search_range)
                dec.mv0 = corners[0]
                return
        cands = fctx.merge_list(x, y, w, h)
        if cfg.geo_enabled and w >= 8 and h >= 8 and len(cands) >= 2:
            if self.dec.bin(CTX["geo_flag"]):
                dec.merge_type = "geo"
                dec.geo_split = self.dec.bin(CTX["geo_split"])
                dec.mv0 = cands[0]
                return
        if cfg.mmvd_enabled:
            dec.mmvd_flag = bool(self.dec.bin(CTX["mmvd_flag"]))
        if dec.mmvd_flag:
            base = self.dec.bin(CTX["mmvd_base"])
            step = self.dec.bypass_bits(2)
            direc = self.dec.bypass_bits(2)
            dec.mmvd_params = (base, step, direc)
        else:
            dec.merge_idx = self._read_merge_idx(len(cands))
        dec.mv0 = merge_candidate_mv(fctx, dec)
        if cfg.ciip_enabled and not dec.skip:
            dec.ciip = bool(self.dec.bin(CTX["ciip_flag"]))

    def _read_merge_idx(self, list_len):
        if list_len <= 1:
            return 0
        cap = min(list_len - 1, 5)
        i = 0
        while i < cap and self.dec.bin(CTX["merge_idx1" if i else "merge_idx0"]):
            i += 1
        return i

    def _read_mvd(self, imv):
        out = []
        for _ in range(2):
            if self.dec.bin(CTX["mvd_gt0"]):
                a = self.dec.eg0() + 1
                sign = self.dec.bypass()
                v = -a if sign else a
            else:
                v = 0
            out.append(v * 4 if imv else v * 2)
        return tuple(out)

    def _apply_mvd(self, pred_mv, mvd, imv):
        from ..config import clamp_mv

        bx, by = mvd_base(pred_mv, imv)
        return clamp_mv(bx + mvd[0], by + mvd[1], self.fctx.cfg.search_range)

    def _read_tu(self, x, y, w, h, signal_cbf, allow_mts):
        cfg = self.fctx.cfg
        tu = TuData(x, y, w, h, np.zeros((h, w), dtype=np.int32), cbf=True)
        tu._mts_idx = 0
        if signal_cbf:
            tu.cbf = bool(self.dec.bin(CTX["cbf_y"]))
            if not tu.cbf:
                return tu
        if allow_mts:
            if self.dec.bin(CTX["mts_flag"]):
                tu._mts_idx = 1 + ((self.dec.bin(CTX["mts_idx0"]) << 1)
                                   | self.dec.bin(CTX["mts_idx1"]))
        if cfg.depquant_enabled:
            tu.used_trellis = bool(self.dec.bin(CTX["dq_mode"]))
        last = self.dec.eg0()
        if last >= w * h:
            raise CorruptionError("residual last position out of range")
        flat = np.zeros(w * h, dtype=np.int32)
        rcode = kres.dec_tu_levels(self.dec.state, self.dec.buf, self.dec.ctxs,
                                   flat, last, CTX["sig"], CTX["gt1"])
        if rcode < 0:
            raise CorruptionError("residual levels malformed")
        if flat[last] == 0:
            raise CorruptionError("last residual level is zero")
        tu.levels = flat.reshape(h, w)
        return tu

    def filters(self):
        cfg = self.fctx.cfg
        dbf_applied = False
        sao_grid = None
        if cfg.dbf_enabled:
            dbf_applied = bool(self.dec.bin(CTX["dbf_frame"]))
        if cfg.sao_enabled:
            from ..kernels import filters as kf

            c = cfg.ctu_size
            sao_grid = []
            for y0 in range(0, self.fctx.h, c):
                row = []
                for x0 in range(0, self.fctx.w, c):
                    if not self.dec.bin(CTX["sao_on"]):
                        row.append(tools.SaoParams(kf.SAO_OFF))
                        continue
                    if self.dec.bin(CTX["sao_band"]):
                        start = self.dec.bypass_bits(5)
                        offs = []
                        for _ in range(4):
                            mag = self.dec.bypass_bits(3)
                            if mag and self.dec.bypass():
                                mag = -mag
                            offs.append(mag)
                        row.append(tools.SaoParams(kf.SAO_BAND, band_start=start,
                                                   offsets=tuple(offs)))
                    else:
                        d = self.dec.bypass_bits(2)
                        offs = []
                        for i, cat in enumerate(kf.EDGE_CATS):
                            mag = self.dec.bypass_bits(3)
                            offs.append(mag if cat in (0, 1) else -mag)
                        row.append(tools.SaoParams(kf.SAO_EDGE, direction=d,
                                                   offsets=tuple(offs)))
                sao_grid.append(row)
        return dbf_applied, sao_grid

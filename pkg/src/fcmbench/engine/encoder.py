"""RDO-driven encoder.

Search strategy per tree node: evaluate no-split, then QT, then the MTT
splits, with exact branch-and-bound (children accumulate cost and abort
once over the incumbent, which cannot change the minimum). Leaf
evaluation runs exact RD over all allowed intra modes with the base
toolset, then tool refinements (MRL/ISP/MTS, merge/explicit inter
families) whose candidate selection depends only on flag-independent
base results; strict less-than comparisons in a fixed order make every
tie fall to the earlier (baseline) candidate.

The RDO cost model charges tool syntax only when a tool is engaged, so
growing a candidate set by enabling a flag can only lower the model
cost J at a fixed context. Actual entropy bits do code the zero flags.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..config import CodecConfig
from ..errors import ValidationError
from .. import kernels as kn
from ..kernels import filters as kf
from ..kernels import intra as ki
from ..kernels import intra_rd as kird
from ..kernels import mc as kmc
from ..kernels import quant as kq
from ..kernels import rd as krd
from ..kernels import transforms as kt
from ..packing import PackedVideo
from .. import tools
from .bitstream import Bitstream
from .coding import (
    CuDecision,
    FrameCtx,
    MTS_COMBOS,
    TuData,
    merge_idx_model_bits,
    mvd_model_bits,
    node_options,
    reconstruct_cu,
    sbt_allowed,
    sbt_types,
    split_children,
)
from .entropy import BinEncoder
from .records import CuRecordSet
from .syntax import SyntaxWriter, mvd_base

INF = float("inf")
TOP_K = 2  # base modes refined by MRL/ISP/MTS
# mode subset used while costing candidate partitions; the final tree's
# leaves always get exact RD over every allowed mode
INTERIM_MODES = (0, 1, 18, 50, 34, 66)


@dataclass
class EncodeResult:
    bitstream: Bitstream
    records: CuRecordSet
    recon: np.ndarray  # (T, H, W) uint16
    rd_cost: float  # model cost J summed over the sequence
    timing: dict
    tool_stats: dict
    estimated_bits: float

    @property
    def size_bits(self) -> int:
        return self.bitstream.size_bits


def _sse(a, b) -> float:
    d = a.astype(np.float64) - b.astype(np.float64)
    return float((d * d).sum())


class FrameEncoder:
    def __init__(self, fctx: FrameCtx, source: np.ndarray):
        self.fctx = fctx
        self.src = source
        self.src_f32 = source.astype(np.float32)
        self.lam = fctx.lam
        self.qstep = fctx.qstep
        self.modes = sorted(fctx.cfg.allowed_intra_modes)
        self._modes_arr = np.array(self.modes, dtype=np.int64)
        interim = sorted(set(INTERIM_MODES) & fctx.cfg.allowed_intra_modes)
        self.interim_modes = interim
        self._interim_arr = np.array(interim, dtype=np.int64)
        self.mode_bits = float(max(1, (len(self.modes) - 1).bit_length())) if len(self.modes) > 1 else 0.0
        self._search_memo = {}
        self.tool_stats = {"dq_trellis_tus": 0}

    # -- state snapshots -----------------------------------------------------

    def _save(self, x, y, w, h):
        f = self.fctx
        sl = (slice(y, y + h), slice(x, x + w))
        g = (slice(y // 4, (y + h) // 4), slice(x // 4, (x + w) // 4))
        return (
            f.recon[sl].copy(), f.coded[sl].copy(),
            f.mvx[g].copy(), f.mvy[g].copy(), f.mv_valid[g].copy(),
        )

    def _restore(self, x, y, w, h, snap):
        f = self.fctx
        sl = (slice(y, y + h), slice(x, x + w))
        g = (slice(y // 4, (y + h) // 4), slice(x // 4, (x + w) // 4))
        f.recon[sl], f.coded[sl] = snap[0], snap[1]
        f.mvx[g], f.mvy[g], f.mv_valid[g] = snap[2], snap[3], snap[4]

    # -- residual helpers ------------------------------------------------------

    def _scalar_rd(self, res, type_h=kt.DCT2, type_v=kt.DCT2):
        """(cost, has_residual) of one block under the scalar model."""
        coeff = tools.transform(res, type_h, type_v)
        dist, bits = krd.quant_rd_single(coeff, self.qstep)
        return dist + self.lam * bits, bits > 0.0

    def _final_tu(self, res, x, y, w, h, type_h=kt.DCT2, type_v=kt.DCT2,
                  force_scalar=False) -> TuData:
        """Quantize for commit, honoring depquant when enabled."""
        cfg = self.fctx.cfg
        coeff = tools.transform(res, type_h, type_v)
        mode = "depquant" if (cfg.depquant_enabled and not force_scalar) else "scalar"
        qr = tools.quantize(coeff, cfg.qp, self.lam, mode)
        cbf = bool(np.any(qr.levels))
        if qr.used_trellis:
            self.tool_stats["dq_trellis_tus"] += 1
        return TuData(x, y, w, h, qr.levels.astype(np.int32), cbf,
                      qr.used_trellis, type_h, type_v)

    def _tu_model_bits(self, tu: TuData) -> float:
        b = kq.block_rate_bits(tu.levels.ravel())
        if tu.used_trellis:
            b += 1.0
        return b

    # -- intra leaf evaluation -------------------------------------------------

    def _intra_header_bits(self) -> float:
        # skip + pred_mode bins on inter frames; mode index always
        return (2.0 if self.fctx.is_inter else 0.0) + self.mode_bits

    def eval_intra(self, x, y, w, h):
        """Best intra variant. Returns (cost, skeleton dict).

        All allowed modes get exact RD with the base toolset; MRL, ISP
        and MTS refinements run on the top base modes unless their
        provable minimum cost (syntax bits alone) already exceeds the
        incumbent.
        """
        fctx = self.fctx
        cfg = fctx.cfg
        lam = self.lam
        orig = self.src_f32[y : y + h, x : x + w]
        tv = kt.basis(kt.DCT2, h)
        th = kt.basis(kt.DCT2, w)
        header = self._intra_header_bits()
        xloc, yloc = x - fctx.ctu[0], y - fctx.ctu[1]
        recon_v, coded_v = fctx.ctu_views()
        res = None
        if kn.NUMBA_ENABLED and w <= 16 and h <= 16:
            idx_tbl, frac_tbl = ki.projection_tables(w, h, 0)
            raw = np.empty(len(self.modes), dtype=np.float64)
            kird.stage_a_costs(orig, recon_v, coded_v, xloc, yloc, w, h,
                               self._modes_arr, idx_tbl, frac_tbl, tv, th,
                               self.qstep, lam, raw)
            costs = raw + lam * (1.0 + header)
        else:
            refs0 = tools.gather_references(recon_v, coded_v, xloc, yloc, w, h, 0)
            preds = tools.predict_all_modes(self.modes, refs0, w, h)
            res = orig[None, :, :] - preds
            coeffs = np.matmul(np.matmul(tv, res), th.T)
            dist, bits = krd.quant_rd_batch(coeffs, self.qstep)
            costs = dist + lam * (bits + 1.0 + header)  # +1 cbf bin
        order = np.argsort(costs, kind="stable")
        bi = int(order[0])
        best = (
            float(costs[bi]),
            {"kind": "intra", "mode": self.modes[bi], "mrl": 0, "isp": 0, "mts": 0},
        )
        top = [int(i) for i in order[:TOP_K]]
        if (cfg.mts_enabled and w <= tools.MTS_MAX_SIZE and h <= tools.MTS_MAX_SIZE
                and best[0] > lam * (header + 4.0)):
            if res is not None:
                res_top = np.ascontiguousarray(res[top])
            else:
                refs0 = tools.gather_references(recon_v, coded_v, xloc, yloc, w, h, 0)
                p_top = tools.predict_all_modes([self.modes[i] for i in top],
                                                refs0, w, h)
                res_top = orig[None, :, :] - p_top
            for idx in range(1, 5):
                t_h, t_v = MTS_COMBOS[idx]
                c = np.matmul(np.matmul(kt.basis(t_v, h), res_top),
                              kt.basis(t_h, w).T)
                d2, b2 = krd.quant_rd_batch(c, self.qstep)
                cost_v = d2 + lam * (b2 + 1.0 + header + 3.0)
                k = int(np.argmin(cost_v))
                if cost_v[k] < best[0]:
                    best = (float(cost_v[k]),
                            {"kind": "intra", "mode": self.modes[top[k]],
                             "mrl": 0, "isp": 0, "mts": idx})
        if cfg.mrl_enabled and best[0] > lam * (header + 2.0 + 1.0):
            top_modes = [self.modes[i] for i in top]
            for line in (1, 2):
                refs = tools.gather_references(recon_v, coded_v, xloc, yloc, w, h, line)
                p2 = tools.predict_all_modes(top_modes, refs, w, h)
                c = np.matmul(np.matmul(tv, orig[None] - p2), th.T)
                d2, b2 = krd.quant_rd_batch(c, self.qstep)
                cost_v = d2 + lam * (b2 + 1.0 + header + 2.0)
                k = int(np.argmin(cost_v))
                if cost_v[k] < best[0]:
                    best = (float(cost_v[k]),
                            {"kind": "intra", "mode": top_modes[k], "mrl": line,
                             "isp": 0, "mts": 0})
        if cfg.isp_enabled and w >= 8 and h >= 8:
            nparts = 2 if min(w, h) == 8 else 4
            if best[0] > lam * (header + 2.0 + nparts):
                for mi in top:
                    mode = self.modes[mi]
                    for isp_mode, direction in ((1, "vertical"), (2, "horizontal")):
                        cost = self._eval_isp(x, y, w, h, mode, direction)
                        cost += lam * (header + 2.0)
                        if cost < best[0]:
                            best = (cost, {"kind": "intra", "mode": mode, "mrl": 0,
                                           "isp": isp_mode, "mts": 0})
        return best

    def _eval_isp(self, x, y, w, h, mode, direction):
        """Sequential sub-partition cost with scalar quantization;
        speculative recon is rolled back."""
        fctx = self.fctx
        snap = self._save(x, y, w, h)
        parts = tools.isp_partitions(w, h, direction)
        sw, sh = parts[0][2], parts[0][3]
        if kn.NUMBA_ENABLED:
            recon_v, coded_v = fctx.ctu_views()
            idx_sub, frac_sub = ki.projection_tables(sw, sh, 0)
            total = kird.isp_variant_rd(
                self.src_f32[y : y + h, x : x + w], recon_v, coded_v,
                x - fctx.ctu[0], y - fctx.ctu[1], w, h, mode,
                direction == "vertical", idx_sub, frac_sub,
                kt.basis(kt.DCT2, sh), kt.basis(kt.DCT2, sw),
                self.qstep, self.lam,
            )
            self._restore(x, y, w, h, snap)
            return total
        from .coding import reconstruct_tu

        total = 0.0
        for ox, oy, sw, sh in parts:
            ax, ay = x + ox, y + oy
            refs = tools.gather_references(*fctx.ctu_views(),
                                           ax - fctx.ctu[0], ay - fctx.ctu[1], sw, sh, 0)
            pred = tools.intra_predict(mode, refs, sw, sh)
            orig = self.src_f32[ay : ay + sh, ax : ax + sw]
            coeff = tools.transform(orig - pred, kt.DCT2, kt.DCT2)
            lv = kq.quantize_scalar(coeff.astype(np.float64).ravel(), self.qstep)
            b = kq.block_rate_bits(lv)
            d = coeff.astype(np.float64).ravel() - lv * self.qstep
            total += float((d * d).sum()) + self.lam * (b + 1.0)  # + cbf bin
            tu = TuData(ax, ay, sw, sh, lv.reshape(sh, sw).astype(np.int32),
                        bool(np.any(lv)))
            blk = reconstruct_tu(fctx, tu, pred)
            fctx.recon[ay : ay + sh, ax : ax + sw] = blk
            fctx.coded[ay : ay + sh, ax : ax + sw] = True
        self._restore(x, y, w, h, snap)
        return total

    # -- inter leaf evaluation ---------------------------------------------------

    def _motion(self, ref_idx, x, y, w, h):
        key = (ref_idx, x, y, w, h)
        hit = self._search_memo.get(key)
        if hit is None:
            from ..config import MotionVector

            cur = self.src[y : y + h, x : x + w]
            ref = self.fctx.refs[ref_idx]
            mv_half, sad_h = tools.motion_search(cur, ref, x, y, MotionVector(0, 0),
                                                 self.fctx.cfg, refine_half=True)
            mv_int, sad_i = tools.motion_search(cur, ref, x, y, MotionVector(0, 0),
                                                self.fctx.cfg, refine_half=False)
            hit = ((mv_half.x, mv_half.y), sad_h, (mv_int.x, mv_int.y), sad_i)
            self._search_memo[key] = hit
        return hit

    def _pred_cost(self, orig, pred, bits):
        """Cost of coding with zero residual (clipped rounded pred)."""
        rec = np.clip(np.rint(pred), 0, 1023)
        d = orig.astype(np.float64) - rec
        return float((d * d).sum()) + self.lam * bits

    def _res_cost(self, orig, pred, bits):
        """(cost, has_residual): residual coded with the scalar model."""
        cost0, has_res = self._scalar_rd(orig - pred)
        return cost0 + self.lam * bits, has_res

    def eval_inter(self, x, y, w, h, interim=False):
        """Best inter candidate. With interim=True only the baseline
        skip/merge/explicit candidates are costed (partition search);
        the full tool families run for final leaf coding."""
        fctx = self.fctx
        cfg = fctx.cfg
        orig = self.src_f32[y : y + h, x : x + w]
        ref0 = fctx.refs[0]
        cands = fctx.merge_list(x, y, w, h)
        L = len(cands)
        best = (INF, None)

        def consider(cost, skel):
            nonlocal best
            if cost < best[0]:
                best = (cost, skel)

        mc_cache = {}

        def mc0(mv):
            if mv not in mc_cache:
                mc_cache[mv] = kmc.motion_compensate(ref0, x, y, w, h, mv[0], mv[1])
            return mc_cache[mv]

        # skip, then merge-with-residual, over the regular list
        for i, mv in enumerate(cands):
            pred = mc0(mv)
            bits = 1.0 + merge_idx_model_bits(i, L)
            consider(self._pred_cost(orig, pred, bits),
                     {"kind": "skip", "merge_idx": i, "mv": mv})
        for i, mv in enumerate(cands):
            pred = mc0(mv)
            bits = 3.0 + merge_idx_model_bits(i, L) + 1.0  # hdr + root_cbf
            cost, has_res = self._res_cost(orig, pred, bits)
            consider(cost, {"kind": "merge", "merge_idx": i, "mv": mv,
                            "root_cbf": has_res})

        # explicit search: provably >= lam * minimal explicit header
        explicit_min = 3.0 + (1.0 if fctx.has_ref1 else 0.0) + 2.0 + 1.0
        if best[0] > self.lam * explicit_min:
            base0 = mvd_base(cands[0], False)
            mv_h, _, mv_i, _ = self._motion(0, x, y, w, h)
            mvd0 = (mv_h[0] - base0[0], mv_h[1] - base0[1])
            bits_mvd = mvd_model_bits(mvd0[0] // 2) + mvd_model_bits(mvd0[1] // 2)
            bits = 3.0 + (1.0 if fctx.has_ref1 else 0.0) + bits_mvd + 1.0
            pred0 = kmc.motion_compensate(ref0, x, y, w, h, mv_h[0], mv_h[1])
            cost, has_res = self._res_cost(orig, pred0, bits)
            consider(cost, {"kind": "explicit", "mv0": mv_h, "mvd0": mvd0,
                            "bi": False, "imv": False, "root_cbf": has_res})
            if cfg.imv_enabled and not interim:
                basei = mvd_base(cands[0], True)
                mvdi = (mv_i[0] - basei[0], mv_i[1] - basei[1])
                bits_i = 3.0 + (1.0 if fctx.has_ref1 else 0.0) + 1.0 + 1.0 \
                    + mvd_model_bits(mvdi[0] // 4) + mvd_model_bits(mvdi[1] // 4)
                predi = kmc.motion_compensate(ref0, x, y, w, h, mv_i[0], mv_i[1])
                cost, has_res = self._res_cost(orig, predi, bits_i)
                consider(cost, {"kind": "explicit", "mv0": mv_i, "mvd0": mvdi,
                                "bi": False, "imv": True, "root_cbf": has_res})
            if fctx.has_ref1:
                base0 = mvd_base(cands[0], False)
                mv1h, _, _, _ = self._motion(1, x, y, w, h)
                mvd1 = (mv1h[0] - base0[0], mv1h[1] - base0[1])
                pred1 = kmc.motion_compensate(fctx.refs[1], x, y, w, h, mv1h[0], mv1h[1])
                bits_bi = 3.0 + 1.0 + bits_mvd + 1.0 \
                    + mvd_model_bits(mvd1[0] // 2) + mvd_model_bits(mvd1[1] // 2)
                if cfg.bcw_enabled:
                    bi_pred = tools.blend_predictions(pred0, pred1, ("bcw", 2), cfg)
                else:
                    bi_pred = (pred0 + pred1) * np.float32(0.5)
                cost, has_res = self._res_cost(orig, bi_pred, bits_bi)
                consider(cost, {"kind": "explicit", "mv0": mv_h, "mvd0": mvd0,
                                "mv1": mv1h, "mvd1": mvd1, "bi": True,
                                "imv": False, "bcw_idx": 2 if cfg.bcw_enabled else None,
                                "root_cbf": has_res})
                if cfg.bcw_enabled and not interim:
                    for idx in (0, 1, 3, 4):
                        bp = tools.blend_predictions(pred0, pred1, ("bcw", idx), cfg)
                        cost, has_res = self._res_cost(orig, bp, bits_bi + 3.0)
                        consider(cost, {"kind": "explicit", "mv0": mv_h,
                                        "mvd0": mvd0, "mv1": mv1h, "mvd1": mvd1,
                                        "bi": True, "imv": False, "bcw_idx": idx,
                                        "root_cbf": has_res})

        if interim:
            return best
        # each remaining family is gated by its provable minimum cost,
        # so skipping it never changes the argmin
        if cfg.mmvd_enabled and best[0] > self.lam * 7.0:
            from ..config import clamp_mv

            exp = []
            for b in range(min(2, L)):
                for si, step in enumerate(tools.MMVD_STEPS):
                    for di, (sx, sy) in enumerate(tools.MMVD_DIRS):
                        mv = clamp_mv(cands[b][0] + 4 * step * sx,
                                      cands[b][1] + 4 * step * sy, cfg.search_range)
                        exp.append((b, si, di, mv))
            quick = []
            for b, si, di, mv in exp:
                pred = mc0(mv)
                d = _sse(orig, np.clip(np.rint(pred), 0, 1023))
                quick.append((d, b, si, di, mv))
            quick.sort(key=lambda t: (t[0], t[1], t[2], t[3]))
            for d, b, si, di, mv in quick[:2]:
                pred = mc0(mv)
                consider(self._pred_cost(orig, pred, 1.0 + 6.0),
                         {"kind": "skip", "mmvd": (b, si, di), "mv": mv})
                cost, has_res = self._res_cost(orig, pred, 3.0 + 6.0 + 1.0)
                consider(cost, {"kind": "merge", "mmvd": (b, si, di), "mv": mv,
                                "root_cbf": has_res})

        if cfg.sbtmvp_enabled and best[0] > self.lam * 2.0:
            fld = fctx.sbtmvp_field(x, y, w, h)
            if fld is not None:
                pred = kmc.per_subblock_compensate(ref0, x, y, w, h, fld)
                consider(self._pred_cost(orig, pred, 1.0 + 1.0),
                         {"kind": "skip", "merge_type": "sbtmvp", "sub_mvs": fld})
                cost, has_res = self._res_cost(orig, pred, 3.0 + 1.0 + 1.0)
                consider(cost, {"kind": "merge", "merge_type": "sbtmvp",
                                "sub_mvs": fld, "root_cbf": has_res})

        if cfg.affine_enabled and best[0] > self.lam * 2.0:
            corners = fctx.affine_corners(x, y, w, h)
            if corners is not None:
                fld = tools.affine_subblock_field(x, y, w, h, *corners,
                                                  cfg.search_range)
                pred = kmc.per_subblock_compensate(ref0, x, y, w, h, fld)
                consider(self._pred_cost(orig, pred, 1.0 + 1.0),
                         {"kind": "skip", "merge_type": "affine", "sub_mvs": fld,
                          "mv": corners[0]})
                cost, has_res = self._res_cost(orig, pred, 3.0 + 1.0 + 1.0)
                consider(cost, {"kind": "merge", "merge_type": "affine",
                                "sub_mvs": fld, "mv": corners[0],
                                "root_cbf": has_res})

        if cfg.geo_enabled and w >= 8 and h >= 8 and L >= 2 and best[0] > self.lam * 6.0:
            p0 = mc0(cands[0])
            p1 = mc0(cands[1])
            for split in (0, 1):
                pred = tools.blend_predictions(p0, p1, ("geo", split), cfg)
                cost, has_res = self._res_cost(orig, pred, 3.0 + 2.0 + 1.0)
                consider(cost, {"kind": "merge", "merge_type": "geo",
                                "geo_split": split, "mv": cands[0],
                                "root_cbf": has_res})

        if cfg.ciip_enabled and best[0] > self.lam * 5.0:
            refs = tools.gather_references(*fctx.ctu_views(),
                                           x - fctx.ctu[0], y - fctx.ctu[1], w, h, 0)
            planar = tools.intra_predict(0, refs, w, h)
            pred = (mc0(cands[0]) + planar) * np.float32(0.5)
            bits = 3.0 + merge_idx_model_bits(0, L) + 1.0 + 1.0
            cost, has_res = self._res_cost(orig, pred, bits)
            consider(cost, {"kind": "merge", "merge_idx": 0, "mv": cands[0],
                            "ciip": True, "root_cbf": has_res})

        # SBT refinement of the baseline merge/explicit winner
        if cfg.sbt_enabled and best[1] is not None and sbt_allowed(cfg, w, h) \
                and best[0] > self.lam * 7.0:
            skel = best[1]
            if skel["kind"] in ("merge", "explicit") and skel.get("root_cbf") \
                    and not skel.get("ciip") and skel.get("merge_type", "regular") == "regular":
                pred = self._skeleton_pred(x, y, w, h, skel, mc_cache)
                res = orig - pred
                res64 = res.astype(np.float64)
                total_sq = float((res64 ** 2).sum())
                base_bits = self._skeleton_bits(skel, L) + 3.0
                for idx in sbt_allowed(cfg, w, h):
                    for pos in (0, 1):
                        ox, oy, sw, sh, t_h, t_v = sbt_types(idx, pos, w, h)
                        half = res[oy : oy + sh, ox : ox + sw]
                        d_other = total_sq - float(
                            (res64[oy : oy + sh, ox : ox + sw] ** 2).sum()
                        )
                        c = tools.transform(half, t_h, t_v)
                        dd, b = krd.quant_rd_single(c, self.qstep)
                        if b == 0.0:
                            continue
                        cost = dd + d_other + self.lam * (b + base_bits)
                        if cost < best[0]:
                            ns = dict(skel)
                            ns["sbt"] = (idx, pos)
                            consider(cost, ns)
        return best

    def _skeleton_pred(self, x, y, w, h, skel, mc_cache):
        fctx = self.fctx

        def mc0(mv):
            if mv not in mc_cache:
                mc_cache[mv] = kmc.motion_compensate(fctx.refs[0], x, y, w, h,
                                                     mv[0], mv[1])
            return mc_cache[mv]

        if skel.get("bi"):
            p0 = kmc.motion_compensate(fctx.refs[0], x, y, w, h, *skel["mv0"])
            p1 = kmc.motion_compensate(fctx.refs[1], x, y, w, h, *skel["mv1"])
            idx = skel.get("bcw_idx")
            if fctx.cfg.bcw_enabled:
                return tools.blend_predictions(p0, p1, ("bcw", idx if idx is not None else 2),
                                               fctx.cfg)
            return (p0 + p1) * np.float32(0.5)
        mv = skel.get("mv") or skel.get("mv0")
        return mc0(tuple(mv))

    def _skeleton_bits(self, skel, L):
        bits = 3.0 + 1.0  # skip0 + pred + merge + root_cbf
        if skel["kind"] == "merge":
            if skel.get("mmvd"):
                bits += 6.0
            elif skel.get("merge_type", "regular") == "regular":
                bits += merge_idx_model_bits(skel.get("merge_idx", 0), L)
            else:
                bits += 1.0
        else:
            mvd0 = skel["mvd0"]
            div = 4 if skel.get("imv") else 2
            bits += (1.0 if self.fctx.has_ref1 else 0.0) \
                + mvd_model_bits(mvd0[0] // div) + mvd_model_bits(mvd0[1] // div)
            if skel.get("imv"):
                bits += 1.0
            if skel.get("bi"):
                mvd1 = skel["mvd1"]
                bits += mvd_model_bits(mvd1[0] // div) + mvd_model_bits(mvd1[1] // div)
                if skel.get("bcw_idx") not in (None, 2):
                    bits += 3.0
        return bits

    # -- leaf finalize ---------------------------------------------------------

    def interim_leaf(self, x, y, w, h):
        """Cheap exact-model leaf costing used while exploring
        partitions: intra over the interim mode subset, and on inter
        frames the baseline skip/merge/explicit candidates. Commits its
        reconstruction so sibling evaluations see real context. The
        candidate set here is independent of every gated tool flag."""
        fctx = self.fctx
        header = self._intra_header_bits()
        xloc, yloc = x - fctx.ctu[0], y - fctx.ctu[1]
        recon_v, coded_v = fctx.ctu_views()
        orig = self.src_f32[y : y + h, x : x + w]
        inter_best = None
        if fctx.is_inter:
            inter_best = self.eval_inter(x, y, w, h, interim=True)
        # exact gate: any intra candidate costs >= lam * (cbf + header)
        if inter_best is not None and inter_best[0] <= self.lam * (header + 1.0):
            self._commit_interim_inter(x, y, w, h, inter_best[1])
            return inter_best[0]
        if kn.NUMBA_ENABLED and w <= 32 and h <= 32:
            idx_tbl, frac_tbl = ki.projection_tables(w, h, 0)
            raw, _mode = kird.intra_code_block(
                orig, recon_v, coded_v, xloc, yloc, w, h, self._interim_arr,
                idx_tbl, frac_tbl, kt.basis(kt.DCT2, h), kt.basis(kt.DCT2, w),
                self.qstep, self.lam,
            )
            intra_cost = raw + self.lam * (1.0 + header)
            if inter_best is not None and inter_best[0] <= intra_cost:
                self._commit_interim_inter(x, y, w, h, inter_best[1])
                return inter_best[0]
            fctx.clear_motion(x, y, w, h)
            return intra_cost
        # numpy path (large blocks)
        refs0 = tools.gather_references(recon_v, coded_v, xloc, yloc, w, h, 0)
        preds = tools.predict_all_modes(self.interim_modes, refs0, w, h)
        tv = kt.basis(kt.DCT2, h)
        th = kt.basis(kt.DCT2, w)
        coeffs = np.matmul(np.matmul(tv, orig[None] - preds), th.T)
        dist, bits = krd.quant_rd_batch(coeffs, self.qstep)
        costs = dist + self.lam * (bits + 1.0 + header)
        mi = int(np.argmin(costs))
        intra_cost = float(costs[mi])
        if inter_best is not None and inter_best[0] <= intra_cost:
            self._commit_interim_inter(x, y, w, h, inter_best[1])
            return inter_best[0]
        pred = preds[mi]
        lv = kq.quantize_scalar(coeffs[mi].astype(np.float64).ravel(), self.qstep)
        tu = TuData(x, y, w, h, lv.reshape(h, w).astype(np.int32), bool(np.any(lv)))
        from .coding import reconstruct_tu

        blk = reconstruct_tu(self.fctx, tu, pred)
        fctx.recon[y : y + h, x : x + w] = blk
        fctx.coded[y : y + h, x : x + w] = True
        fctx.clear_motion(x, y, w, h)
        return intra_cost

    def _commit_interim_inter(self, x, y, w, h, skel):
        dec = self._finalize(x, y, w, h, 0, 0, skel, force_scalar=True)
        reconstruct_cu(self.fctx, dec)

    def code_leaf(self, x, y, w, h, qt_depth, mt_depth):
        """Full-strength leaf coding for the chosen tree: exact RD over
        all allowed intra modes, every enabled tool family, depquant.
        Returns (final model cost, CuDecision)."""
        fctx = self.fctx
        sl = (slice(y, y + h), slice(x, x + w))
        cands = []
        if fctx.is_inter:
            cands.append(self.eval_inter(x, y, w, h, interim=False))
        cands.append(self.eval_intra(x, y, w, h))
        cands.sort(key=lambda t: t[0])
        # stable sort keeps inter ahead of intra on exact ties
        cost, skel = cands[0]
        dec = self._finalize(x, y, w, h, qt_depth, mt_depth, skel)
        reconstruct_cu(fctx, dec)
        L = len(fctx.merge_list(x, y, w, h)) if fctx.is_inter else 0
        final_bits = self._decision_model_bits(dec, L)
        rec = fctx.recon[sl]
        final_cost = _sse(self.src[sl], rec) + self.lam * final_bits
        return final_cost, dec

    def _finalize(self, x, y, w, h, qt_depth, mt_depth, skel,
                  force_scalar=False) -> CuDecision:
        fctx = self.fctx
        cfg = fctx.cfg
        dec = CuDecision(x=x, y=y, w=w, h=h, qt_depth=qt_depth, mt_depth=mt_depth)
        orig = self.src_f32[y : y + h, x : x + w]
        if skel["kind"] == "intra":
            dec.pred_mode = "intra"
            dec.intra_mode = skel["mode"]
            dec.mrl_idx = skel["mrl"]
            dec.isp_mode = skel["isp"]
            dec.mts_idx = skel["mts"]
            if dec.isp_mode:
                self._finalize_isp(dec)
            else:
                refs = tools.gather_references(
                    *fctx.ctu_views(), x - fctx.ctu[0], y - fctx.ctu[1], w, h,
                    dec.mrl_idx,
                )
                pred = tools.intra_predict(dec.intra_mode, refs, w, h)
                t_h, t_v = MTS_COMBOS[dec.mts_idx]
                tu = self._final_tu(orig - pred, x, y, w, h, t_h, t_v,
                                    force_scalar=force_scalar)
                if not tu.cbf:
                    dec.mts_idx = 0
                    tu.type_h, tu.type_v = kt.DCT2, kt.DCT2
                dec.tus = [tu]
            dec.root_cbf = any(t.cbf for t in dec.tus)
            return dec
        dec.pred_mode = "inter"
        kind = skel["kind"]
        dec.merge = kind in ("skip", "merge")
        dec.skip = kind == "skip"
        if dec.merge:
            dec.merge_type = skel.get("merge_type", "regular")
            dec.merge_idx = skel.get("merge_idx", 0)
            if skel.get("mmvd"):
                dec.mmvd_flag = True
                dec.mmvd_params = skel["mmvd"]
            dec.ciip = bool(skel.get("ciip"))
            dec.geo_split = skel.get("geo_split", 0)
            dec.sub_mvs = skel.get("sub_mvs")
            if dec.merge_type in ("sbtmvp",):
                dec.mv0 = (0, 0)
            elif dec.merge_type == "affine":
                dec.mv0 = tuple(skel["mv"])
            elif dec.merge_type == "geo":
                dec.mv0 = tuple(skel["mv"])
            else:
                dec.mv0 = tuple(skel["mv"])
        else:
            dec.bi = bool(skel.get("bi"))
            dec.imv = bool(skel.get("imv"))
            dec.mv0 = tuple(skel["mv0"])
            dec.mvd0 = tuple(skel["mvd0"])
            if dec.bi:
                dec.mv1 = tuple(skel["mv1"])
                dec.mvd1 = tuple(skel["mvd1"])
                dec.bcw_idx = skel.get("bcw_idx")
        if dec.skip:
            dec.root_cbf = False
            dec.tus = []
            return dec
        from .coding import predict_inter_cu

        pred = predict_inter_cu(fctx, dec)
        res = orig - pred
        if skel.get("sbt"):
            idx, pos = skel["sbt"]
            ox, oy, sw, sh, t_h, t_v = sbt_types(idx, pos, w, h)
            tu = self._final_tu(res[oy : oy + sh, ox : ox + sw],
                                x + ox, y + oy, sw, sh, t_h, t_v,
                                force_scalar=force_scalar)
            if tu.cbf:
                dec.sbt_idx, dec.sbt_pos = idx, pos
                dec.tus = [tu]
                dec.root_cbf = True
                return dec
        tu = self._final_tu(res, x, y, w, h, force_scalar=force_scalar)
        if tu.cbf:
            dec.tus = [tu]
            dec.root_cbf = True
        else:
            dec.tus = []
            dec.root_cbf = False
            if dec.merge and not dec.ciip:
                # zero-residual merge collapses to skip
                dec.skip = True
        return dec

    def _finalize_isp(self, dec: CuDecision):
        fctx = self.fctx
        direction = "vertical" if dec.isp_mode == 1 else "horizontal"
        from .coding import reconstruct_tu

        dec.tus = []
        for ox, oy, sw, sh in tools.isp_partitions(dec.w, dec.h, direction):
            ax, ay = dec.x + ox, dec.y + oy
            refs = tools.gather_references(*fctx.ctu_views(),
                                           ax - fctx.ctu[0], ay - fctx.ctu[1],
                                           sw, sh, 0)
            pred = tools.intra_predict(dec.intra_mode, refs, sw, sh)
            orig = self.src_f32[ay : ay + sh, ax : ax + sw]
            tu = self._final_tu(orig - pred, ax, ay, sw, sh)
            dec.tus.append(tu)
            blk = reconstruct_tu(fctx, tu, pred)
            fctx.recon[ay : ay + sh, ax : ax + sw] = blk
            fctx.coded[ay : ay + sh, ax : ax + sw] = True
        # reconstruct_cu repeats this walk at commit; roll back so the
        # canonical commit path is the only writer
        sl = (slice(dec.y, dec.y + dec.h), slice(dec.x, dec.x + dec.w))
        fctx.coded[sl] = False

    def _decision_model_bits(self, dec: CuDecision, L: int) -> float:
        fctx = self.fctx
        bits = 0.0
        if fctx.is_inter:
            bits += 1.0  # skip flag
        if dec.pred_mode == "intra":
            if fctx.is_inter:
                bits += 1.0
            bits += self.mode_bits
            if dec.mrl_idx:
                bits += 2.0
            if dec.isp_mode:
                bits += 2.0
            if dec.mts_idx:
                bits += 3.0
            for tu in dec.tus:
                bits += 1.0 + self._tu_model_bits(tu)
            return bits
        if dec.skip:
            if dec.mmvd_flag:
                bits += 6.0
            elif dec.merge_type == "regular":
                bits += merge_idx_model_bits(dec.merge_idx, L)
            else:
                bits += 1.0
            return bits
        bits += 2.0  # pred_mode + merge_flag
        if dec.merge:
            if dec.mmvd_flag:
                bits += 6.0
            elif dec.merge_type == "regular":
                bits += merge_idx_model_bits(dec.merge_idx, L)
            elif dec.merge_type == "geo":
                bits += 2.0
            else:
                bits += 1.0
            if dec.ciip:
                bits += 1.0
        else:
            div = 4 if dec.imv else 2
            bits += (1.0 if fctx.has_ref1 else 0.0)
            bits += mvd_model_bits(dec.mvd0[0] // div) + mvd_model_bits(dec.mvd0[1] // div)
            if dec.imv:
                bits += 1.0
            if dec.bi:
                bits += mvd_model_bits(dec.mvd1[0] // div) + mvd_model_bits(dec.mvd1[1] // div)
                if dec.bcw_idx not in (None, 2):
                    bits += 3.0
        bits += 1.0  # root_cbf
        if dec.sbt_idx:
            bits += 3.0
        for tu in dec.tus:
            bits += self._tu_model_bits(tu)
        return bits

    # -- tree search -------------------------------------------------------------

    def search(self, x, y, w, h, qt_depth, mt_depth, can_qt, budget):
        """Exact branch-and-bound over no-split / QT / MTT candidates.
        Leaves region state committed to the winning subtree. Returns
        (cost, node) or (None, None) when the budget is exceeded."""
        fctx = self.fctx
        leaf_ok, qt_ok, kinds = node_options(fctx, x, y, w, h, mt_depth, can_qt)
        ew = min(w, fctx.w - x)
        eh = min(h, fctx.h - y)
        snap0 = self._save(x, y, min(w, ew), min(h, eh))
        n_opts = (1 if leaf_ok else 0) + (1 if qt_ok else 0) + len(kinds)
        best_cost = INF
        best_node = None
        best_state = None
        if leaf_ok:
            signal = self.lam * _split_signal_bits(leaf_ok, qt_ok, kinds, None)
            cost = self.interim_leaf(x, y, w, h) + signal
            if cost < budget:
                best_cost = cost
                best_node = ("leaf", None)
                best_state = self._save(x, y, ew, eh)
            self._restore(x, y, ew, eh, snap0)
        for kind in (("qt",) if qt_ok else ()) + kinds:
            sig_bits = _split_signal_bits(leaf_ok, qt_ok, kinds, kind)
            limit = min(budget, best_cost)
            acc = self.lam * sig_bits
            if acc >= limit:
                continue
            children = split_children(x, y, w, h, kind)
            nq = qt_depth + (1 if kind == "qt" else 0)
            nm = mt_depth + (0 if kind == "qt" else 1)
            nodes = []
            feasible = True
            for cx, cy, cw, ch in children:
                if cx >= fctx.w or cy >= fctx.h:
                    nodes.append(None)
                    continue
                c_cost, c_node = self.search(cx, cy, cw, ch, nq, nm,
                                             can_qt and kind == "qt", limit - acc)
                if c_node is None:
                    feasible = False
                    break
                acc += c_cost
                nodes.append(c_node)
                if acc >= limit:
                    feasible = False
                    break
            if feasible and acc < best_cost and acc < budget:
                best_cost = acc
                best_node = ("split", kind, nodes)
                best_state = self._save(x, y, ew, eh)
            self._restore(x, y, ew, eh, snap0)
        if best_node is None:
            return None, None
        self._restore(x, y, ew, eh, best_state)
        return best_cost, best_node

    def tree_cost(self, node, x, y, w, h, qt_depth=0, mt_depth=0, can_qt=True,
                  commit=False):
        """Cost of an arbitrary partition tree under the search metric
        (interim leaf coding + split signaling). Restores state unless
        commit=True."""
        fctx = self.fctx
        ew = min(w, fctx.w - x)
        eh = min(h, fctx.h - y)
        snap = None if commit else self._save(x, y, ew, eh)
        total = self._tree_cost_walk(node, x, y, w, h, qt_depth, mt_depth, can_qt)
        if snap is not None:
            self._restore(x, y, ew, eh, snap)
        return total

    def _tree_cost_walk(self, node, x, y, w, h, qt_depth, mt_depth, can_qt):
        fctx = self.fctx
        if x >= fctx.w or y >= fctx.h:
            return 0.0
        leaf_ok, qt_ok, kinds = node_options(fctx, x, y, w, h, mt_depth, can_qt)
        if node[0] == "leaf":
            if not leaf_ok:
                raise ValidationError(f"tree places a leaf at illegal {w}x{h}")
            sig = _split_signal_bits(leaf_ok, qt_ok, kinds, None)
            return self.interim_leaf(x, y, w, h) + self.lam * sig
        kind = node[1]
        if kind != "qt" and kind not in kinds:
            raise ValidationError(f"tree uses illegal split {kind} at {w}x{h}")
        total = self.lam * _split_signal_bits(leaf_ok, qt_ok, kinds, kind)
        nq = qt_depth + (1 if kind == "qt" else 0)
        nm = mt_depth + (0 if kind == "qt" else 1)
        for child_node, (cx, cy, cw, ch) in zip(node[2], split_children(x, y, w, h, kind)):
            if child_node is None or cx >= fctx.w or cy >= fctx.h:
                continue
            total += self._tree_cost_walk(child_node, cx, cy, cw, ch, nq, nm,
                                          can_qt and kind == "qt")
        return total

    def final_pass(self, node, x, y, w, h, qt_depth, mt_depth, can_qt):
        """Re-code the chosen tree's leaves at full strength (all
        allowed modes, every enabled tool family, depquant). Returns
        (cost, tree-with-decisions)."""
        fctx = self.fctx
        if x >= fctx.w or y >= fctx.h:
            return 0.0, None
        leaf_ok, qt_ok, kinds = node_options(fctx, x, y, w, h, mt_depth, can_qt)
        if node[0] == "leaf":
            sig = _split_signal_bits(leaf_ok, qt_ok, kinds, None)
            cost, dec = self.code_leaf(x, y, w, h, qt_depth, mt_depth)
            return cost + self.lam * sig, ("leaf", dec)
        kind = node[1]
        total = self.lam * _split_signal_bits(leaf_ok, qt_ok, kinds, kind)
        nq = qt_depth + (1 if kind == "qt" else 0)
        nm = mt_depth + (0 if kind == "qt" else 1)
        children = []
        for child_node, (cx, cy, cw, ch) in zip(node[2], split_children(x, y, w, h, kind)):
            if child_node is None or cx >= fctx.w or cy >= fctx.h:
                children.append(None)
                continue
            c_cost, c_node = self.final_pass(child_node, cx, cy, cw, ch, nq, nm,
                                             can_qt and kind == "qt")
            total += c_cost
            children.append(c_node)
        return total, ("split", kind, children)

    def reset_region(self, x, y, w, h):
        fctx = self.fctx
        ew = min(w, fctx.w - x)
        eh = min(h, fctx.h - y)
        fctx.coded[y : y + eh, x : x + ew] = False
        fctx.mv_valid[y // 4 : (y + eh) // 4, x // 4 : (x + ew) // 4] = False


def _split_signal_bits(leaf_ok, qt_ok, kinds, kind):
    """Model bits of the partition decision bins at one node; kind None
    means the no-split choice."""
    bits = 1.0 if leaf_ok and (qt_ok or kinds) else 0.0
    if kind is None:
        return bits
    if kind == "qt":
        return bits + (1.0 if kinds else 0.0)
    if qt_ok:
        bits += 1.0
    dirs = {k[1] for k in kinds}
    if "h" in dirs and "v" in dirs:
        bits += 1.0
    if len([k for k in kinds if k[1] == kind[1]]) == 2:
        bits += 1.0
    return bits


def collect_decisions(node, out):
    if node is None:
        return
    if node[0] == "leaf":
        out.append(node[1])
        return
    for child in node[2]:
        collect_decisions(child, out)


def encode_sequence(video: PackedVideo, cfg: CodecConfig) -> EncodeResult:
    """Encode a packed video: frame 0 intra, the rest inter with up to
    two past reconstructed references (low-delay)."""
    frames = video.frames
    t, h, w = frames.shape
    if h % 8 or w % 8 or h < 8 or w < 8:
        raise ValidationError(f"frame size {w}x{h} must be a multiple of 8")
    refs = []
    ref_mvs = []
    recon_out = np.zeros_like(frames)
    payloads = []
    records = CuRecordSet()
    total_j = 0.0
    est_bits = 0.0
    tool_stats = {
        "dq_trellis_tus": 0, "dbf_frames_applied": 0, "sao_ctus_applied": 0,
    }
    t_search = 0.0
    t_serialize = 0.0
    t0 = time.perf_counter()
    for fi in range(t):
        src = frames[fi]
        fctx = FrameCtx(cfg, h, w, fi, list(refs), list(ref_mvs))
        enc_f = FrameEncoder(fctx, src)
        ts = time.perf_counter()
        trees = []
        frame_j = 0.0
        for cy in range(0, h, cfg.ctu_size):
            for cx in range(0, w, cfg.ctu_size):
                fctx.ctu = (cx, cy)
                _cost, skeleton = enc_f.search(cx, cy, cfg.ctu_size, cfg.ctu_size,
                                               0, 0, True, INF)
                # re-code the chosen tree's leaves at full strength
                enc_f.reset_region(cx, cy, cfg.ctu_size, cfg.ctu_size)
                cost, node = enc_f.final_pass(skeleton, cx, cy, cfg.ctu_size,
                                              cfg.ctu_size, 0, 0, True)
                frame_j += cost
                trees.append(((cx, cy), node))
        decisions = []
        for _, node in trees:
            collect_decisions(node, decisions)
        # frame-level RD gate on DBF, per-CTU RD SAO
        lam = fctx.lam
        dbf_applied = False
        if cfg.dbf_enabled:
            filtered = kf.dbf_apply(fctx.recon, decisions, fctx.qstep)
            d0 = _sse(src, fctx.recon)
            d1 = _sse(src, filtered)
            if d1 + lam < d0:
                fctx.recon = filtered
                dbf_applied = True
                frame_j += d1 - d0 + lam
                tool_stats["dbf_frames_applied"] += 1
        sao_grid = None
        if cfg.sao_enabled:
            sao_grid = []
            for cy in range(0, h, cfg.ctu_size):
                row = []
                for cx in range(0, w, cfg.ctu_size):
                    sl = (slice(cy, min(cy + cfg.ctu_size, h)),
                          slice(cx, min(cx + cfg.ctu_size, w)))
                    params = tools.sao_search(fctx.recon[sl], src[sl], lam)
                    if params.mode != kf.SAO_OFF:
                        pre = _sse(src[sl], fctx.recon[sl])
                        fctx.recon[sl] = tools.sao_apply(fctx.recon[sl], params)
                        frame_j += _sse(src[sl], fctx.recon[sl]) - pre \
                            + lam * (tools.SAO_BAND_BITS if params.mode == kf.SAO_BAND
                                     else tools.SAO_EDGE_BITS)
                        tool_stats["sao_ctus_applied"] += 1
                    row.append(params)
                sao_grid.append(row)
        t_search += time.perf_counter() - ts
        ts = time.perf_counter()
        # serialization replay on a fresh context
        wctx = FrameCtx(cfg, h, w, fi, list(refs), list(ref_mvs))
        enc = BinEncoder()
        writer = SyntaxWriter(enc, wctx)
        for (cx, cy), node in trees:
            wctx.ctu = (cx, cy)
            writer.tree(node, cx, cy, cfg.ctu_size, cfg.ctu_size, 0, 0, True)
        pre_filter = wctx.recon
        if dbf_applied:
            pre_filter = kf.dbf_apply(pre_filter, decisions, fctx.qstep)
        if sao_grid is not None:
            for gy, cy in enumerate(range(0, h, cfg.ctu_size)):
                for gx, cx in enumerate(range(0, w, cfg.ctu_size)):
                    sl = (slice(cy, min(cy + cfg.ctu_size, h)),
                          slice(cx, min(cx + cfg.ctu_size, w)))
                    pre_filter[sl] = tools.sao_apply(pre_filter[sl], sao_grid[gy][gx])
        writer.filters(dbf_applied, sao_grid)
        payloads.append(enc.finish())
        est_bits += enc.estimated_bits()
        t_serialize += time.perf_counter() - ts
        if not np.array_equal(pre_filter, fctx.recon):
            raise AssertionError("serialization replay diverged from search recon")
        recon_out[fi] = fctx.recon
        for d in decisions:
            records.append(d.to_record(fi))
        total_j += frame_j
        tool_stats["dq_trellis_tus"] += enc_f.tool_stats["dq_trellis_tus"]
        refs = [fctx.recon.copy()] + refs[: (cfg.ref_frames - 1)]
        ref_mvs = [(fctx.mvx.copy(), fctx.mvy.copy(), fctx.mv_valid.copy())] \
            + ref_mvs[: (cfg.ref_frames - 1)]
    wall = time.perf_counter() - t0
    bs = Bitstream(cfg, h, w, tuple(payloads))
    timing = {"wall_s": wall, "search_s": t_search, "serialize_s": t_serialize}
    return EncodeResult(bs, records, recon_out, total_j, timing, tool_stats, est_bits)


def rdo_partition_search(fctx: FrameCtx, source, x, y, w, h):
    """Public search over one region: returns (cost, tree node)."""
    enc = FrameEncoder(fctx, source)
    return enc.search(x, y, w, h, 0, 0, True, INF)

"""Bit-exact decoder: parses the partition/CU syntax, reconstructs with
the same shared coding routines the encoder commits with, and applies
the signaled in-loop filters."""

from __future__ import annotations

import numpy as np

from ..errors import CorruptionError
from ..kernels import filters as kf
from ..packing import PackedVideo
from .. import tools
from .bitstream import Bitstream
from .coding import FrameCtx
from .entropy import BinDecoder
from .records import CuRecordSet
from .syntax import SyntaxReader


def decode(bitstream) -> PackedVideo:
    """Decode to the encoder's reconstruction, bit-exactly."""
    video, _records = decode_with_records(bitstream)
    return video


def decode_with_records(bitstream):
    if isinstance(bitstream, (bytes, bytearray)):
        bitstream = Bitstream.from_bytes(bytes(bitstream))
    cfg = bitstream.config
    h, w = bitstream.height, bitstream.width
    refs = []
    ref_mvs = []
    out = np.zeros((bitstream.frame_count, h, w), dtype=np.uint16)
    records = CuRecordSet()
    for fi, payload in enumerate(bitstream.payloads):
        fctx = FrameCtx(cfg, h, w, fi, list(refs), list(ref_mvs))
        dec = BinDecoder(payload)
        reader = SyntaxReader(dec, fctx)
        for cy in range(0, h, cfg.ctu_size):
            for cx in range(0, w, cfg.ctu_size):
                fctx.ctu = (cx, cy)
                reader.tree(cx, cy, cfg.ctu_size, cfg.ctu_size, 0, 0, True)
        dbf_applied, sao_grid = reader.filters()
        if dec.overran():
            raise CorruptionError(f"frame {fi}: payload truncated")
        if dbf_applied:
            fctx.recon = kf.dbf_apply(fctx.recon, reader.decisions, fctx.qstep)
        if sao_grid is not None:
            for gy, cy in enumerate(range(0, h, cfg.ctu_size)):
                for gx, cx in enumerate(range(0, w, cfg.ctu_size)):
                    sl = (slice(cy, min(cy + cfg.ctu_size, h)),
                          slice(cx, min(cx + cfg.ctu_size, w)))
                    fctx.recon[sl] = tools.sao_apply(fctx.recon[sl], sao_grid[gy][gx])
        out[fi] = fctx.recon
        for d in reader.decisions:
            records.append(d.to_record(fi))
        refs = [fctx.recon.copy()] + refs[: (cfg.ref_frames - 1)]
        ref_mvs = [(fctx.mvx.copy(), fctx.mvy.copy(), fctx.mv_valid.copy())] \
            + ref_mvs[: (cfg.ref_frames - 1)]
    return PackedVideo(out), records

"""Python-side wrappers over the arithmetic coder kernels: buffer
management, context allocation, and the functional entropy_code
operation used by tests."""

from __future__ import annotations

import numpy as np

from ..errors import CorruptionError
from ..kernels import rangecoder as rc

# context ids; the set and order are part of bitstream version 1
CTX_NAMES = (
    "split_flag0", "split_flag1", "split_flag2",
    "qt_flag", "mtt_dir", "mtt_type",
    "skip_flag", "pred_mode",
    "mrl0", "mrl1", "isp0", "isp1",
    "merge_flag", "merge_idx0", "merge_idx1",
    "mmvd_flag", "mmvd_base",
    "sbtmvp_flag", "affine_flag", "geo_flag", "geo_split",
    "ciip_flag", "imv_flag", "bi_flag",
    "bcw_flag", "bcw_idx0", "bcw_idx1",
    "mvd_gt0", "mvd_gt1",
    "root_cbf", "cbf_y",
    "mts_flag", "mts_idx0", "mts_idx1",
    "sbt_flag", "sbt_idx", "sbt_pos",
    "dq_mode",
    "sig", "gt1",
    "last_prefix",
    "dbf_frame", "sao_on", "sao_band",
)
CTX = {name: i for i, name in enumerate(CTX_NAMES)}
NUM_CTX = len(CTX_NAMES)


class BinEncoder:
    """Adaptive binary arithmetic encoder over a growable byte buffer."""

    def __init__(self, num_ctx: int = NUM_CTX, capacity: int = 1 << 12):
        self.state = rc.new_state()
        self.est = np.zeros(1, dtype=np.float64)
        self.buf = np.zeros(capacity, dtype=np.uint8)
        self.ctxs = rc.new_contexts(num_ctx)

    def _reserve(self, nbits: int):
        # worst case: every bin emits 1 bit plus all pending bits
        need = int(self.state[rc.BITPOS] + self.state[rc.PENDING] + nbits + 64)
        if need > self.buf.shape[0] * 8:
            grown = np.zeros(max(self.buf.shape[0] * 2, (need >> 3) + 64), dtype=np.uint8)
            grown[: self.buf.shape[0]] = self.buf
            self.buf = grown

    def bin(self, ctx: int, bit: int):
        self._reserve(2)
        rc.enc_bin(self.state, self.est, self.buf, self.ctxs, ctx, int(bit))

    def bypass(self, bit: int):
        self._reserve(2)
        rc.enc_bypass(self.state, self.est, self.buf, int(bit))

    def bypass_bits(self, value: int, nbits: int):
        self._reserve(nbits + 2)
        rc.enc_bypass_bits(self.state, self.est, self.buf, int(value), int(nbits))

    def eg0(self, value: int):
        self._reserve(2 * value.bit_length() + 8)
        rc.enc_eg0(self.state, self.est, self.buf, int(value))

    def bit_count(self) -> int:
        return int(self.state[rc.BITPOS])

    def estimated_bits(self) -> float:
        return float(self.est[0])

    def finish(self) -> bytes:
        self._reserve(16)
        rc.enc_finish(self.state, self.est, self.buf)
        return self.buf[: self.bit_count() // 8].tobytes()


class BinDecoder:
    def __init__(self, payload: bytes, num_ctx: int = NUM_CTX):
        self.buf = np.frombuffer(payload, dtype=np.uint8)
        self.state = rc.new_state()
        self.ctxs = rc.new_contexts(num_ctx)
        rc.dec_init(self.state, self.buf)

    def bin(self, ctx: int) -> int:
        return int(rc.dec_bin(self.state, self.buf, self.ctxs, ctx))

    def bypass(self) -> int:
        return int(rc.dec_bypass(self.state, self.buf))

    def bypass_bits(self, nbits: int) -> int:
        return int(rc.dec_bypass_bits(self.state, self.buf, nbits))

    def eg0(self) -> int:
        v = int(rc.dec_eg0(self.state, self.buf))
        if v < 0:
            raise CorruptionError("exp-golomb prefix overran the payload")
        return v

    def overran(self) -> bool:
        """True when more bits were consumed than the payload holds
        (plus the pipeline margin), i.e. the stream was truncated."""
        return int(self.state[rc.NBITS]) > self.buf.shape[0] * 8 + 64


def entropy_code(symbols, num_contexts=None, direction="encode", payload=None,
                 layout=None):
    """Functional adaptive-range-coding surface.

    encode: symbols is a sequence of (ctx, bit) with ctx -1 meaning a
    bypass bin; returns (payload bytes, estimated_bits).
    decode: layout is the sequence of ctx ids to read (same -1 rule);
    returns the decoded bit list.
    """
    if direction == "encode":
        nctx = num_contexts or (max((c for c, _ in symbols if c >= 0), default=0) + 1)
        enc = BinEncoder(num_ctx=max(nctx, 1), capacity=len(symbols) // 4 + 64)
        for ctx, bit in symbols:
            if ctx < 0:
                enc.bypass(bit)
            else:
                enc.bin(ctx, bit)
        est = enc.estimated_bits()
        return enc.finish(), est
    if direction != "decode":
        raise ValueError(f"bad direction {direction!r}")
    dec = BinDecoder(payload, num_ctx=max(num_contexts or 1, 1))
    out = []
    for ctx in layout:
        out.append(dec.bypass() if ctx < 0 else dec.bin(ctx))
    if dec.overran():
        raise CorruptionError("entropy payload truncated")
    return out

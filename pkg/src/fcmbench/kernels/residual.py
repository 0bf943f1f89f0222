"""Batch entropy coding of one TU's quantized levels (hot path: one
call per coded block instead of one per bin)."""

from . import jit
from .rangecoder import (
    dec_bin,
    dec_bypass,
    dec_eg0,
    enc_bin,
    enc_bypass,
    enc_eg0,
)


@jit
def enc_tu_levels(st, est, buf, ctxs, flat, last, sig_ctx, gt1_ctx):
    """flat: int32 scanned levels with flat[last] != 0."""
    for i in range(last + 1):
        lv = flat[i]
        a = lv if lv >= 0 else -lv
        if i < last:
            enc_bin(st, est, buf, ctxs, sig_ctx, 0 if a == 0 else 1)
        if a == 0:
            continue
        enc_bin(st, est, buf, ctxs, gt1_ctx, 1 if a > 1 else 0)
        if a > 1:
            enc_eg0(st, est, buf, a - 2)
        enc_bypass(st, est, buf, 0 if lv > 0 else 1)


@jit
def dec_tu_levels(st, buf, ctxs, flat, last, sig_ctx, gt1_ctx):
    """Fills flat[0..last]; returns 0, or -1 on a malformed stream."""
    for i in range(last + 1):
        if i < last:
            sig = dec_bin(st, buf, ctxs, sig_ctx)
        else:
            sig = 1
        if sig == 0:
            flat[i] = 0
            continue
        a = 1
        if dec_bin(st, buf, ctxs, gt1_ctx):
            rem = dec_eg0(st, buf)
            if rem < 0:
                return -1
            a = 2 + rem
        flat[i] = -a if dec_bypass(st, buf) else a
    return 0

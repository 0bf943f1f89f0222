"""Bitstream container (version 1).

    magic "FCB1" | version u16 | digest 8B | qp u8 | frame count u32
    | H u32 | W u32 | config blob len u16 | config blob
    | per frame: payload len u32, payload bytes

The digest is sha256 over (config blob, qp, frame count, H, W), so any
header tampering is detected; payload truncation trips the per-frame
length checks.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from ..config import CANONICAL_SIZE, CodecConfig
from ..errors import CorruptionError, FormatError

FCB_MAGIC = b"FCB1"
FCB_VERSION = 1


def _digest(cfg_blob: bytes, qp: int, frames: int, h: int, w: int) -> bytes:
    return hashlib.sha256(
        cfg_blob + struct.pack("<BIII", qp, frames, h, w)
    ).digest()[:8]


@dataclass(frozen=True)
class Bitstream:
    config: CodecConfig
    height: int
    width: int
    payloads: tuple  # per-frame entropy-coded bytes

    @property
    def frame_count(self) -> int:
        return len(self.payloads)

    @property
    def size_bits(self) -> int:
        return 8 * len(self.to_bytes())

    def to_bytes(self) -> bytes:
        blob = self.config.canonical_bytes()
        head = bytearray()
        head += FCB_MAGIC
        head += struct.pack("<H", FCB_VERSION)
        head += _digest(blob, self.config.qp, self.frame_count, self.height, self.width)
        head += struct.pack("<BIII", self.config.qp, self.frame_count,
                            self.height, self.width)
        head += struct.pack("<H", len(blob))
        head += blob
        for p in self.payloads:
            head += struct.pack("<I", len(p))
            head += p
        return bytes(head)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < 6 or data[:4] != FCB_MAGIC:
            raise FormatError("not an FCB bitstream (bad magic)")
        (version,) = struct.unpack_from("<H", data, 4)
        if version != FCB_VERSION:
            raise FormatError(f"unsupported bitstream version {version}")
        off = 6
        stored_digest = data[off : off + 8]
        off += 8
        if len(data) < off + 13 + 2:
            raise CorruptionError("truncated bitstream header")
        qp, frames, h, w = struct.unpack_from("<BIII", data, off)
        off += 13
        (blob_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if blob_len != CANONICAL_SIZE or len(data) < off + blob_len:
            raise CorruptionError("truncated or malformed config blob")
        blob = data[off : off + blob_len]
        off += blob_len
        if _digest(blob, qp, frames, h, w) != stored_digest:
            raise CorruptionError("header digest mismatch")
        cfg = CodecConfig.from_canonical_bytes(blob)
        if cfg.qp != qp:
            raise CorruptionError("header digest mismatch (qp)")
        payloads = []
        for _ in range(frames):
            if len(data) < off + 4:
                raise CorruptionError("truncated frame table")
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            if len(data) < off + n:
                raise CorruptionError("truncated frame payload")
            payloads.append(data[off : off + n])
            off += n
        if off != len(data):
            raise CorruptionError(f"{len(data) - off} trailing bytes")
        return cls(cfg, h, w, tuple(payloads))

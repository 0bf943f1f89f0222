"""Codec configuration: the complete tool-flag vector that maps
one-to-one onto the ablation axes, plus motion vector bookkeeping."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, fields, replace

from .errors import ValidationError

TOOL_FLAGS = (
    "mrl_enabled",
    "isp_enabled",
    "affine_enabled",
    "sbtmvp_enabled",
    "mts_enabled",
    "sbt_enabled",
    "depquant_enabled",
    "bcw_enabled",
    "geo_enabled",
    "ciip_enabled",
    "imv_enabled",
    "mmvd_enabled",
    "dbf_enabled",
    "sao_enabled",
)

ALL_INTRA_MODES = frozenset(range(67))
BCW_WEIGHTS = (0.25, 0.375, 0.5, 0.625, 0.75)
INTEGER, HALF = "integer", "half"


@dataclass(frozen=True)
class MotionVector:
    """Signed displacement in quarter-sample units."""

    x: int = 0
    y: int = 0
    precision: str = HALF

    def __post_init__(self):
        if self.precision not in (INTEGER, HALF):
            raise ValidationError(f"bad MV precision {self.precision!r}")

    def length_px(self) -> int:
        """max-norm length in integer pixels, rounded."""
        return int(round(max(abs(self.x), abs(self.y)) / 4.0))


@dataclass(frozen=True)
class CodecConfig:
    qp: int = 32
    ctu_size: int = 64
    allowed_intra_modes: frozenset = ALL_INTRA_MODES
    max_mtt_depth: int = 1
    mrl_enabled: bool = True
    isp_enabled: bool = True
    affine_enabled: bool = True
    sbtmvp_enabled: bool = True
    mts_enabled: bool = True
    sbt_enabled: bool = True
    depquant_enabled: bool = True
    bcw_enabled: bool = True
    geo_enabled: bool = True
    ciip_enabled: bool = True
    imv_enabled: bool = True
    mmvd_enabled: bool = True
    dbf_enabled: bool = True
    sao_enabled: bool = True
    search_range: int = 64
    ref_frames: int = 2

    def __post_init__(self):
        modes = frozenset(self.allowed_intra_modes)
        object.__setattr__(self, "allowed_intra_modes", modes)
        if not (0 <= self.qp <= 63):
            raise ValidationError(f"qp {self.qp} out of range 0..63")
        if self.ctu_size not in (32, 64, 128):
            raise ValidationError(f"ctu_size must be 32/64/128, got {self.ctu_size}")
        if not modes <= ALL_INTRA_MODES:
            raise ValidationError("intra modes must lie in 0..66")
        if not {0, 1} <= modes:
            raise ValidationError("allowed_intra_modes must contain Planar (0) and DC (1)")
        if not (0 <= self.max_mtt_depth <= 3):
            raise ValidationError(f"max_mtt_depth {self.max_mtt_depth} out of range 0..3")
        if self.search_range < 1:
            raise ValidationError("search_range must be >= 1")
        if self.ref_frames not in (1, 2):
            raise ValidationError("ref_frames must be 1 or 2")

    def with_overrides(self, **deltas) -> "CodecConfig":
        if "allowed_intra_modes" in deltas:
            deltas["allowed_intra_modes"] = frozenset(deltas["allowed_intra_modes"])
        return replace(self, **deltas)

    def flags_word(self) -> int:
        word = 0
        for i, name in enumerate(TOOL_FLAGS):
            if getattr(self, name):
                word |= 1 << i
        return word

    def canonical_bytes(self) -> bytes:
        mode_bits = 0
        for m in self.allowed_intra_modes:
            mode_bits |= 1 << m
        return struct.pack(
            "<BBBHBH9s",
            self.qp,
            self.ctu_size // 32,  # 1, 2, 4
            self.max_mtt_depth,
            self.search_range,
            self.ref_frames,
            self.flags_word(),
            mode_bits.to_bytes(9, "little"),
        )

    @classmethod
    def from_canonical_bytes(cls, blob: bytes) -> "CodecConfig":
        qp, ctu, mtt, sr, refs, flags, mode_bytes = struct.unpack("<BBBHBH9s", blob)
        mode_bits = int.from_bytes(mode_bytes, "little")
        modes = frozenset(m for m in range(67) if mode_bits & (1 << m))
        kw = {name: bool(flags & (1 << i)) for i, name in enumerate(TOOL_FLAGS)}
        return cls(
            qp=qp, ctu_size=ctu * 32, allowed_intra_modes=modes, max_mtt_depth=mtt,
            search_range=sr, ref_frames=refs, **kw,
        )

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_bytes()).digest()[:8]

    def describe(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = sorted(v) if isinstance(v, frozenset) else v
        return out


CANONICAL_SIZE = struct.calcsize("<BBBHBH9s")


def rd_lambda(qp: int) -> float:
    """RDO lagrangian: 0.57 * 2^((qp - 12) / 3)."""
    return 0.57 * 2.0 ** ((qp - 12) / 3.0)


def clamp_mv(x: int, y: int, search_range: int):
    """Clamp quarter-unit components to the +-4*search_range bound."""
    b = 4 * search_range
    return max(-b, min(b, x)), max(-b, min(b, y))

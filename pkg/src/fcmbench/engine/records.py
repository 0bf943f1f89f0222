"""Per-coding-unit decision records, the substrate of all mode
statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

from ..errors import ValidationError

MERGE_TYPES = ("regular", "sbtmvp", "affine", "geo")
PRED_MODES = ("intra", "inter")

# native CSV column order; `mv` flattens to mv_x/mv_y quarter units and
# the derived depth column is written for external tooling
CSV_FIELDS = (
    "frame", "x", "y", "width", "height",
    "depth", "qt_depth", "mt_depth",
    "pred_mode", "intra_mode", "mrl_idx", "isp_mode",
    "merge_flag", "skip_flag", "merge_type", "merge_idx",
    "mmvd_flag", "imv_flag", "bcw_idx", "ciip_flag",
    "mv_x", "mv_y", "sbt_idx", "sbt_pos", "mts_idx",
    "root_cbf", "cbf_y",
)

MANDATORY_FIELDS = ("frame", "x", "y", "width", "height")


@dataclass(frozen=True)
class CuRecord:
    frame: int
    x: int
    y: int
    width: int
    height: int
    qt_depth: int = 0
    mt_depth: int = 0
    pred_mode: str = "intra"
    intra_mode: Optional[int] = None
    mrl_idx: int = 0
    isp_mode: int = 0
    merge_flag: bool = False
    skip_flag: bool = False
    merge_type: Optional[str] = None
    merge_idx: Optional[int] = None
    mmvd_flag: bool = False
    imv_flag: bool = False
    bcw_idx: Optional[int] = None
    ciip_flag: bool = False
    mv: Optional[Tuple[int, int]] = None
    sbt_idx: int = 0
    sbt_pos: int = 0
    mts_idx: int = 0
    root_cbf: bool = False
    cbf_y: bool = False

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError("CU must have positive size")
        if self.pred_mode not in PRED_MODES:
            raise ValidationError(f"bad pred_mode {self.pred_mode!r}")
        if self.merge_type is not None and self.merge_type not in MERGE_TYPES:
            raise ValidationError(f"bad merge_type {self.merge_type!r}")
        if self.pred_mode == "inter" and self.intra_mode is not None and not self.ciip_flag:
            raise ValidationError("inter CU carries intra_mode without ciip")
        if self.pred_mode == "intra" and (self.mv is not None or self.merge_flag):
            raise ValidationError("intra CU carries inter fields")
        if self.skip_flag and (not self.merge_flag or self.root_cbf):
            raise ValidationError("skip implies merge and no residual")

    @property
    def depth(self) -> int:
        return self.qt_depth + self.mt_depth

    @property
    def area(self) -> int:
        return self.width * self.height


class CuRecordSet:
    """Ordered collection of CuRecords with frame-oriented helpers."""

    def __init__(self, records=()):
        self.records = list(records)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, rec: CuRecord):
        self.records.append(rec)

    def frames(self):
        return sorted({r.frame for r in self.records})

    def for_frame(self, frame: int):
        return [r for r in self.records if r.frame == frame]

    def validate_coverage(self, height: int, width: int):
        """Every frame's CUs tile the frame exactly once."""
        import numpy as np

        for f in self.frames():
            cover = np.zeros((height, width), dtype=np.int32)
            for r in self.for_frame(f):
                cover[r.y : r.y + r.height, r.x : r.x + r.width] += 1
            if not (cover == 1).all():
                raise ValidationError(f"frame {f}: CU coverage is not an exact tiling")

    def __eq__(self, other):
        return isinstance(other, CuRecordSet) and self.records == other.records


_BOOL_FIELDS = (
    "merge_flag", "skip_flag", "mmvd_flag", "imv_flag", "ciip_flag",
    "root_cbf", "cbf_y",
)


def record_to_row(rec: CuRecord) -> dict:
    row = {}
    for name in CSV_FIELDS:
        if name == "mv_x":
            row[name] = "" if rec.mv is None else str(rec.mv[0])
        elif name == "mv_y":
            row[name] = "" if rec.mv is None else str(rec.mv[1])
        elif name == "depth":
            row[name] = str(rec.depth)
        else:
            v = getattr(rec, name)
            if v is None:
                row[name] = ""
            elif isinstance(v, bool):
                row[name] = "1" if v else "0"
            else:
                row[name] = str(v)
    return row


def row_to_record(row: dict) -> CuRecord:
    kw = {}
    mvx = row.get("mv_x", "")
    mvy = row.get("mv_y", "")
    if str(mvx or "").strip() != "" and str(mvy or "").strip() != "":
        kw["mv"] = (int(mvx), int(mvy))
    for name in CSV_FIELDS:
        if name in ("mv_x", "mv_y", "depth"):
            continue  # depth is derived
        raw = row.get(name, "")
        raw = "" if raw is None else str(raw).strip()
        if raw == "":
            continue
        if name in ("pred_mode", "merge_type"):
            kw[name] = raw
        elif name in _BOOL_FIELDS:
            kw[name] = raw not in ("0", "false", "False")
        else:
            kw[name] = int(raw)
    return CuRecord(**kw)

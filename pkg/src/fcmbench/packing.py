"""Tiling of feature channels into 10-bit single-channel frames and the
exact inverse.

Every channel of every tensor becomes one tile: channels are rastered
row-major into a near-square grid (ceil(sqrt(C)) columns) per tensor,
tensor grids are stacked vertically, and the frame is padded with the
mid-range value to the next multiple of the CTU size. Quantization is
per tensor over all frames: q = round(1023 * (v - min) / (max - min)).

PKV container (little-endian):

    magic "PKV1" | version u16 | T_f u32 | H_f u32 | W_f u32 | count u16
    | per tensor: id u16, T u32, C u32, H u32, W u32,
                  min f64, max f64, grid_cols u32, grid_rows u32,
                  C x (origin_y u32, origin_x u32)
    | per frame: H_f*W_f u16 samples, row-major
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError, FormatError, ValidationError
from .tensors import FeatureTensor, FeatureTensorSet

PKV_MAGIC = b"PKV1"
PKV_VERSION = 1
BIT_DEPTH = 10
MAX_SAMPLE = (1 << BIT_DEPTH) - 1
PAD_VALUE = 1 << (BIT_DEPTH - 1)
DEFAULT_CTU = 64


@dataclass(frozen=True)
class TensorLayout:
    """Tile geometry and quantization bounds for one tensor."""

    tensor_id: int
    frames: int
    channels: int
    height: int
    width: int
    vmin: float
    vmax: float
    grid_cols: int
    grid_rows: int
    origins: tuple  # per channel, (y, x) in frame pixels


@dataclass(frozen=True)
class PackInfo:
    frame_count: int
    frame_height: int
    frame_width: int
    layouts: tuple

    def __post_init__(self):
        seen = np.zeros((self.frame_height, self.frame_width), dtype=bool)
        for lay in self.layouts:
            if lay.vmin > lay.vmax:
                raise ValidationError(f"tensor {lay.tensor_id}: min > max")
            if len(lay.origins) != lay.channels:
                raise ValidationError(f"tensor {lay.tensor_id}: origin count mismatch")
            for y, x in lay.origins:
                if y + lay.height > self.frame_height or x + lay.width > self.frame_width:
                    raise ValidationError(f"tensor {lay.tensor_id}: tile exits frame")
                region = seen[y : y + lay.height, x : x + lay.width]
                if region.any():
                    raise ValidationError(f"tensor {lay.tensor_id}: overlapping tiles")
                region[:] = True


@dataclass(frozen=True)
class PackedVideo:
    """T_f frames of unsigned 10-bit samples in uint16 containers."""

    frames: np.ndarray  # uint16, shape (T, H, W)
    bit_depth: int = BIT_DEPTH

    def __post_init__(self):
        arr = np.ascontiguousarray(self.frames, dtype=np.uint16)
        object.__setattr__(self, "frames", arr)
        if arr.ndim != 3:
            raise ValidationError(f"expected (T, H, W) frames, got shape {arr.shape}")
        if arr.size and arr.max() > MAX_SAMPLE:
            raise ValidationError("sample exceeds 10-bit range")

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


def _layout_tensors(tset: FeatureTensorSet, ctu_size: int):
    layouts = []
    y_cursor = 0
    width = 0
    for t in tset:
        cols = math.isqrt(t.channels)
        if cols * cols < t.channels:
            cols += 1
        rows = -(-t.channels // cols)
        vmin = float(t.data.min())
        vmax = float(t.data.max())
        origins = tuple(
            (y_cursor + (c // cols) * t.height, (c % cols) * t.width)
            for c in range(t.channels)
        )
        layouts.append(
            TensorLayout(
                t.tensor_id, t.frames, t.channels, t.height, t.width,
                vmin, vmax, cols, rows, origins,
            )
        )
        y_cursor += rows * t.height
        width = max(width, cols * t.width)
    pad = ctu_size
    frame_h = -(-y_cursor // pad) * pad
    frame_w = -(-width // pad) * pad
    return layouts, frame_h, frame_w


def pack(tset: FeatureTensorSet, ctu_size: int = DEFAULT_CTU):
    """Tile and quantize a tensor set into a 10-bit packed video."""
    layouts, frame_h, frame_w = _layout_tensors(tset, ctu_size)
    t_f = tset.frames
    frames = np.full((t_f, frame_h, frame_w), PAD_VALUE, dtype=np.uint16)
    for tensor, lay in zip(tset, layouts):
        span = lay.vmax - lay.vmin
        if span > 0:
            q = np.rint(
                (tensor.data.astype(np.float64) - lay.vmin) * (MAX_SAMPLE / span)
            ).astype(np.uint16)
        else:
            q = np.zeros(tensor.data.shape, dtype=np.uint16)
        for c, (y, x) in enumerate(lay.origins):
            frames[:, y : y + lay.height, x : x + lay.width] = q[:, c]
    info = PackInfo(t_f, frame_h, frame_w, tuple(layouts))
    return PackedVideo(frames), info


def unpack(video: PackedVideo, info: PackInfo) -> FeatureTensorSet:
    """Invert pack(): extract tiles and dequantize with the stored bounds."""
    if (
        video.frame_count != info.frame_count
        or video.height != info.frame_height
        or video.width != info.frame_width
    ):
        raise ValidationError(
            f"geometry mismatch: video {video.frames.shape} vs info "
            f"({info.frame_count}, {info.frame_height}, {info.frame_width})"
        )
    tensors = []
    for lay in info.layouts:
        out = np.empty((lay.frames, lay.channels, lay.height, lay.width), dtype=np.float32)
        scale = (lay.vmax - lay.vmin) / MAX_SAMPLE
        for c, (y, x) in enumerate(lay.origins):
            q = video.frames[:, y : y + lay.height, x : x + lay.width].astype(np.float64)
            out[:, c] = (lay.vmin + q * scale).astype(np.float32)
        tensors.append(FeatureTensor(lay.tensor_id, out))
    return FeatureTensorSet(tuple(tensors), source_tag="unpacked")


def save_packed(video: PackedVideo, info: PackInfo, path) -> None:
    with open(path, "wb") as fh:
        fh.write(PKV_MAGIC)
        fh.write(
            struct.pack(
                "<HIII H",
                PKV_VERSION,
                info.frame_count,
                info.frame_height,
                info.frame_width,
                len(info.layouts),
            )
        )
        for lay in info.layouts:
            fh.write(
                struct.pack(
                    "<HIIII ddII",
                    lay.tensor_id, lay.frames, lay.channels, lay.height, lay.width,
                    lay.vmin, lay.vmax, lay.grid_cols, lay.grid_rows,
                )
            )
            for y, x in lay.origins:
                fh.write(struct.pack("<II", y, x))
        fh.write(video.frames.astype("<u2", copy=False).tobytes())


def load_packed(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != PKV_MAGIC:
        raise FormatError(f"{path}: not a PKV container (bad magic)")
    try:
        version, t_f, h_f, w_f, count = struct.unpack_from("<HIIIH", blob, 4)
    except struct.error as exc:
        raise CorruptionError(f"{path}: truncated header") from exc
    if version != PKV_VERSION:
        raise FormatError(f"{path}: unsupported PKV version {version}")
    off = 4 + 16
    layouts = []
    for _ in range(count):
        if off + 42 > len(blob):
            raise CorruptionError(f"{path}: truncated layout table")
        tid, t, c, h, w, vmin, vmax, cols, rows = struct.unpack_from("<HIIIIddII", blob, off)
        off += 42
        if off + 8 * c > len(blob):
            raise CorruptionError(f"{path}: truncated origin table for tensor {tid}")
        coords = struct.unpack_from(f"<{2 * c}I", blob, off)
        off += 8 * c
        origins = tuple((coords[2 * i], coords[2 * i + 1]) for i in range(c))
        layouts.append(TensorLayout(tid, t, c, h, w, vmin, vmax, cols, rows, origins))
    n = t_f * h_f * w_f
    if off + 2 * n > len(blob):
        raise CorruptionError(f"{path}: truncated sample payload")
    frames = np.frombuffer(blob, dtype="<u2", count=n, offset=off).reshape(t_f, h_f, w_f)
    info = PackInfo(t_f, h_f, w_f, tuple(layouts))
    return PackedVideo(frames.copy()), info

"""Feature tensor data model, FCT container I/O, synthetic generators,
and feature-domain distortion.

A feature tensor set is an ordered list of 4-D float32 tensors
(frames x channels x height x width) that all share the same frame
count. The binary FCT container stores them little-endian:

    magic "FCT1" | version u16 | count u16
    | per tensor: id u16, T u32, C u32, H u32, W u32
    | per tensor: T*C*H*W float32 payload, row-major (T, C, H, W)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CorruptionError, FormatError, ValidationError

FCT_MAGIC = b"FCT1"
FCT_VERSION = 1

FPN_CHANNELS = 256
DARKNET_SHAPES = ((256, 76, 136), (512, 38, 68), (1024, 19, 34))
DARKNET_REDUCED_SHAPES = ((128, 76, 136), (256, 38, 68), (512, 19, 34))
CUSTOM_CHANNELS = 16

SYNTH_FAMILIES = ("fpn", "darknet", "darknet_reduced", "custom")
NOISE_MODELS = ("gaussian_blobs", "sparse_relu", "uniform")


@dataclass(frozen=True)
class FeatureTensor:
    """One 4-D feature tensor with its 1-based index in the set."""

    tensor_id: int
    data: np.ndarray  # float32, shape (T, C, H, W)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", arr)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise ValidationError(
                f"tensor {self.tensor_id}: expected 4-D non-empty data, got shape {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise ValidationError(f"tensor {self.tensor_id}: non-finite values")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class FeatureTensorSet:
    """Ordered set of feature tensors sharing a frame count."""

    tensors: tuple
    source_tag: str = ""

    def __post_init__(self):
        tensors = tuple(self.tensors)
        object.__setattr__(self, "tensors", tensors)
        if not tensors:
            raise ValidationError("tensor set must contain at least one tensor")
        frames = tensors[0].frames
        for n, t in enumerate(tensors, start=1):
            if t.tensor_id != n:
                raise ValidationError(
                    f"tensor ids must be 1..N strictly increasing, got {t.tensor_id} at position {n}"
                )
            if t.frames != frames:
                raise ValidationError(
                    f"tensor {n}: frame count {t.frames} != {frames} of tensor 1"
                )

    def __len__(self) -> int:
        return len(self.tensors)

    def __iter__(self):
        return iter(self.tensors)

    @property
    def frames(self) -> int:
        return self.tensors[0].frames

    def element_count(self) -> int:
        return int(sum(t.data.size for t in self.tensors))


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a seeded synthetic tensor set.

    fpn follows the pyramid shape rule H_n = ceil(H_r / 2^(n+1)) (and the
    same for W) with 256 channels for n = 1..4; darknet families use their
    fixed backbone shapes and ignore base_height/base_width; custom emits
    one 16-channel tensor at base_height x base_width.
    """

    family: str
    base_height: int = 64
    base_width: int = 64
    frames: int = 1
    noise_model: str = "gaussian_blobs"
    seed: int = 0

    def __post_init__(self):
        if self.family not in SYNTH_FAMILIES:
            raise ConfigError(f"unknown synth family: {self.family!r}")
        if self.noise_model not in NOISE_MODELS:
            raise ConfigError(f"unknown noise model: {self.noise_model!r}")
        if self.frames < 1 or self.base_height < 1 or self.base_width < 1:
            raise ConfigError("frames and base dimensions must be >= 1")


@dataclass(frozen=True)
class DistortionReport:
    """Per-tensor and element-weighted aggregate MSE between two sets."""

    per_tensor_mse: tuple
    aggregate_mse: float
    element_counts: tuple = field(default=())


def save_tensor_set(tset: FeatureTensorSet, path) -> None:
    """Write the set to an FCT container. Deterministic byte layout."""
    header = bytearray()
    header += FCT_MAGIC
    header += struct.pack("<HH", FCT_VERSION, len(tset))
    for t in tset:
        header += struct.pack("<HIIII", t.tensor_id, *t.shape)
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        for t in tset:
            fh.write(t.data.astype("<f4", copy=False).tobytes())


def load_tensor_set(path) -> FeatureTensorSet:
    """Read an FCT container, validating structure and payload."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != FCT_MAGIC:
        raise FormatError(f"{path}: not an FCT container (bad magic)")
    version, count = struct.unpack_from("<HH", blob, 4)
    if version != FCT_VERSION:
        raise FormatError(f"{path}: unsupported FCT version {version}")
    if count < 1:
        raise FormatError(f"{path}: empty tensor set")
    off = 8
    shapes = []
    for _ in range(count):
        if off + 18 > len(blob):
            raise CorruptionError(f"{path}: truncated header")
        tid, t, c, h, w = struct.unpack_from("<HIIII", blob, off)
        off += 18
        shapes.append((tid, t, c, h, w))
    tensors = []
    for tid, t, c, h, w in shapes:
        n = t * c * h * w
        end = off + 4 * n
        if end > len(blob):
            raise CorruptionError(f"{path}: truncated payload in tensor {tid}")
        data = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(t, c, h, w)
        off = end
        if not np.isfinite(data).all():
            raise ValidationError(f"{path}: non-finite values in tensor {tid}")
        tensors.append(FeatureTensor(tid, data.copy()))
    if off != len(blob):
        raise CorruptionError(f"{path}: {len(blob) - off} trailing bytes")
    return FeatureTensorSet(tuple(tensors))


def synth_shapes(spec: SynthSpec):
    """Channel/height/width triples the generator will emit, in order."""
    if spec.family == "fpn":
        return tuple(
            (
                FPN_CHANNELS,
                -(-spec.base_height // 2 ** (n + 1)),
                -(-spec.base_width // 2 ** (n + 1)),
            )
            for n in range(1, 5)
        )
    if spec.family == "darknet":
        return DARKNET_SHAPES
    if spec.family == "darknet_reduced":
        return DARKNET_REDUCED_SHAPES
    return ((CUSTOM_CHANNELS, spec.base_height, spec.base_width),)


def _gaussian_blobs(rng, t, c, h, w):
    # A few smooth bumps per channel, drifting slightly frame to frame so
    # temporal prediction sees near-static content with sub-pixel motion.
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    out = np.zeros((t, c, h, w), dtype=np.float32)
    n_blobs = rng.integers(2, 5, size=c)
    for ci in range(c):
        k = int(n_blobs[ci])
        cy = rng.uniform(0, h, size=k).astype(np.float32)
        cx = rng.uniform(0, w, size=k).astype(np.float32)
        sig = rng.uniform(max(1.5, min(h, w) / 12), max(2.5, min(h, w) / 4), size=k)
        amp = rng.uniform(-2.0, 4.0, size=k).astype(np.float32)
        dy = rng.uniform(-0.7, 0.7, size=k).astype(np.float32)
        dx = rng.uniform(-0.7, 0.7, size=k).astype(np.float32)
        for ti in range(t):
            acc = np.zeros((h, w), dtype=np.float32)
            for b in range(k):
                ry = yy - (cy[b] + dy[b] * ti)
                rx = xx - (cx[b] + dx[b] * ti)
                acc += amp[b] * np.exp(-(ry * ry + rx * rx) / (2 * sig[b] * sig[b])).astype(
                    np.float32
                )
            out[ti, ci] = acc
    out += rng.normal(0, 0.02, size=out.shape).astype(np.float32)
    return out


def synth_tensor_set(spec: SynthSpec) -> FeatureTensorSet:
    """Generate a seeded synthetic set following the family shape rule."""
    rng = np.random.default_rng(spec.seed)
    tensors = []
    for idx, (c, h, w) in enumerate(synth_shapes(spec), start=1):
        if spec.noise_model == "gaussian_blobs":
            data = _gaussian_blobs(rng, spec.frames, c, h, w)
        elif spec.noise_model == "sparse_relu":
            data = rng.normal(0, 1, size=(spec.frames, c, h, w)).astype(np.float32)
            mask = rng.random(size=data.shape) < 0.7
            data[mask] = 0.0
        else:
            data = rng.random(size=(spec.frames, c, h, w)).astype(np.float32)
        tensors.append(FeatureTensor(idx, data))
    tag = f"synth:{spec.family}:{spec.noise_model}:seed={spec.seed}"
    return FeatureTensorSet(tuple(tensors), source_tag=tag)


def feature_distortion(a: FeatureTensorSet, b: FeatureTensorSet) -> DistortionReport:
    """Per-tensor MSE plus the element-count-weighted aggregate."""
    if len(a) != len(b):
        raise ValidationError(f"tensor count mismatch: {len(a)} vs {len(b)}")
    per = []
    counts = []
    num = 0.0
    den = 0
    for ta, tb in zip(a, b):
        if ta.shape != tb.shape:
            raise ValidationError(
                f"tensor {ta.tensor_id}: shape {ta.shape} vs {tb.shape}"
            )
        d = ta.data.astype(np.float64) - tb.data.astype(np.float64)
        mse = float(np.mean(d * d))
        per.append(mse)
        counts.append(ta.data.size)
        num += mse * ta.data.size
        den += ta.data.size
    return DistortionReport(tuple(per), num / den, tuple(counts))

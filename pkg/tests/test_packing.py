import numpy as np
import pytest

from fcmbench.errors import ValidationError
from fcmbench.packing import (
    MAX_SAMPLE,
    PAD_VALUE,
    PackedVideo,
    load_packed,
    pack,
    save_packed,
    unpack,
)
from fcmbench.tensors import FeatureTensor, FeatureTensorSet, SynthSpec, synth_tensor_set


def random_set(rng, max_tensors=3, max_frames=3):
    n = int(rng.integers(1, max_tensors + 1))
    t = int(rng.integers(1, max_frames + 1))
    tensors = []
    for i in range(1, n + 1):
        c = int(rng.integers(1, 9))
        h = int(rng.integers(1, 14))
        w = int(rng.integers(1, 14))
        data = rng.normal(0, 3, size=(t, c, h, w)).astype(np.float32)
        tensors.append(FeatureTensor(i, data))
    return FeatureTensorSet(tuple(tensors))


def roundtrip_bound(tset):
    out = []
    for t in tset:
        span = float(t.data.max() - t.data.min())
        out.append(span / (2 * MAX_SAMPLE) + 1e-6 * max(1.0, span))
    return out


class TestPack:
    def test_quant_extremes_and_grid(self):
        # 4 channels of 2x2 spanning [0, 1]: 2x2 channel grid in a 4x4
        # region, frame padded to 64x64.
        data = np.zeros((1, 4, 2, 2), dtype=np.float32)
        data[0, 0, 0, 0] = 0.0
        data[0, 3, 1, 1] = 1.0
        data[0, 1] = 0.5
        data[0, 2] = 0.25
        tset = FeatureTensorSet((FeatureTensor(1, data),))
        video, info = pack(tset)
        assert (video.height, video.width) == (64, 64)
        lay = info.layouts[0]
        assert (lay.grid_cols, lay.grid_rows) == (2, 2)
        assert lay.origins == ((0, 0), (0, 2), (2, 0), (2, 2))
        assert video.frames[0, 0, 0] == 0
        assert video.frames[0, 3, 3] == 1023
        # padding filled with mid-range
        assert video.frames[0, 10, 10] == PAD_VALUE

    def test_constant_tensor_degenerate_bounds(self):
        data = np.full((2, 3, 4, 4), 7.25, dtype=np.float32)
        tset = FeatureTensorSet((FeatureTensor(1, data),))
        video, info = pack(tset)
        lay = info.layouts[0]
        assert lay.vmin == lay.vmax == 7.25
        h, w = lay.height, lay.width
        for y, x in lay.origins:
            assert (video.frames[:, y : y + h, x : x + w] == 0).all()
        back = unpack(video, info)
        assert np.array_equal(back.tensors[0].data, data)

    def test_tile_coverage_darknet(self):
        tset = synth_tensor_set(SynthSpec("darknet", frames=1, seed=9))
        _video, info = pack(tset)
        # paint tile ids into a coverage map; every channel exactly once,
        # no overlap, all tiles inside the frame
        cover = np.zeros((info.frame_height, info.frame_width), dtype=np.int32)
        total = 0
        for lay in info.layouts:
            for y, x in lay.origins:
                cover[y : y + lay.height, x : x + lay.width] += 1
                total += lay.height * lay.width
        assert cover.max() == 1
        assert int(cover.sum()) == total
        assert info.frame_height * info.frame_width >= total

    def test_deterministic(self):
        tset = synth_tensor_set(SynthSpec("custom", base_height=9, base_width=7, frames=2, seed=3))
        v1, i1 = pack(tset)
        v2, i2 = pack(tset)
        assert np.array_equal(v1.frames, v2.frames)
        assert i1 == i2


class TestUnpack:
    def test_dequant_formula(self):
        data = np.zeros((1, 1, 2, 2), dtype=np.float32)
        data[0, 0, 0, 0] = -3.0
        data[0, 0, 1, 1] = 5.0
        tset = FeatureTensorSet((FeatureTensor(1, data),))
        video, info = pack(tset)
        zeroed = PackedVideo(np.zeros_like(video.frames))
        back = unpack(zeroed, info)
        assert np.allclose(back.tensors[0].data, -3.0)

    def test_round_trip_bound(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            tset = random_set(rng)
            video, info = pack(tset)
            back = unpack(video, info)
            for t, tb, bound in zip(tset, back, roundtrip_bound(tset)):
                err = np.abs(t.data.astype(np.float64) - tb.data.astype(np.float64)).max()
                assert err <= bound

    def test_round_trip_mse_matches_elementwise_oracle(self):
        rng = np.random.default_rng(12)
        tset = random_set(rng)
        video, info = pack(tset)
        back = unpack(video, info)
        from fcmbench.tensors import feature_distortion

        rep = feature_distortion(tset, back)
        acc = 0.0
        n = 0
        for t, tb in zip(tset, back):
            for v, vb in zip(t.data.ravel(), tb.data.ravel()):
                acc += (float(v) - float(vb)) ** 2
                n += 1
        assert rep.aggregate_mse == pytest.approx(acc / n, rel=1e-9, abs=1e-15)

    def test_padding_independence(self):
        tset = synth_tensor_set(SynthSpec("custom", base_height=10, base_width=10, frames=2, seed=4))
        video, info = pack(tset)
        covered = np.zeros((info.frame_height, info.frame_width), dtype=bool)
        for lay in info.layouts:
            for y, x in lay.origins:
                covered[y : y + lay.height, x : x + lay.width] = True
        frames = video.frames.copy()
        frames[:, ~covered] = 1023  # scribble over all padding
        mutated = PackedVideo(frames)
        a = unpack(video, info)
        b = unpack(mutated, info)
        for ta, tb in zip(a, b):
            assert np.array_equal(ta.data, tb.data)

    def test_geometry_mismatch(self):
        tset = synth_tensor_set(SynthSpec("custom", base_height=8, base_width=8, frames=1, seed=4))
        video, info = pack(tset)
        bad = PackedVideo(np.zeros((1, 128, 64), dtype=np.uint16))
        with pytest.raises(ValidationError):
            unpack(bad, info)


class TestPkvIo:
    def test_round_trip(self, tmp_path):
        tset = synth_tensor_set(SynthSpec("custom", base_height=12, base_width=5, frames=2, seed=8))
        video, info = pack(tset)
        p = tmp_path / "a.pkv"
        save_packed(video, info, p)
        video2, info2 = load_packed(p)
        assert np.array_equal(video.frames, video2.frames)
        assert info == info2

    def test_truncation(self, tmp_path):
        tset = synth_tensor_set(SynthSpec("custom", base_height=4, base_width=4, frames=1, seed=8))
        video, info = pack(tset)
        p = tmp_path / "a.pkv"
        save_packed(video, info, p)
        blob = p.read_bytes()
        p.write_bytes(blob[: len(blob) - 10])
        from fcmbench.errors import CorruptionError

        with pytest.raises(CorruptionError):
            load_packed(p)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcmbench.errors import ConfigError, CorruptionError, FormatError, ValidationError
from fcmbench.tensors import (
    FeatureTensor,
    FeatureTensorSet,
    SynthSpec,
    feature_distortion,
    load_tensor_set,
    save_tensor_set,
    synth_shapes,
    synth_tensor_set,
)


def small_set(seed=0, frames=2):
    rng = np.random.default_rng(seed)
    tensors = [
        FeatureTensor(1, rng.normal(size=(frames, 3, 4, 5)).astype(np.float32)),
        FeatureTensor(2, rng.normal(size=(frames, 2, 2, 2)).astype(np.float32)),
    ]
    return FeatureTensorSet(tuple(tensors), source_tag="test")


class TestModel:
    def test_rejects_nonfinite(self):
        bad = np.zeros((1, 1, 2, 2), dtype=np.float32)
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            FeatureTensor(1, bad)

    def test_rejects_bad_ids(self):
        t = FeatureTensor(2, np.zeros((1, 1, 2, 2), dtype=np.float32))
        with pytest.raises(ValidationError):
            FeatureTensorSet((t,))

    def test_rejects_mismatched_frames(self):
        a = FeatureTensor(1, np.zeros((1, 1, 2, 2), dtype=np.float32))
        b = FeatureTensor(2, np.zeros((2, 1, 2, 2), dtype=np.float32))
        with pytest.raises(ValidationError):
            FeatureTensorSet((a, b))


class TestFctIo:
    def test_round_trip_identity(self, tmp_path):
        tset = small_set()
        p = tmp_path / "a.fct"
        save_tensor_set(tset, p)
        back = load_tensor_set(p)
        assert len(back) == len(tset)
        for ta, tb in zip(tset, back):
            assert ta.tensor_id == tb.tensor_id
            assert np.array_equal(ta.data, tb.data)

    def test_two_saves_byte_identical(self, tmp_path):
        tset = small_set()
        p1, p2 = tmp_path / "a.fct", tmp_path / "b.fct"
        save_tensor_set(tset, p1)
        save_tensor_set(tset, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_layout(self, tmp_path):
        # 1x1x2x2 single-tensor set: magic+version+count (8 bytes),
        # one 18-byte shape record, then exactly 4 float32 payload values.
        t = FeatureTensor(1, np.arange(4, dtype=np.float32).reshape(1, 1, 2, 2))
        p = tmp_path / "a.fct"
        save_tensor_set(FeatureTensorSet((t,)), p)
        blob = p.read_bytes()
        assert blob[:4] == b"FCT1"
        assert len(blob) == 8 + 18 + 16
        payload = np.frombuffer(blob, dtype="<f4", offset=26)
        assert np.array_equal(payload, np.array([0, 1, 2, 3], dtype=np.float32))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "a.fct"
        save_tensor_set(small_set(), p)
        blob = bytearray(p.read_bytes())
        blob[0] ^= 0xFF
        p.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load_tensor_set(p)

    def test_truncation_names_tensor(self, tmp_path):
        tset = small_set()
        p = tmp_path / "a.fct"
        save_tensor_set(tset, p)
        blob = p.read_bytes()
        # cut inside the second tensor's payload
        header = 8 + 18 * 2
        first_payload = 4 * tset.tensors[0].data.size
        cut = header + first_payload + 3
        p.write_bytes(blob[:cut])
        with pytest.raises(CorruptionError, match="tensor 2"):
            load_tensor_set(p)


class TestSynth:
    def test_darknet_channels(self):
        tset = synth_tensor_set(SynthSpec("darknet", frames=1, seed=1))
        assert [t.channels for t in tset] == [256, 512, 1024]
        assert [(t.height, t.width) for t in tset] == [(76, 136), (38, 68), (19, 34)]

    def test_darknet_reduced_channels(self):
        tset = synth_tensor_set(SynthSpec("darknet_reduced", frames=1, seed=1))
        assert [t.channels for t in tset] == [128, 256, 512]

    def test_fpn_shape_rule(self):
        tset = synth_tensor_set(SynthSpec("fpn", base_height=64, base_width=64, seed=3))
        assert [(t.channels, t.height, t.width) for t in tset] == [
            (256, 16, 16),
            (256, 8, 8),
            (256, 4, 4),
            (256, 2, 2),
        ]

    def test_seed_determinism(self):
        spec = SynthSpec("custom", base_height=8, base_width=8, frames=2, seed=77)
        a = synth_tensor_set(spec)
        b = synth_tensor_set(spec)
        for ta, tb in zip(a, b):
            assert np.array_equal(ta.data, tb.data)

    def test_unknown_family(self):
        with pytest.raises(ConfigError):
            SynthSpec("resnet")

    @given(
        hr=st.integers(min_value=1, max_value=300),
        wr=st.integers(min_value=1, max_value=300),
    )
    @settings(max_examples=50, deadline=None)
    def test_fpn_rule_property(self, hr, wr):
        spec = SynthSpec("fpn", base_height=hr, base_width=wr)
        for n, (c, h, w) in enumerate(synth_shapes(spec), start=1):
            assert c == 256
            assert h == -(-hr // 2 ** (n + 1))
            assert w == -(-wr // 2 ** (n + 1))

    def test_sparse_relu_sparsity(self):
        spec = SynthSpec("custom", base_height=32, base_width=32, frames=2,
                         noise_model="sparse_relu", seed=5)
        tset = synth_tensor_set(spec)
        frac = np.mean([np.mean(t.data == 0) for t in tset])
        assert 0.6 < frac < 0.8


class TestDistortion:
    def test_identity_zero(self):
        a = small_set()
        rep = feature_distortion(a, a)
        assert all(m == 0 for m in rep.per_tensor_mse)
        assert rep.aggregate_mse == 0

    def test_constant_offset(self):
        a = small_set()
        b = FeatureTensorSet(
            tuple(FeatureTensor(t.tensor_id, t.data + 1.0) for t in a)
        )
        rep = feature_distortion(a, b)
        assert np.allclose(rep.per_tensor_mse, 1.0, atol=1e-6)

    def test_aggregate_matches_flat_oracle(self):
        a = small_set(seed=1)
        b = small_set(seed=2)
        rep = feature_distortion(a, b)
        flat_a = np.concatenate([t.data.ravel() for t in a]).astype(np.float64)
        flat_b = np.concatenate([t.data.ravel() for t in b]).astype(np.float64)
        oracle = float(np.mean((flat_a - flat_b) ** 2))
        assert rep.aggregate_mse == pytest.approx(oracle, rel=1e-12)

    def test_symmetry(self):
        a, b = small_set(seed=1), small_set(seed=2)
        assert feature_distortion(a, b).aggregate_mse == feature_distortion(b, a).aggregate_mse

    def test_shape_mismatch(self):
        a = small_set()
        c = synth_tensor_set(SynthSpec("custom", base_height=4, base_width=4, frames=2))
        with pytest.raises(ValidationError):
            feature_distortion(a, c)

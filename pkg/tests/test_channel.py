"""Channel generation, preprocessing, metrics, and the tensor-file format.

Energy-accounting expectations use a direct FFT oracle: build delay-domain
responses by hand, transform them, and compare the preprocessing output
against the known tap energies.
"""

import numpy as np
import pytest

from csicodec.channel import (
    ChannelConfig,
    ChannelTensor,
    Scale,
    fit_scale,
    generate_channel,
    generate_dataset,
    load_tensor_file,
    nmse,
    nmse_arrays,
    postprocess,
    preprocess,
    save_tensor_file,
)
from csicodec.errors import (
    ConfigurationError,
    DataFormatError,
    DimensionError,
    NumericError,
)

CFG = ChannelConfig(n_tx=8, n_subcarriers=128, n_delay=16, seed=3, n_paths=6, decay=0.2)


class TestConfig:
    def test_rejects_bad_bounds(self):
        with pytest.raises(ConfigurationError):
            ChannelConfig(n_tx=0, n_subcarriers=64, n_delay=8, seed=0, n_paths=2)
        with pytest.raises(ConfigurationError):
            ChannelConfig(n_tx=4, n_subcarriers=100, n_delay=8, seed=0, n_paths=2)
        with pytest.raises(ConfigurationError):
            ChannelConfig(n_tx=4, n_subcarriers=64, n_delay=65, seed=0, n_paths=2)
        with pytest.raises(ConfigurationError):
            ChannelConfig(n_tx=4, n_subcarriers=64, n_delay=8, seed=0, n_paths=9)
        with pytest.raises(ConfigurationError):
            ChannelConfig(n_tx=4, n_subcarriers=64, n_delay=8, seed=0, n_paths=2, decay=-1)


class TestGenerate:
    def test_deterministic(self):
        assert np.array_equal(generate_channel(CFG), generate_channel(CFG))

    def test_index_streams_differ(self):
        assert not np.array_equal(generate_channel(CFG, 0), generate_channel(CFG, 1))

    def test_single_tap_flat_magnitude(self):
        # DFT of one impulse has constant modulus across subcarriers
        cfg = ChannelConfig(n_tx=4, n_subcarriers=64, n_delay=8, seed=1, n_paths=1)
        h = generate_channel(cfg)
        spread = np.ptp(np.abs(h), axis=0)
        assert spread.max() < 1e-12

    def test_mean_energy_normalization(self):
        # Monte-Carlo oracle over the generator's definition:
        # E[||H||_F^2] = n_subcarriers * n_tx
        cfg = ChannelConfig(
            n_tx=32, n_subcarriers=1024, n_delay=32, seed=99, n_paths=16, decay=0.15
        )
        total = 0.0
        n = 1000
        for i in range(n):
            h = generate_channel(cfg, index=i)
            total += float(np.sum(np.abs(h) ** 2))
        mean = total / n
        target = cfg.n_subcarriers * cfg.n_tx
        assert abs(mean - target) / target < 0.05

    def test_delay_support_inside_truncation(self):
        h = generate_channel(CFG)
        delay = np.fft.ifft(h, axis=0, norm="ortho")
        tail = np.sum(np.abs(delay[CFG.n_delay :]) ** 2)
        assert tail < 1e-20


class TestPreprocess:
    def test_roundtrip_when_support_fits(self):
        h = generate_channel(CFG)
        h2 = postprocess(preprocess(h, CFG), CFG)
        assert np.linalg.norm(h - h2) / np.linalg.norm(h) < 1e-10

    def test_energy_outside_truncation_is_dropped(self):
        # all delay energy at tap n_delay: retained tensor is exactly zero
        g = np.zeros((CFG.n_subcarriers, CFG.n_tx), dtype=np.complex128)
        g[CFG.n_delay] = 1.0 + 0.5j
        h = np.fft.fft(g, axis=0, norm="ortho")
        t = preprocess(h, CFG)
        assert np.all(t.denormalized() == 0.0)

    def test_truncation_nmse_equals_energy_fraction(self):
        # FFT-based energy accounting oracle on 100 random channels
        rng = np.random.default_rng(31)
        for _ in range(100):
            g = rng.normal(size=(CFG.n_subcarriers, CFG.n_tx)) + 1j * rng.normal(
                size=(CFG.n_subcarriers, CFG.n_tx)
            )
            mask = rng.random(CFG.n_subcarriers) < 0.7
            g[mask] = 0.0
            if np.linalg.norm(g) == 0:
                continue
            h = np.fft.fft(g, axis=0, norm="ortho")
            fraction = float(
                np.sum(np.abs(g[CFG.n_delay :]) ** 2) / np.sum(np.abs(g) ** 2)
            )
            h2 = postprocess(preprocess(h, CFG), CFG)
            assert nmse_arrays(h, h2) == pytest.approx(fraction, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            preprocess(np.zeros((64, 8), dtype=complex), CFG)

    def test_normalization_range_and_inverse(self):
        h = generate_channel(CFG)
        t = preprocess(h, CFG)
        assert t.planes.min() >= -1.0 and t.planes.max() <= 1.0
        delay = np.fft.ifft(h, axis=0, norm="ortho")[: CFG.n_delay]
        raw = np.stack([delay.real, delay.imag])
        denorm = t.denormalized()
        assert np.abs(denorm - raw).max() <= 1e-12 * np.abs(raw).max()

    def test_parseval(self):
        h = generate_channel(CFG)
        t = preprocess(h, CFG)
        freq = postprocess(t, CFG)
        delay_norm = np.linalg.norm(t.denormalized())
        assert np.linalg.norm(freq) == pytest.approx(delay_norm, rel=1e-10)

    def test_shared_scale_is_honored(self):
        h = generate_channel(CFG)
        scale = Scale(offset=0.05, gain=3.0)
        t = preprocess(h, CFG, scale=scale)
        assert t.scale == scale
        h2 = postprocess(t, CFG)
        # truncation-free channel survives a non-fitted scale too
        assert np.linalg.norm(h - h2) / np.linalg.norm(h) < 1e-10

    def test_zero_tensor_postprocess(self):
        t = ChannelTensor(
            planes=np.zeros((2, CFG.n_delay, CFG.n_tx)), scale=Scale(0.0, 1.0)
        )
        assert np.all(postprocess(t, CFG) == 0.0)


class TestNmse:
    def _tensor(self, planes):
        return ChannelTensor(planes=planes, scale=Scale(0.0, 1.0))

    def test_identity_is_zero(self):
        t = self._tensor(np.random.default_rng(1).normal(size=(2, 4, 4)))
        assert nmse(t, t) == 0.0

    def test_zero_reconstruction_is_one(self):
        t = self._tensor(np.random.default_rng(2).normal(size=(2, 4, 4)))
        zero = self._tensor(np.zeros((2, 4, 4)))
        assert nmse(t, zero) == pytest.approx(1.0, rel=1e-12)

    def test_half_reconstruction(self):
        planes = np.random.default_rng(3).normal(size=(2, 4, 4))
        assert nmse(self._tensor(planes), self._tensor(0.5 * planes)) == pytest.approx(
            0.25, rel=1e-12
        )

    def test_denormalized_domain(self):
        # with offset != 0 the metric must be computed after de-normalization
        planes = np.random.default_rng(4).normal(size=(2, 4, 4))
        scale = Scale(offset=2.0, gain=0.25)
        a = ChannelTensor(planes=planes, scale=scale)
        b = ChannelTensor(planes=np.zeros_like(planes), scale=scale)
        ref = scale.invert(planes)
        expected = float(np.sum((ref - 2.0) ** 2) / np.sum(ref**2))
        assert nmse(a, b) == pytest.approx(expected, rel=1e-12)

    def test_zero_reference_rejected(self):
        zero = self._tensor(np.zeros((2, 4, 4)))
        with pytest.raises(NumericError):
            nmse(zero, zero)

    def test_shape_mismatch(self):
        a = self._tensor(np.zeros((2, 4, 4)) + 1)
        b = ChannelTensor(planes=np.ones((2, 4, 5)), scale=Scale(0.0, 1.0))
        with pytest.raises(DimensionError):
            nmse(a, b)


class TestDataset:
    def test_deterministic_and_in_range(self):
        a, scale_a = generate_dataset(CFG, 5)
        b, scale_b = generate_dataset(CFG, 5)
        assert np.array_equal(a, b)
        assert scale_a == scale_b
        assert a.min() >= -1.0 and a.max() <= 1.0
        assert a.dtype == np.float32

    def test_fit_scale_degenerate(self):
        s = fit_scale(np.zeros((2, 3, 3)))
        assert s.offset == 0.0 and s.gain == 1.0
        s = fit_scale(np.full((2, 3, 3), 5.0))
        assert s.invert(s.apply(np.full((2, 3, 3), 5.0))).max() == 5.0


class TestTensorFile:
    def test_roundtrip_bit_exact(self, tmp_path):
        planes, scale = generate_dataset(CFG, 4)
        path = tmp_path / "data.csit"
        save_tensor_file(path, planes, scale)
        loaded, loaded_scale = load_tensor_file(path)
        assert np.array_equal(loaded, planes)
        assert loaded_scale == scale

    def test_header_layout_frozen(self, tmp_path):
        planes = np.zeros((1, 2, 3, 4), dtype=np.float32)
        path = tmp_path / "tiny.csit"
        save_tensor_file(path, planes, Scale(offset=0.5, gain=2.0))
        raw = path.read_bytes()
        assert raw[:4] == b"CSIT"
        assert raw[4] == 1  # version
        assert int.from_bytes(raw[5:7], "little") == 3  # n_delay
        assert int.from_bytes(raw[7:9], "little") == 4  # n_tx
        assert int.from_bytes(raw[9:13], "little") == 1  # count
        assert np.frombuffer(raw[13:29], dtype="<f8").tolist() == [0.5, 2.0]
        assert len(raw) == 29 + 2 * 3 * 4 * 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.csit"
        path.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(DataFormatError):
            load_tensor_file(path)

    def test_truncated_body(self, tmp_path):
        planes, scale = generate_dataset(CFG, 2)
        path = tmp_path / "trunc.csit"
        save_tensor_file(path, planes, scale)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(DataFormatError):
            load_tensor_file(path)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fullrank_bss.stft import Spectrogram, WaveBuffer, hamming, istft, stft
from fullrank_bss.wavio import WavFormatError, read_wav, write_wav


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestWaveBuffer:
    def test_mono_becomes_column(self):
        w = WaveBuffer(16000, np.zeros(10))
        assert w.samples.shape == (10, 1)
        assert w.channels == 1 and len(w) == 10

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            WaveBuffer(16000, np.array([0.0, np.nan]))


class TestStft:
    def test_shape(self):
        S = stft(WaveBuffer(16000, np.zeros((2048, 2))), 512, 256)
        assert S.freq_bins == 257
        assert S.channels == 2
        assert S.data.shape == (257, S.frames, 2)

    def test_zero_signal(self):
        S = stft(WaveBuffer(16000, np.zeros(4096)), 512)
        assert not np.any(S.data)

    def test_cosine_main_lobe(self):
        N, k = 512, 37
        n = np.arange(16 * N)
        S = stft(WaveBuffer(16000, np.cos(2 * np.pi * k * n / N)), N, N // 2)
        frames = S.data[:, 2:-2, 0]  # interior frames only
        power = np.abs(frames) ** 2
        assert power[k - 1 : k + 2].sum() / power.sum() >= 0.85
        assert np.argmax(power.sum(axis=1)) == k

    def test_bin_matches_direct_dft(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(2048)
        N, hop = 256, 128
        S = stft(WaveBuffer(16000, x), N, hop)
        padded = np.concatenate([np.zeros(N - hop), x, np.zeros(N)])
        t = 5
        frame = padded[t * hop : t * hop + N] * hamming(N)
        direct = np.exp(-2j * np.pi * np.outer(np.arange(N // 2 + 1), np.arange(N)) / N) @ frame
        np.testing.assert_allclose(S.data[:, t, 0], direct, atol=1e-10)

    def test_signal_too_short(self):
        with pytest.raises(ValueError, match="signal too short"):
            stft(WaveBuffer(16000, np.zeros(100)), 512)

    @pytest.mark.parametrize("window_len,hop", [(500, 250), (512, 200)])
    def test_bad_geometry(self, window_len, hop):
        with pytest.raises(ValueError):
            stft(WaveBuffer(16000, np.zeros(4096)), window_len, hop)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        x, y = rng.standard_normal((2, 4000, 2))
        a, b = 0.3, -1.7
        lhs = stft(WaveBuffer(16000, a * x + b * y), 512).data
        rhs = a * stft(WaveBuffer(16000, x), 512).data + b * stft(WaveBuffer(16000, y), 512).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_hamming_periodic(self):
        w = hamming(8)
        np.testing.assert_allclose(w, 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(8) / 8))


class TestIstft:
    @pytest.mark.parametrize("M", [1, 2, 3, 4])
    @pytest.mark.parametrize("window_len", [256, 512, 4096])
    def test_round_trip(self, M, window_len):
        rng = np.random.default_rng(M * window_len)
        x = rng.uniform(-1, 1, size=(3 * window_len + 123, M))
        y = istft(stft(WaveBuffer(16000, x), window_len)).samples
        assert y.shape == x.shape
        assert rel_err(y, x) < 1e-8

    @settings(max_examples=25, deadline=None)
    @given(st.integers(600, 3000), st.sampled_from([(256, 128), (256, 64), (512, 256)]), st.integers(0, 2**32 - 1))
    def test_round_trip_property(self, n, geometry, seed):
        window_len, hop = geometry
        if n <= window_len:
            return
        x = np.random.default_rng(seed).standard_normal((n, 2))
        y = istft(stft(WaveBuffer(16000, x), window_len, hop)).samples
        assert rel_err(y, x) < 1e-8

    def test_single_frame_locality(self):
        S = stft(WaveBuffer(16000, np.zeros(4096)), 512, 256)
        t = 6
        S.data[:, t, 0] = 1.0
        y = istft(S).samples[:, 0]
        start = t * 256 - (512 - 256)  # frame origin in the unpadded signal
        support = np.flatnonzero(np.abs(y) > 1e-12)
        assert support.min() >= start and support.max() < start + 512

    def test_parseval(self):
        rng = np.random.default_rng(3)
        N, hop = 512, 256
        x = rng.standard_normal(8192)
        S = stft(WaveBuffer(16000, x), N, hop)
        # one-sided spectrum: interior bins count twice
        wts = np.full(S.freq_bins, 2.0)
        wts[[0, -1]] = 1.0
        spectral = np.sum(wts[:, None] * np.abs(S.data[:, :, 0]) ** 2) / N
        # time-domain energy weighted by the overlapped squared window
        padded = np.concatenate([np.zeros(N - hop), x, np.zeros(S.frames * hop + N)])
        cover = np.zeros_like(padded)
        for t in range(S.frames):
            cover[t * hop : t * hop + N] += hamming(N) ** 2
        assert spectral == pytest.approx(np.sum(padded**2 * cover), rel=1e-6)

    def test_mismatched_geometry(self):
        S = stft(WaveBuffer(16000, np.zeros(4096)), 512, 256)
        with pytest.raises(ValueError):
            istft(S, window_len=1024)
        bad = Spectrogram(S.data[:100], 512, 256)
        with pytest.raises(ValueError):
            istft(bad)


class TestWavIO:
    @pytest.mark.parametrize("encoding,tol", [("float32", 1e-7), ("pcm16", 1.0 / 32768)])
    def test_round_trip(self, tmp_path, encoding, tol):
        x = np.random.default_rng(0).uniform(-0.9, 0.9, size=(1000, 3))
        write_wav(tmp_path / "a.wav", WaveBuffer(16000, x), encoding=encoding)
        y = read_wav(tmp_path / "a.wav")
        assert y.sample_rate == 16000
        np.testing.assert_allclose(y.samples, x, atol=tol)

    def test_rejects_int32(self, tmp_path):
        from scipy.io import wavfile

        wavfile.write(tmp_path / "b.wav", 16000, np.zeros((10, 2), dtype=np.int32))
        with pytest.raises(WavFormatError, match="only PCM 16-bit and IEEE float32"):
            read_wav(tmp_path / "b.wav")

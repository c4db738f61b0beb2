import numpy as np
import pytest

from fullrank_bss.scene import (
    ArrayGeometry,
    SceneSpec,
    default_noise_azimuths,
    linear_array,
    simulate,
    source_signal,
    speech_like_source,
    steering_vector,
)
from fullrank_bss.stft import stft


def spatial_covariance(buf, window_len=512):
    N = stft(buf, window_len).data
    return np.einsum("ijm,ijk->imk", N, np.conj(N)) / N.shape[1]


class TestGeometry:
    def test_linear_array_centred(self):
        g = linear_array(3, 0.04)
        np.testing.assert_allclose(g.mic_positions[:, 0], [-0.04, 0.0, 0.04])
        assert g.n_mics == 3

    @pytest.mark.parametrize(
        "pos", [np.zeros((1, 2)), np.zeros((3, 3)), np.array([[0.0, 0.0], [0.0, 0.0]])]
    )
    def test_degenerate_geometry(self, pos):
        with pytest.raises(ValueError):
            ArrayGeometry(pos)


class TestSteeringVector:
    def test_dc_is_all_ones(self):
        np.testing.assert_allclose(steering_vector(linear_array(4, 0.05), 37.0, 0.0), np.ones(4))

    def test_broadside_constant_phase(self):
        a = steering_vector(linear_array(3, 0.04), 0.0, 2500.0)
        np.testing.assert_allclose(a, a[0] * np.ones(3), atol=1e-12)

    def test_endfire_phase_difference(self):
        d, f, c = 0.05, 1200.0, 343.0
        a = steering_vector(linear_array(2, d), 90.0, f)
        # the wave reaches the +x microphone first, so its phase leads
        np.testing.assert_allclose(np.angle(a[1] / a[0]), 2 * np.pi * f * d / c, atol=1e-12)

    def test_vectorized_frequencies(self):
        g = linear_array(3, 0.04)
        freqs = np.array([0.0, 100.0, 5000.0])
        A = steering_vector(g, 20.0, freqs)
        assert A.shape == (3, 3)
        np.testing.assert_allclose(A[2], steering_vector(g, 20.0, 5000.0))
        np.testing.assert_allclose(np.abs(A), 1.0)

    def test_negative_frequency_rejected(self):
        with pytest.raises(ValueError):
            steering_vector(linear_array(), 0.0, -1.0)


class TestSceneSpec:
    def test_default_fan(self):
        spec = SceneSpec(target_azimuth=30)
        assert len(spec.noise_azimuths) == 18
        assert 30.0 not in spec.noise_azimuths
        assert default_noise_azimuths(35.0) == [float(a) for a in range(-90, 91, 10)]

    def test_overlap_rejected(self):
        with pytest.raises(ValueError, match="target_azimuth"):
            SceneSpec(target_azimuth=30, noise_azimuths=[30, 40])

    @pytest.mark.parametrize(
        "kwargs", [{"noise_azimuths": []}, {"source_kind": "music"}, {"noise_kind": "pink"}, {"duration": 0}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SceneSpec(**kwargs)


@pytest.fixture(scope="module")
def scene():
    return simulate(linear_array(3, 0.04), SceneSpec(target_azimuth=20, duration=3.0, seed=2))


class TestSimulate:
    def test_snr_contract(self, scene):
        for snr in (0.0, 5.0):
            sc = simulate(linear_array(), SceneSpec(snr_db=snr, duration=1.0, seed=1))
            ratio = np.sum(sc.target_image.samples**2) / np.sum(sc.noise_image.samples**2)
            assert 10 * np.log10(ratio) == pytest.approx(snr, abs=0.01)

    def test_mixture_is_sum(self, scene):
        np.testing.assert_array_equal(
            scene.mixture.samples, scene.target_image.samples + scene.noise_image.samples
        )
        assert np.max(np.abs(scene.mixture.samples)) == pytest.approx(0.9)

    def test_deterministic(self, scene):
        again = simulate(linear_array(3, 0.04), SceneSpec(target_azimuth=20, duration=3.0, seed=2))
        np.testing.assert_array_equal(again.mixture.samples, scene.mixture.samples)

    def test_target_is_rank_one(self, scene):
        # re-analysis leaks a little energy across bins; rank 1 holds where the target lives
        w = np.linalg.eigvalsh(spatial_covariance(scene.target_image))
        strong = w[:, -1] > 1e-3 * w[:, -1].max()
        assert np.all(w[strong, -2] < 1e-2 * w[strong, -1])
        assert w[:, -2].sum() < 1e-3 * w[:, -1].sum()

    def test_noise_is_full_rank(self, scene):
        w = np.linalg.eigvalsh(spatial_covariance(scene.noise_image))
        f = np.arange(257) * 16000 / 512
        assert np.all(w[f > 1000, -2] > 0.05 * w[f > 1000, -1])

    @pytest.mark.parametrize("noise_kind", ["babble", "white"])
    def test_noise_coherence_is_low(self, noise_kind):
        sc = simulate(linear_array(3, 0.04), SceneSpec(duration=3.0, seed=0, noise_kind=noise_kind))
        C = spatial_covariance(sc.noise_image)
        f = np.arange(257) * 16000 / 512
        coh = np.abs(C[:, 0, 2]) / np.sqrt(C[:, 0, 0].real * C[:, 2, 2].real)
        high = coh[f >= 4000]
        assert high.mean() < 0.5
        assert np.mean(high < 0.5) >= 0.9

    def test_short_duration(self):
        with pytest.raises(ValueError, match="shorter"):
            simulate(linear_array(), SceneSpec(duration=0.01))


class TestSources:
    def test_speech_like_deterministic(self):
        a = speech_like_source(1.0, 5).samples
        np.testing.assert_array_equal(a, speech_like_source(1.0, 5).samples)
        assert not np.array_equal(a, speech_like_source(1.0, 6).samples)

    @pytest.mark.parametrize("seed", range(5))
    def test_spectral_tilt(self, seed):
        x = speech_like_source(3.0, seed).samples[:, 0]
        f = np.fft.rfftfreq(len(x), 1 / 16000)
        P = np.abs(np.fft.rfft(x)) ** 2
        low, high = P[f < 1000].mean(), P[(f >= 4000) & (f < 8000)].mean()
        assert 10 * np.log10(low / high) > 6.0

    @pytest.mark.parametrize("seed", range(5))
    def test_modulation_depth(self, seed):
        x = speech_like_source(3.0, seed).samples[:, 0]
        rms = np.sqrt(np.mean(x[: len(x) // 320 * 320].reshape(-1, 320) ** 2, axis=1))  # 20 ms windows
        hi, lo = np.percentile(rms, 95), np.percentile(rms, 5)
        assert (hi - lo) / (hi + lo) > 0.5

    def test_zero_mean_peak_normalized(self):
        x = speech_like_source(2.0, 1).samples[:, 0]
        assert abs(x.mean()) < 1e-12
        assert np.max(np.abs(x)) == pytest.approx(1.0)

    @pytest.mark.parametrize("kind", ["white", "tonal"])
    def test_other_kinds(self, kind):
        x = source_signal(kind, 0.5, 3).samples
        assert x.shape == (8000, 1)
        assert np.max(np.abs(x)) == pytest.approx(1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            source_signal("music", 1.0, 0)

"""Synthetic anechoic scenes: one directional target plus a fan of noise sources.

Propagation is a far-field plane wave applied per STFT bin, so the target
image is rank-1 in each frequency bin of the rendering STFT (up to leakage
on re-analysis) while the summed noise image spans the full array space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .stft import WaveBuffer, istft, stft

__all__ = [
    "ArrayGeometry",
    "Scene",
    "SceneSpec",
    "default_noise_azimuths",
    "linear_array",
    "simulate",
    "source_signal",
    "speech_like_source",
    "steering_vector",
]

SOURCE_KINDS = ("speech_like", "white", "tonal")
NOISE_KINDS = ("babble", "white")


@dataclass
class ArrayGeometry:
    mic_positions: np.ndarray
    speed_of_sound: float = 343.0

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ValueError("mic_positions must be (M, 2)")
        if pos.shape[0] < 2:
            raise ValueError("at least two microphones required")
        gaps = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        if np.any(gaps[~np.eye(len(pos), dtype=bool)] < 1e-9):
            raise ValueError("microphone positions must be distinct")
        if self.speed_of_sound <= 0:
            raise ValueError("speed_of_sound must be positive")
        self.mic_positions = pos

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]


def linear_array(n_mics: int = 3, spacing: float = 0.04) -> ArrayGeometry:
    """Uniform linear array along the x axis, centred at the origin."""
    x = (np.arange(n_mics) - (n_mics - 1) / 2) * spacing
    return ArrayGeometry(np.stack([x, np.zeros(n_mics)], axis=1))


def default_noise_azimuths(target_azimuth: float) -> list[float]:
    """Every 10 degrees over [-90, 90] except the target direction."""
    return [float(a) for a in range(-90, 91, 10) if not np.isclose(a, target_azimuth)]


@dataclass
class SceneSpec:
    target_azimuth: float = 30.0
    noise_azimuths: list[float] | None = None
    snr_db: float = 0.0
    duration: float = 3.0
    seed: int = 0
    source_kind: str = "speech_like"
    noise_kind: str = "babble"
    sample_rate: int = 16000

    def __post_init__(self):
        if self.noise_azimuths is None:
            self.noise_azimuths = default_noise_azimuths(self.target_azimuth)
        self.noise_azimuths = [float(a) for a in self.noise_azimuths]
        if not self.noise_azimuths:
            raise ValueError("noise_azimuths must be nonempty")
        if any(np.isclose(a, self.target_azimuth) for a in self.noise_azimuths):
            raise ValueError("target_azimuth must not appear in noise_azimuths")
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"source_kind must be one of {SOURCE_KINDS}")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"noise_kind must be one of {NOISE_KINDS}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")


@dataclass
class Scene:
    mixture: WaveBuffer
    target_image: WaveBuffer
    noise_image: WaveBuffer
    spec: SceneSpec = field(repr=False, default=None)


def steering_vector(geom: ArrayGeometry, azimuth: float, freq) -> np.ndarray:
    """Far-field plane-wave steering vector(s).

    ``azimuth`` is in degrees, clockwise from the array normal (+y). Returns
    shape ``(M,)`` for scalar ``freq`` or ``(F, M)`` for an array of ``F``
    frequencies.
    """
    freq = np.asarray(freq, dtype=np.float64)
    if np.any(freq < 0):
        raise ValueError("freq must be non-negative")
    theta = np.deg2rad(azimuth)
    direction = np.array([np.sin(theta), np.cos(theta)])
    rel = geom.mic_positions - geom.mic_positions.mean(axis=0)
    tau = -(rel @ direction) / geom.speed_of_sound
    return np.exp(-2j * np.pi * freq[..., None] * tau)


def _envelope(n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    env = np.empty(n)
    pos = 0
    while pos < n:
        rate = rng.uniform(4.0, 8.0)
        seg = max(int(sample_rate / rate), 1)
        t = np.arange(seg) / seg
        amp = rng.uniform(0.3, 1.0) if rng.random() > 0.35 else 0.02
        stop = min(pos + seg, n)
        env[pos:stop] = amp * np.sin(np.pi * t[: stop - pos]) ** 4
        pos = stop
    return env


def speech_like_source(duration: float, seed: int, sample_rate: int = 16000) -> WaveBuffer:
    """Amplitude-modulated AR(2)-filtered noise with a low-pass spectral tilt.

    Three formant-like resonators are mixed with weights redrawn every
    syllable (4-8 Hz), which gives the power spectrogram the low-rank but
    time-varying structure of speech.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    env = _envelope(n, sample_rate, rng)

    out = np.zeros(n)
    formants = rng.uniform([250.0, 600.0, 1200.0], [450.0, 1000.0, 2200.0])
    weights = np.repeat(rng.uniform(0.0, 1.0, size=(n // 1000 + 1, 3)), 1000, axis=0)[:n]
    for k, f in enumerate(formants):
        radius = 0.97
        a = [1.0, -2.0 * radius * np.cos(2 * np.pi * f / sample_rate), radius**2]
        out += weights[:, k] * lfilter([1.0], a, rng.standard_normal(n))
    out = lfilter([1.0], [1.0, -0.6], out)
    out *= env
    out -= out.mean()
    out /= np.max(np.abs(out))
    return WaveBuffer(sample_rate=sample_rate, samples=out)


def source_signal(kind: str, duration: float, seed: int, sample_rate: int = 16000) -> WaveBuffer:
    n = int(round(duration * sample_rate))
    if kind == "speech_like":
        return speech_like_source(duration, seed, sample_rate)
    rng = np.random.default_rng(seed)
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "tonal":
        t = np.arange(n) / sample_rate
        f0 = rng.uniform(120.0, 250.0)
        x = sum(np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 9))
        x *= _envelope(n, sample_rate, rng)
    else:
        raise ValueError(f"unknown source kind {kind!r}")
    x = x - x.mean()
    return WaveBuffer(sample_rate=sample_rate, samples=x / np.max(np.abs(x)))


def _image(dry: np.ndarray, geom: ArrayGeometry, azimuth: float, sample_rate: int,
           window_len: int, hop: int) -> np.ndarray:
    S = stft(dry, window_len, hop)
    freqs = np.arange(S.freq_bins) * sample_rate / window_len
    a = steering_vector(geom, azimuth, freqs)
    S.data = S.data[:, :, :1] * a[:, None, :]
    return istft(S).samples


def simulate(geom: ArrayGeometry, spec: SceneSpec, window_len: int = 512, hop: int | None = None) -> Scene:
    """Render mixture, target image and noise image for ``spec``.

    The target image is scaled so that the target-to-noise energy ratio over
    all channels equals ``spec.snr_db``; the mixture is then peak-normalized
    to 0.9 with the same gain applied to both images.
    """
    hop = window_len // 2 if hop is None else hop
    fs = spec.sample_rate
    n = int(round(spec.duration * fs))
    if n <= window_len:
        raise ValueError("scene duration shorter than the STFT window")
    seeds = np.random.SeedSequence(spec.seed).generate_state(1 + len(spec.noise_azimuths))

    dry = source_signal(spec.source_kind, spec.duration, int(seeds[0]), fs).samples[:, 0]
    target = _image(dry, geom, spec.target_azimuth, fs, window_len, hop)

    noise_kind = "speech_like" if spec.noise_kind == "babble" else "white"
    noise = np.zeros_like(target)
    for az, s in zip(spec.noise_azimuths, seeds[1:]):
        d = source_signal(noise_kind, spec.duration, int(s), fs).samples[:, 0]
        d = d / np.sqrt(np.mean(d**2))
        noise += _image(d, geom, az, fs, window_len, hop)

    gain = np.sqrt(np.sum(noise**2) / np.sum(target**2) * 10.0 ** (spec.snr_db / 10.0))
    target *= gain
    mixture = target + noise
    peak = 0.9 / np.max(np.abs(mixture))
    target *= peak
    noise *= peak
    mixture = target + noise
    return Scene(
        mixture=WaveBuffer(fs, mixture),
        target_image=WaveBuffer(fs, target),
        noise_image=WaveBuffer(fs, noise),
        spec=spec,
    )

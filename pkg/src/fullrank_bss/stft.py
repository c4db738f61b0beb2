"""Multichannel STFT analysis / weighted overlap-add synthesis.

Arrays follow the estimator convention: time-domain buffers are
``(n_samples, n_channels)`` and spectrograms are ``(n_freq, n_frames,
n_channels)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Spectrogram", "WaveBuffer", "hamming", "istft", "stft"]

DEFAULT_WINDOW = 4096
DEFAULT_HOP = 2048


@dataclass
class WaveBuffer:
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2:
            raise ValueError("samples must be (length, channels)")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        self.samples = samples

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class Spectrogram:
    data: np.ndarray
    window_len: int
    hop: int
    length: int | None = None
    sample_rate: int | None = None

    @property
    def freq_bins(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def hamming(n: int) -> np.ndarray:
    """Periodic Hamming window of length ``n``."""
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _check_geometry(window_len: int, hop: int) -> None:
    if window_len < 2 or window_len & (window_len - 1):
        raise ValueError(f"window_len must be a power of two, got {window_len}")
    if hop < 1 or window_len % hop:
        raise ValueError(f"hop {hop} must divide window_len {window_len}")


def _n_frames(length: int, window_len: int, hop: int) -> int:
    pad = window_len - hop
    return -(-(length + pad) // hop)


def stft(
    w: WaveBuffer | np.ndarray,
    window_len: int = DEFAULT_WINDOW,
    hop: int | None = None,
) -> Spectrogram:
    """One-sided STFT with a periodic Hamming window.

    The signal is zero-padded by ``window_len - hop`` samples at the front and
    enough at the back that every input sample is covered by
    ``window_len / hop`` frames.
    """
    if hop is None:
        hop = window_len // 2
    _check_geometry(window_len, hop)
    sample_rate = None
    if isinstance(w, WaveBuffer):
        sample_rate = w.sample_rate
        x = w.samples
    else:
        x = np.asarray(w, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
    length = x.shape[0]
    if window_len > length:
        raise ValueError("signal too short")

    pad = window_len - hop
    n_frames = _n_frames(length, window_len, hop)
    total = (n_frames - 1) * hop + window_len
    padded = np.zeros((total, x.shape[1]))
    padded[pad : pad + length] = x

    idx = np.arange(n_frames)[:, None] * hop + np.arange(window_len)[None, :]
    frames = padded[idx] * hamming(window_len)[None, :, None]
    data = np.fft.rfft(frames, axis=1)  # (J, I, M)
    return Spectrogram(
        data=np.ascontiguousarray(data.transpose(1, 0, 2)),
        window_len=window_len,
        hop=hop,
        length=length,
        sample_rate=sample_rate,
    )


def istft(
    S: Spectrogram | np.ndarray,
    window_len: int | None = None,
    hop: int | None = None,
    length: int | None = None,
    sample_rate: int | None = None,
) -> WaveBuffer:
    """Weighted overlap-add inverse of :func:`stft`.

    Synthesis frames are windowed again and the sum is divided by the
    overlapped squared window, which inverts :func:`stft` exactly wherever
    the squared-window sum is nonzero.
    """
    if isinstance(S, Spectrogram):
        data = S.data
        if window_len is not None and window_len != S.window_len:
            raise ValueError("window_len does not match the spectrogram geometry")
        if hop is not None and hop != S.hop:
            raise ValueError("hop does not match the spectrogram geometry")
        window_len, hop = S.window_len, S.hop
        length = S.length if length is None else length
        sample_rate = S.sample_rate if sample_rate is None else sample_rate
    else:
        data = np.asarray(S)
        if window_len is None:
            window_len = 2 * (data.shape[0] - 1)
        if hop is None:
            hop = window_len // 2
    _check_geometry(window_len, hop)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.shape[0] != window_len // 2 + 1:
        raise ValueError(
            f"spectrogram has {data.shape[0]} bins, expected {window_len // 2 + 1}"
        )

    n_frames = data.shape[1]
    win = hamming(window_len)
    frames = np.fft.irfft(data.transpose(1, 0, 2), n=window_len, axis=1)
    frames *= win[None, :, None]

    total = (n_frames - 1) * hop + window_len
    out = np.zeros((total, data.shape[2]))
    norm = np.zeros(total)
    for j in range(n_frames):
        out[j * hop : j * hop + window_len] += frames[j]
        norm[j * hop : j * hop + window_len] += win**2
    nz = norm > 1e-12
    out[nz] /= norm[nz, None]

    pad = window_len - hop
    if length is None:
        length = total - pad
    out = out[pad : pad + length]
    return WaveBuffer(sample_rate=sample_rate or 16000, samples=out)

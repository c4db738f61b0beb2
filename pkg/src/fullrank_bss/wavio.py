"""WAV read/write limited to 16-bit PCM and 32-bit IEEE float, 1-16 channels."""

from __future__ import annotations

import os

import numpy as np
from scipy.io import wavfile

from .stft import WaveBuffer

__all__ = ["read_wav", "write_wav", "WavFormatError"]

MAX_CHANNELS = 16


class WavFormatError(ValueError):
    pass


def read_wav(path: str | os.PathLike) -> WaveBuffer:
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise WavFormatError(f"{path}: unsupported WAV encoding ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: unsupported sample format {data.dtype}; "
            "only PCM 16-bit and IEEE float32 are accepted"
        )
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[1] > MAX_CHANNELS:
        raise WavFormatError(f"{path}: {samples.shape[1]} channels exceeds {MAX_CHANNELS}")
    return WaveBuffer(sample_rate=int(rate), samples=samples)


def write_wav(path: str | os.PathLike, buf: WaveBuffer, encoding: str = "float32") -> None:
    """Write ``buf`` as ``float32`` (default) or ``pcm16``; PCM output is clipped."""
    if buf.channels > MAX_CHANNELS:
        raise WavFormatError(f"{buf.channels} channels exceeds {MAX_CHANNELS}")
    if encoding == "float32":
        data = buf.samples.astype(np.float32)
    elif encoding == "pcm16":
        data = np.round(np.clip(buf.samples, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    else:
        raise WavFormatError(f"unknown encoding {encoding!r}")
    if data.shape[1] == 1:
        data = data[:, 0]
    wavfile.write(path, int(buf.sample_rate), data)

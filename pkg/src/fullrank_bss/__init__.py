"""Blind separation of a directional target from diffuse noise.

ILRMA provides an initial rank-1 separation; the noise spatial covariance is
then restored to full rank with an EM algorithm and the target is extracted
with a multichannel Wiener filter.
"""

__version__ = "0.1.0"

from .fullrank import EMConfig, run_em, wiener_filter
from .ilrma import IlrmaConfig, back_project, run_ilrma
from .metrics import EvalReport, bss_eval, sir_improvement
from .scene import SceneSpec, linear_array, simulate
from .stft import Spectrogram, WaveBuffer, istft, stft

__all__ = [
    "EMConfig",
    "EvalReport",
    "IlrmaConfig",
    "SceneSpec",
    "Spectrogram",
    "WaveBuffer",
    "__version__",
    "back_project",
    "bss_eval",
    "istft",
    "linear_array",
    "run_em",
    "run_ilrma",
    "simulate",
    "sir_improvement",
    "stft",
    "wiener_filter",
]

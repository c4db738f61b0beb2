"""BSS-Eval style SDR / SIR / SAR with time-invariant distortion filters.

Each estimate is decomposed against ``filter_len``-tap shifted copies of the
references: the projection onto its own reference is the target part, the
extra part explained by all references is interference, and the remainder is
artifacts. The decomposition is orthogonal, so the three energies sum to the
energy of the estimate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.signal import fftconvolve

from .stft import WaveBuffer

__all__ = ["EvalReport", "bss_eval", "decompose", "sir_improvement"]

DB_CLAMP = 100.0


@dataclass
class EvalReport:
    per_source: list
    permutation: list
    reference_channel: int = 0
    reference_kind: str = "spatial_image"
    filter_len: int = 512
    traces: dict = field(default_factory=dict)

    @property
    def sdr(self) -> np.ndarray:
        return np.array([s["sdr_db"] for s in self.per_source])

    @property
    def sir(self) -> np.ndarray:
        return np.array([s["sir_db"] for s in self.per_source])

    @property
    def sar(self) -> np.ndarray:
        return np.array([s["sar_db"] for s in self.per_source])

    def to_dict(self) -> dict:
        return {
            "per_source": [dict(s) for s in self.per_source],
            "permutation": list(self.permutation),
            "reference_channel": self.reference_channel,
            "reference_kind": self.reference_kind,
            "filter_len": self.filter_len,
            "traces": {k: list(v) for k, v in self.traces.items()},
        }


def _as_channel(x, channel: int) -> np.ndarray:
    if isinstance(x, WaveBuffer):
        x = x.samples
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, channel]
    if x.ndim != 1:
        raise ValueError("signals must be 1-D or (length, channels)")
    return x


def _db(num: float, den: float) -> float:
    if num <= 0:
        return -DB_CLAMP
    if den <= 0:
        return DB_CLAMP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CLAMP, DB_CLAMP))


def _xcorr(a: np.ndarray, b: np.ndarray, n_lags: int, nfft: int) -> np.ndarray:
    """``c[k] = sum_t a[t] b[t + k]`` for ``k = -(n_lags-1) .. n_lags-1``."""
    c = np.fft.irfft(np.conj(np.fft.rfft(a, nfft)) * np.fft.rfft(b, nfft), nfft)
    return np.concatenate([c[nfft - n_lags + 1 :], c[:n_lags]])


class _Projector:
    def __init__(self, refs: np.ndarray, filter_len: int):
        self.refs = refs
        self.L = filter_len
        n_src, T = refs.shape
        self.nfft = int(2 ** np.ceil(np.log2(T + filter_len)))
        L = filter_len
        G = np.zeros((n_src * L, n_src * L))
        for a in range(n_src):
            for b in range(a, n_src):
                c = _xcorr(refs[a], refs[b], L, self.nfft)
                # <shift_k r_a, shift_l r_b> = c[k - l]
                block = scipy.linalg.toeplitz(c[L - 1 :], c[L - 1 :: -1])
                G[a * L : (a + 1) * L, b * L : (b + 1) * L] = block
                G[b * L : (b + 1) * L, a * L : (a + 1) * L] = block.T
        self.G = G

    def _solve(self, G, D):
        try:
            return scipy.linalg.solve(G, D, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
            return np.linalg.lstsq(G, D, rcond=None)[0]

    def decompose(self, est: np.ndarray, j: int):
        L = self.L
        n_src, T = self.refs.shape
        D = np.concatenate([_xcorr(r, est, L, self.nfft)[L - 1 :] for r in self.refs])
        e = np.concatenate([est, np.zeros(L - 1)])

        sl = slice(j * L, (j + 1) * L)
        c_t = self._solve(self.G[sl, sl], D[sl])
        s_target = fftconvolve(self.refs[j], c_t)
        c_all = self._solve(self.G, D).reshape(n_src, L)
        p_all = sum(fftconvolve(self.refs[a], c_all[a]) for a in range(n_src))
        return s_target, p_all - s_target, e - p_all


def decompose(estimate, references, j: int, filter_len: int = 512, channel: int = 0):
    """Return ``(s_target, e_interf, e_artif)`` for ``estimate`` against reference ``j``.

    Outputs have length ``T + filter_len - 1``; the estimate is zero-padded
    to that length before the split.
    """
    refs = np.stack([_as_channel(r, channel) for r in references])
    return _Projector(refs, filter_len).decompose(_as_channel(estimate, channel), j)


def _criteria(s_target, e_interf, e_artif) -> dict:
    st = float(np.sum(s_target**2))
    ei = float(np.sum(e_interf**2))
    ea = float(np.sum(e_artif**2))
    return {
        "sdr_db": _db(st, float(np.sum((e_interf + e_artif) ** 2))),
        "sir_db": _db(st, ei),
        "sar_db": _db(st + ei, ea),
    }


def bss_eval(
    estimates, references, filter_len: int = 512, channel: int = 0, permute: bool = True
) -> EvalReport:
    """Evaluate estimated signals against references with the best permutation.

    ``estimates`` and ``references`` are sequences of equal-length signals
    (arrays or :class:`WaveBuffer`); multichannel inputs are evaluated on
    ``channel``. ``permutation[k]`` is the estimate index matched to
    reference ``k``; the assignment maximizes the summed SIR unless
    ``permute=False``, in which case estimate ``k`` is scored against
    reference ``k``.
    """
    if filter_len < 1:
        raise ValueError("filter_len must be >= 1")
    refs = np.stack([_as_channel(r, channel) for r in references])
    ests = np.stack([_as_channel(e, channel) for e in estimates])
    if refs.shape[1] != ests.shape[1]:
        raise ValueError(
            f"length mismatch: references have {refs.shape[1]} samples, estimates {ests.shape[1]}"
        )
    if len(refs) != len(ests):
        raise ValueError("need as many estimates as references")
    if np.any(np.all(refs == 0, axis=1)):
        raise ValueError("reference signal is all zeros")

    proj = _Projector(refs, filter_len)
    n = len(refs)
    table = [[None] * n for _ in range(n)]  # table[k][j]: estimate k vs reference j
    for k in range(n):
        for j in range(n):
            if not permute and j != k:
                table[k][j] = {"sdr_db": -np.inf, "sir_db": -np.inf, "sar_db": -np.inf}
            elif not np.any(ests[k]):
                table[k][j] = {"sdr_db": -DB_CLAMP, "sir_db": -DB_CLAMP, "sar_db": -DB_CLAMP}
            else:
                table[k][j] = _criteria(*proj.decompose(ests[k], j))

    best = max(
        itertools.permutations(range(n)),
        key=lambda perm: sum(table[perm[j]][j]["sir_db"] for j in range(n)),
    )
    per_source = [table[best[j]][j] for j in range(n)]
    return EvalReport(
        per_source=per_source, permutation=list(best), reference_channel=channel, filter_len=filter_len
    )


def sir_improvement(before: EvalReport, after: EvalReport) -> np.ndarray:
    if len(before.per_source) != len(after.per_source):
        raise ValueError("reports cover different numbers of sources")
    return after.sir - before.sir

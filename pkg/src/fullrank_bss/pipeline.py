"""End-to-end separation runs shared by the CLI and the benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fullrank import EMConfig, EMResult, run_em, select_target_index, wiener_filter
from .ilrma import IlrmaConfig, IlrmaState, back_project, run_ilrma
from .metrics import bss_eval
from .stft import Spectrogram, WaveBuffer, istft, stft

__all__ = ["SeparationResult", "oracle_target_index", "separate"]

METHODS = ("ilrma", "proposed")


@dataclass
class SeparationResult:
    method: str
    target_index: int
    target: WaveBuffer
    noise: WaveBuffer
    X: np.ndarray
    h_hat: np.ndarray
    u_hat: np.ndarray
    ilrma: IlrmaState
    em: Optional[EMResult] = None
    traces: dict = field(default_factory=dict)
    timings_ms: dict = field(default_factory=dict)


def oracle_target_index(state: IlrmaState, target_spec: np.ndarray) -> int:
    """ILRMA output whose back-projected image is closest to the true target image."""
    errors = [np.sum(np.abs(back_project(state, n) - target_spec) ** 2) for n in range(state.n_sources)]
    return int(np.argmin(errors))


def _render(S: np.ndarray, geometry: Spectrogram) -> WaveBuffer:
    return istft(
        Spectrogram(S, geometry.window_len, geometry.hop, geometry.length, geometry.sample_rate)
    )


def separate(
    mixture: WaveBuffer,
    method: str = "proposed",
    window_len: int = 4096,
    hop: Optional[int] = None,
    ilrma_cfg: IlrmaConfig = IlrmaConfig(),
    em_cfg: EMConfig = EMConfig(),
    target_index: Optional[int | str] = None,
    references: Optional[tuple[WaveBuffer, WaveBuffer]] = None,
    trace_every: int = 0,
    filter_len: int = 512,
    channel: int = 0,
) -> SeparationResult:
    """Separate ``mixture`` into target and noise images.

    ``target_index`` is an ILRMA output index, ``None``/``"auto"`` for the
    power heuristic, or ``"oracle"`` (requires ``references``). When
    ``references = (target_image, noise_image)`` and ``trace_every > 0``,
    target SDR/SIR are recorded every ``trace_every`` iterations (ILRMA
    iterations for ``ilrma``, EM iterations for ``proposed``) plus the last.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if mixture.channels < 2:
        raise ValueError("at least two microphones required")
    timings = {}
    traces = {}

    t0 = time.perf_counter()
    spec = stft(mixture, window_len, hop)
    X = spec.data
    timings["stft"] = 1e3 * (time.perf_counter() - t0)

    trace_on = references is not None and trace_every > 0
    mix_ch = mixture.samples[:, channel]

    def score(h_spec: np.ndarray) -> tuple[float, float]:
        h = _render(h_spec, spec).samples[:, channel]
        rep = bss_eval([h, mix_ch - h], references, filter_len, channel, permute=False)
        return float(rep.sdr[0]), float(rep.sir[0])

    def traced(k: int, last: int) -> bool:
        return trace_on and (k % trace_every == 0 or k == last)

    snapshots = []

    def on_ilrma(k: int, state: IlrmaState) -> None:
        if method == "ilrma" and traced(k, ilrma_cfg.n_iters):
            snapshots.append((k, state.copy()))

    t0 = time.perf_counter()
    state = run_ilrma(X, ilrma_cfg, callback=on_ilrma)
    timings["ilrma"] = 1e3 * (time.perf_counter() - t0)
    traces["ilrma_cost"] = list(state.cost_trace)

    if target_index is None or target_index == "auto":
        n_h = select_target_index(state)
    elif target_index == "oracle":
        if references is None:
            raise ValueError("oracle target selection needs reference images")
        n_h = oracle_target_index(state, stft(references[0], window_len, hop).data)
    else:
        n_h = int(target_index)
        if not 0 <= n_h < state.n_sources:
            raise ValueError(f"target index {n_h} out of range for {state.n_sources} sources")

    if snapshots:
        scores = [(k, *score(back_project(s, n_h))) for k, s in snapshots]
        traces["iteration"] = [k for k, _, _ in scores]
        traces["sdr_db"] = [v for _, v, _ in scores]
        traces["sir_db"] = [v for _, _, v in scores]

    em = None
    if method == "ilrma":
        h_hat = back_project(state, n_h)
        u_hat = X - h_hat
    else:
        em_scores = []

        def on_em(k, target, noise):
            if traced(k, em_cfg.n_iters):
                em_scores.append((k, *score(wiener_filter(X, target, noise)[0])))

        t0 = time.perf_counter()
        em = run_em(X, state, n_h, em_cfg, callback=on_em if trace_on else None)
        h_hat, u_hat = wiener_filter(X, em.target, em.noise)
        timings["em"] = 1e3 * (time.perf_counter() - t0)
        traces["em_objective"] = list(em.objective)
        if em_scores:
            traces["iteration"] = [k for k, _, _ in em_scores]
            traces["sdr_db"] = [v for _, v, _ in em_scores]
            traces["sir_db"] = [v for _, _, v in em_scores]

    t0 = time.perf_counter()
    target, noise = _render(h_hat, spec), _render(u_hat, spec)
    timings["istft"] = 1e3 * (time.perf_counter() - t0)
    return SeparationResult(
        method=method,
        target_index=n_h,
        target=target,
        noise=noise,
        X=X,
        h_hat=h_hat,
        u_hat=u_hat,
        ilrma=state,
        em=em,
        traces=traces,
        timings_ms=timings,
    )

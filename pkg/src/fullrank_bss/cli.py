"""Command-line interface: simulate | separate | eval | bench.

Option values resolve as defaults < ``--config`` file < ``FRBSS_*``
environment variables < command-line flags. Exit codes: 0 success, 1
runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchConfig, run_bench
from .fullrank import EMConfig
from .ilrma import IlrmaConfig
from .manifest import RunManifest
from .metrics import bss_eval
from .pipeline import separate
from .scene import NOISE_KINDS, SOURCE_KINDS, SceneSpec, linear_array, simulate
from .wavio import read_wav, write_wav

logger = logging.getLogger("fullrank_bss")

ENV_PREFIX = "FRBSS_"


class UsageError(Exception):
    pass


def _floats(text) -> list[float]:
    if isinstance(text, list):
        return text
    return [float(t) for t in str(text).split(",") if t.strip()]


def _ints(text) -> list[int]:
    if isinstance(text, list):
        return text
    return [int(t) for t in str(text).split(",") if t.strip()]


def _strs(text) -> list[str]:
    if isinstance(text, list):
        return text
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _opt_int(text):
    return None if text in (None, "", "none", "None") else int(text)


def _target_index(text):
    if text in ("auto", "oracle"):
        return text
    return int(text)


# (flag, type, default, help)
COMMON = [
    ("--seed", int, 0, "random seed"),
    ("--out", str, None, "output directory or file"),
    ("--format", str, "json", "json or csv"),
    ("--threads", int, 1, "worker processes (bench)"),
]

SCENE = [
    ("--target-az", float, 30.0, "target azimuth in degrees"),
    ("--noise-az", _floats, None, "comma-separated noise azimuths"),
    ("--snr", float, 0.0, "target-to-noise ratio in dB"),
    ("--duration", float, 3.0, "seconds"),
    ("--source-kind", str, "speech_like", "/".join(SOURCE_KINDS)),
    ("--noise-kind", str, "babble", "/".join(NOISE_KINDS)),
    ("--mics", int, 3, "microphones in the linear array"),
    ("--spacing", float, 0.04, "microphone spacing in metres"),
    ("--sample-rate", int, 16000, "Hz"),
    ("--window", int, 512, "STFT window used to render the scene"),
    ("--encoding", str, "float32", "float32 or pcm16"),
]

SEPARATION = [
    ("--method", str, "proposed", "ilrma or proposed"),
    ("--window", int, 4096, "STFT window length"),
    ("--hop", _opt_int, None, "STFT hop (default window/2)"),
    ("--bases", int, 10, "NMF bases per source"),
    ("--iters-ilrma", int, 50, "ILRMA iterations"),
    ("--iters-em", int, 200, "EM iterations"),
    ("--alpha", float, 0.7, "inverse-gamma shape"),
    ("--beta", float, 1e-16, "inverse-gamma scale"),
    ("--target-index", _target_index, "auto", "ILRMA output index, auto, or oracle"),
    ("--trace-every", int, 0, "score every k iterations (needs references)"),
    ("--filter-len", int, 512, "BSS-Eval filter taps"),
    ("--channel", int, 0, "reference channel for evaluation"),
]

SEPARATE = [
    ("--ref-target", str, None, "target image WAV for traces"),
    ("--ref-noise", str, None, "noise image WAV for traces"),
]

EVAL = [
    ("--estimates", _strs, None, "comma-separated estimate WAVs"),
    ("--references", _strs, None, "comma-separated reference WAVs"),
    ("--filter-len", int, 512, "BSS-Eval filter taps"),
    ("--channel", int, 0, "reference channel"),
    ("--no-permute", bool, False, "score estimate k against reference k"),
    ("--traces", str, None, "manifest whose traces are exported"),
]

BENCH = [
    ("--seeds", _ints, [0, 1, 2, 3, 4, 5, 6, 7, 8, 9], "ILRMA initialization seeds"),
    ("--directions", _floats, [30.0, 20.0, 10.0, 0.0], "target azimuths"),
    ("--methods", _strs, ["ilrma", "proposed"], "methods to compare"),
    ("--snr", float, 0.0, "dB"),
    ("--duration", float, 4.0, "seconds"),
    ("--source-kind", str, "speech_like", "/".join(SOURCE_KINDS)),
    ("--noise-kind", str, "babble", "/".join(NOISE_KINDS)),
    ("--mics", int, 3, "microphones"),
    ("--spacing", float, 0.04, "metres"),
    ("--window", int, 512, "STFT window length"),
    ("--hop", _opt_int, None, "STFT hop"),
    ("--bases", int, 10, "NMF bases per source"),
    ("--iters-ilrma", int, 50, "ILRMA iterations"),
    ("--iters-em", int, 200, "EM iterations"),
    ("--alpha", float, 0.7, "inverse-gamma shape"),
    ("--beta", float, 1e-16, "inverse-gamma scale"),
    ("--target-index", str, "oracle", "auto or oracle"),
    ("--trace-every", int, 10, "score every k iterations"),
    ("--filter-len", int, 512, "BSS-Eval filter taps"),
    ("--channel", int, 0, "reference channel"),
]

COMMANDS = {
    "simulate": SCENE,
    "separate": [o for o in SEPARATION] + SEPARATE,
    "eval": EVAL,
    "bench": BENCH,
}


def _dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def _options(command: str) -> dict:
    return {_dest(f): (t, d) for f, t, d, _ in COMMON + COMMANDS[command]}


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(kind, value):
    return _parse_bool(value) if kind is bool else kind(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fullrank-bss", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "separate":
            p.add_argument("input", help="multichannel mixture WAV")
        for flag, kind, _, helptext in COMMON + opts:
            if kind is bool:
                p.add_argument(flag, action="store_true", default=argparse.SUPPRESS, help=helptext)
            else:
                p.add_argument(flag, default=argparse.SUPPRESS, help=helptext)
    return parser


def read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(command: str, ns: argparse.Namespace, environ=None) -> dict:
    """Merge defaults, config file, environment and flags into typed options."""
    environ = os.environ if environ is None else environ
    opts = _options(command)
    layers = []
    if ns.config:
        try:
            layers.append(("config", read_config(ns.config)))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    layers.append(("environment", {k: environ[ENV_PREFIX + k.upper()] for k in opts if ENV_PREFIX + k.upper() in environ}))
    layers.append(("flag", {k: v for k, v in vars(ns).items() if k in opts}))

    values = {k: d for k, (_, d) in opts.items()}
    for origin, layer in layers:
        for key, raw in layer.items():
            if key not in opts:
                raise UsageError(f"unknown {origin} key {key!r}")
            kind = opts[key][0]
            try:
                values[key] = _convert(kind, raw)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"invalid {origin} value for {key}: {raw!r}") from exc
    if values["format"] not in ("json", "csv"):
        raise UsageError("--format must be json or csv")
    if values["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return values


def _write_csv(path_or_none, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if path_or_none is None:
        sys.stdout.write(buf.getvalue())
    else:
        Path(path_or_none).write_text(buf.getvalue())


def _trace_rows(traces: dict) -> tuple[list, list]:
    header = ["iteration", "sdr_db", "sir_db"]
    it = traces.get("iteration", [])
    return header, [[k, traces["sdr_db"][n], traces["sir_db"][n]] for n, k in enumerate(it)]


def cmd_simulate(o: dict) -> int:
    try:
        spec = SceneSpec(
            target_azimuth=o["target_az"],
            noise_azimuths=o["noise_az"],
            snr_db=o["snr"],
            duration=o["duration"],
            seed=o["seed"],
            source_kind=o["source_kind"],
            noise_kind=o["noise_kind"],
            sample_rate=o["sample_rate"],
        )
        geom = linear_array(o["mics"], o["spacing"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if o["encoding"] not in ("float32", "pcm16"):
        raise UsageError("--encoding must be float32 or pcm16")
    out = Path(o["out"] or "scene")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    scene = simulate(geom, spec, window_len=o["window"])
    t_sim = 1e3 * (time.perf_counter() - t0)
    names = {"mixture": "mixture.wav", "target_image": "target.wav", "noise_image": "noise.wav"}
    for attr, fname in names.items():
        write_wav(out / fname, getattr(scene, attr), encoding=o["encoding"])
    config = dict(o, scene=asdict(spec), mic_positions=geom.mic_positions, speed_of_sound=geom.speed_of_sound)
    RunManifest("simulate", config=config, artifacts=names, timings_ms={"simulate": t_sim}).write(
        out / "manifest.json"
    )
    print(out / "manifest.json")
    return 0


def cmd_separate(o: dict, input_path: str) -> int:
    if o["method"] not in ("ilrma", "proposed"):
        raise UsageError("--method must be ilrma or proposed")
    if (o["ref_target"] is None) != (o["ref_noise"] is None):
        raise UsageError("--ref-target and --ref-noise go together")
    try:
        ilrma_cfg = IlrmaConfig(n_bases=o["bases"], n_iters=o["iters_ilrma"], seed=o["seed"])
        em_cfg = EMConfig(alpha=o["alpha"], beta=o["beta"], n_iters=o["iters_em"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    mixture = read_wav(input_path)
    refs = None
    if o["ref_target"] is not None:
        refs = (read_wav(o["ref_target"]), read_wav(o["ref_noise"]))
    res = separate(
        mixture,
        method=o["method"],
        window_len=o["window"],
        hop=o["hop"],
        ilrma_cfg=ilrma_cfg,
        em_cfg=em_cfg,
        target_index=o["target_index"],
        references=refs,
        trace_every=o["trace_every"],
        filter_len=o["filter_len"],
        channel=o["channel"],
    )
    out = Path(o["out"] or "separated")
    out.mkdir(parents=True, exist_ok=True)
    write_wav(out / "target.wav", res.target, encoding="float32")
    write_wav(out / "noise.wav", res.noise, encoding="float32")
    artifacts = {"input": str(Path(input_path).resolve()), "target": "target.wav", "noise": "noise.wav"}
    if o["format"] == "csv" and "iteration" in res.traces:
        _write_csv(out / "traces.csv", *_trace_rows(res.traces))
        artifacts["traces_csv"] = "traces.csv"
    config = dict(o, input=str(input_path), hop=o["hop"] or o["window"] // 2)
    RunManifest(
        "separate",
        config=config,
        artifacts=artifacts,
        traces=res.traces,
        timings_ms=res.timings_ms,
        results={"target_index": res.target_index},
    ).write(out / "manifest.json")
    print(out / "manifest.json")
    return 0


def cmd_eval(o: dict) -> int:
    if not o["estimates"] or not o["references"]:
        raise UsageError("--estimates and --references are required")
    ests = [read_wav(p) for p in o["estimates"]]
    refs = [read_wav(p) for p in o["references"]]
    report = bss_eval(ests, refs, o["filter_len"], o["channel"], permute=not o["no_permute"])
    if o["traces"]:
        report.traces = RunManifest.read(o["traces"]).traces
    if o["format"] == "csv":
        if o["traces"]:
            _write_csv(o["out"], *_trace_rows(report.traces))
        else:
            rows = [[j, report.permutation[j], s["sdr_db"], s["sir_db"], s["sar_db"]] for j, s in enumerate(report.per_source)]
            _write_csv(o["out"], ["reference", "estimate", "sdr_db", "sir_db", "sar_db"], rows)
    else:
        text = json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
        if o["out"] is None:
            sys.stdout.write(text)
        else:
            Path(o["out"]).write_text(text)
    return 0


ROW_FIELDS = [
    "seed", "direction", "method", "status", "target_index", "sdr_db", "sir_db", "sar_db",
    "noise_sir_db", "sdr_improvement_db", "sir_improvement_db", "elapsed_ms", "error",
]


def cmd_bench(o: dict) -> int:
    try:
        cfg = BenchConfig(
            seeds=o["seeds"],
            directions=o["directions"],
            methods=o["methods"],
            scene_seed=o["seed"],
            snr_db=o["snr"],
            duration=o["duration"],
            source_kind=o["source_kind"],
            noise_kind=o["noise_kind"],
            n_mics=o["mics"],
            spacing=o["spacing"],
            window_len=o["window"],
            hop=o["hop"],
            n_bases=o["bases"],
            iters_ilrma=o["iters_ilrma"],
            iters_em=o["iters_em"],
            alpha=o["alpha"],
            beta=o["beta"],
            target_index=o["target_index"],
            trace_every=o["trace_every"],
            filter_len=o["filter_len"],
            channel=o["channel"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    t0 = time.perf_counter()
    rows, agg = run_bench(cfg, workers=o["threads"])
    elapsed = 1e3 * (time.perf_counter() - t0)
    out = Path(o["out"] or "bench")
    out.mkdir(parents=True, exist_ok=True)
    artifacts = {}
    if o["format"] == "csv":
        _write_csv(out / "cells.csv", ROW_FIELDS, [[r.get(k, "") for k in ROW_FIELDS] for r in rows])
        agg_rows = []
        for method, block in agg.items():
            for k, v in zip(block.get("trace_iteration", []), block.get("mean_trace_sdr_db", [])):
                agg_rows.append([method, k, v])
        _write_csv(out / "mean_traces.csv", ["method", "iteration", "mean_sdr_db"], agg_rows)
        artifacts = {"cells": "cells.csv", "mean_traces": "mean_traces.csv"}
    else:
        text = json.dumps({"rows": rows, "aggregate": agg}, sort_keys=True, indent=2, default=float) + "\n"
        (out / "bench.json").write_text(text)
        artifacts = {"bench": "bench.json"}
    RunManifest(
        "bench",
        config=dict(o, **{"cfg": asdict(cfg)}),
        artifacts=artifacts,
        results={"aggregate": agg, "failed_cells": sum(r["status"] != "ok" for r in rows)},
        timings_ms={"total": elapsed, "cells": [r["elapsed_ms"] for r in rows]},
    ).write(out / "manifest.json")
    print(out / "manifest.json")
    return 0


def main(argv=None, environ=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        o = resolve(ns.command, ns, environ)
        if ns.command == "simulate":
            return cmd_simulate(o)
        if ns.command == "separate":
            return cmd_separate(o, ns.input)
        if ns.command == "eval":
            return cmd_eval(o)
        return cmd_bench(o)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

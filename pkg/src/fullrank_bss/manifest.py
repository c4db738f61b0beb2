"""Versioned JSON run manifests."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

__all__ = ["ManifestError", "RunManifest", "SCHEMA_VERSION"]

SCHEMA_VERSION = "1.0"


class ManifestError(ValueError):
    pass


def _plain(x):
    # JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return _plain(x.item())
    if isinstance(x, Path):
        return str(x)
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    timings_ms: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    version: str = __version__
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return _plain(
            {
                "schema_version": self.schema_version,
                "version": self.version,
                "command": self.command,
                "config": self.config,
                "artifacts": self.artifacts,
                "traces": self.traces,
                "timings_ms": self.timings_ms,
                "results": self.results,
            }
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunManifest":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
        schema = str(d.get("schema_version", ""))
        major = schema.split(".")[0]
        if major != SCHEMA_VERSION.split(".")[0]:
            raise ManifestError(f"unsupported manifest schema version {schema!r}")
        known = {"schema_version", "version", "command", "config", "artifacts", "traces", "timings_ms", "results"}
        if "command" not in d:
            raise ManifestError("manifest lacks a command field")
        return cls(**{k: v for k, v in d.items() if k in known})

    def write(self, path, base_dir=None) -> Path:
        """Write to ``path`` after checking every artifact path exists.

        Relative artifact paths are resolved against ``base_dir`` (default:
        the manifest's directory).
        """
        path = Path(path)
        base = Path(base_dir) if base_dir is not None else path.parent
        missing = [str(p) for p in _paths(self.artifacts) if not (base / p).exists()]
        if missing:
            raise ManifestError(f"artifact paths do not exist: {', '.join(missing)}")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls.loads(Path(path).read_text())


def _paths(artifacts):
    if isinstance(artifacts, dict):
        for v in artifacts.values():
            yield from _paths(v)
    elif isinstance(artifacts, (list, tuple)):
        for v in artifacts:
            yield from _paths(v)
    elif isinstance(artifacts, (str, Path)):
        yield artifacts

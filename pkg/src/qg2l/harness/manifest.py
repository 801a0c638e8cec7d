"""Artifact writing, checksums, report validation and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .. import __version__
from ..model import checkpoint_bytes
from ..spectral import SpectralField2L

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def fmt(x) -> str:
    """17 significant digits: enough to round-trip any double."""
    return format(float(x), ".17g")


def sanitize(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return sanitize(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def report_schema() -> dict:
    return json.loads(resources.files("qg2l.harness").joinpath("report_schema.json").read_text())


def validate_report(report: dict) -> None:
    jsonschema.validate(report, report_schema())


@dataclass
class Output:
    """Single owner of every file written into one output directory."""

    root: Path
    formats: set
    artifacts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _register(self, name: str):
        self.artifacts[name] = sha256_file(self.root / name)

    def csv(self, name: str, header: list[str], columns: list[np.ndarray]):
        if "csv" not in self.formats:
            return
        with open(self.root / name, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for row in zip(*columns):
                wr.writerow([fmt(v) for v in row])
        self._register(name)

    def checkpoint(self, name: str, q: SpectralField2L, time: float):
        if "checkpoint" not in self.formats:
            return
        (self.root / name).write_bytes(checkpoint_bytes(q, time))
        self._register(name)

    def json(self, name: str, obj: dict, validate: bool = True):
        data = sanitize(obj)
        if validate:
            validate_report(data)
        if "json" not in self.formats:
            return data
        (self.root / name).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        self._register(name)
        return data


def write_manifest(out: Output, *, command: str, config_text: str, config_hash: str,
                   seed: int, threads: int, wall: dict, exit_code: int, extra: dict | None = None):
    m = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config_text,
        "config_hash": config_hash,
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seeds": {"master": seed},
        "threads": threads,
        "wall_clock": wall,
        "exit_code": exit_code,
        "artifacts": dict(sorted(out.artifacts.items())),
    }
    if extra:
        m.update(extra)
    (out.root / MANIFEST_NAME).write_text(json.dumps(sanitize(m), indent=2, sort_keys=True) + "\n")
    return m


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path) as fh:
        return json.load(fh)


def compare_artifacts(expected: dict, actual: dict) -> list[dict]:
    """Per-artifact differences between two checksum maps (empty when identical)."""
    diffs = []
    for name in sorted(set(expected) | set(actual)):
        a, b = expected.get(name), actual.get(name)
        if a != b:
            diffs.append({"artifact": name, "expected": a, "actual": b})
    return diffs

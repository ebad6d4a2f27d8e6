"""Structured experiment reports and their on-disk form.

Every experiment emits one report: scalar estimates with the thresholds they
were judged against, asserted flags (all must hold for a passing exit),
informational warnings, tabular series, and full provenance. Reports write
as JSON plus one CSV per series plus a manifest; all floats are serialized
with round-trip (17 significant digit) precision so a re-run can be compared
bit for bit.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class ExperimentReport:
    """Uniform result container for every experiment kind."""

    kind: str
    estimates: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)  # asserted: all True means pass
    warnings: dict = field(default_factory=dict)  # informational only
    series: dict = field(default_factory=dict)  # name -> {column -> list}
    provenance: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(bool(v) for v in self.flags.values())

    def to_dict(self) -> dict:
        return _jsonable({
            "kind": self.kind,
            "passed": self.passed,
            "estimates": self.estimates,
            "thresholds": self.thresholds,
            "flags": self.flags,
            "warnings": self.warnings,
            "series": self.series,
            "provenance": self.provenance,
            "error": self.error,
        })


def repr_float(x) -> str:
    """Shortest decimal that round-trips the exact binary value."""
    return repr(float(x))


def write_report(report: ExperimentReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json, manifest.json and one CSV per series.

    Returns the mapping of artifact names to paths. Partial reports (with an
    error set) are written the same way so failed runs keep their evidence.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    report_path = out / "report.json"
    with report_path.open("w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["report"] = report_path

    for name, columns in report.series.items():
        csv_path = out / f"{name}.csv"
        cols = list(columns.keys())
        rows = zip(*(columns[c] for c in cols)) if cols else []
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in rows:
                writer.writerow([repr_float(x) if isinstance(x, (float, np.floating)) else x
                                 for x in row])
        paths[name] = csv_path

    manifest_path = out / "manifest.json"
    manifest = {
        "kind": report.kind,
        "passed": report.passed,
        "tool_version": _tool_version(),
        "wallclock_s": report.provenance.get("wallclock_s"),
        "seed": report.provenance.get("seed"),
        "config_sha256": report.provenance.get("config_sha256"),
        "config_echo": report.provenance.get("config_echo"),
    }
    with manifest_path.open("w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["manifest"] = manifest_path
    return paths


def _tool_version() -> str:
    from envwalk import __version__

    return __version__


def read_report(path: str | Path) -> dict:
    with Path(path).open() as fh:
        return json.load(fh)


def write_history_table(values: np.ndarray, out_path: str | Path, symbols,
                        manifest: dict) -> None:
    """Persist an environment history as (t, site, value) rows plus manifest."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    flat = values.reshape(values.shape[0], -1)
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "site", "value"])
        for t in range(flat.shape[0]):
            for s in range(flat.shape[1]):
                writer.writerow([t, s, symbols[flat[t, s]]])
    with out_path.with_suffix(".manifest.json").open("w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trajectory_csv(positions: np.ndarray, increments: np.ndarray,
                         out_path: str | Path) -> None:
    """Trajectory export: t, position components, increment components."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    d = positions.shape[1]
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{k}" for k in range(d)] + [f"dx{k}" for k in range(d)])
        for t in range(positions.shape[0]):
            inc = increments[t - 1] if t > 0 else np.zeros(d, dtype=np.int64)
            writer.writerow([t] + [int(c) for c in positions[t]] + [int(c) for c in inc])

"""Run reports: one JSON document and one CSV table with identical rows.

Reports are written atomically (temp file in the target directory, then
rename), so a crashed run never leaves a truncated report behind. Reruns
with the same config and seed produce byte-identical files except for the
"timing" block of the JSON, which sits outside the numbers and is the only
part a comparison should strip.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ValidationError

ARTIFACT_VERSION = "0.1.0"


@dataclass(frozen=True)
class ReportRow:
    name: str
    accuracy: float
    gap: float

    def __post_init__(self):
        if not (np.isfinite(self.accuracy) and np.isfinite(self.gap)):
            raise ValidationError(f"row {self.name!r}: non-finite metric value")


@dataclass
class EvalReport:
    command: str
    config: dict
    config_hash: str
    seed: int
    rows: list[ReportRow] = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def numbers_dict(self) -> dict:
        """Everything a rerun must reproduce exactly; excludes timing."""
        payload = {
            "artifact_version": ARTIFACT_VERSION,
            "command": self.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "rows": [
                {"name": r.name, "accuracy": r.accuracy, "gap": r.gap} for r in self.rows
            ],
        }
        if self.details:
            payload["details"] = self.details
        return payload

    def to_json(self) -> str:
        payload = self.numbers_dict()
        payload["timing"] = self.timing
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "accuracy", "gap"])
        for r in self.rows:
            writer.writerow([r.name, repr(float(r.accuracy)), repr(float(r.gap))])
        return buf.getvalue()

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise ValidationError(f"report has no row named {name!r}")


def report_timing(started: float, finished: float, threads: int = 1) -> dict:
    return {
        "started_utc": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "wall_clock_seconds": finished - started,
        "threads": threads,
    }


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(report: EvalReport, out_dir, basename: str) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    json_path = out_dir / f"{basename}.json"
    csv_path = out_dir / f"{basename}.csv"
    atomic_write_text(json_path, report.to_json())
    atomic_write_text(csv_path, report.to_csv())
    return json_path, csv_path


def load_report_numbers(path) -> dict:
    """Parsed report with the timing block stripped, for exact comparisons."""
    payload = json.loads(Path(path).read_text())
    payload.pop("timing", None)
    return payload

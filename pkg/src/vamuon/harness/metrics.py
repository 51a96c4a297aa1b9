"""CSV metrics and JSON run summaries."""

from __future__ import annotations

import csv
import json
import math
import subprocess
from dataclasses import astuple, dataclass
from functools import lru_cache
from pathlib import Path

from .. import __version__

CSV_COLUMNS = ("step", "eta", "train_loss", "grad_norm", "update_norm", "wall_ms")


@dataclass(frozen=True)
class RunRecord:
    step: int
    eta: float
    train_loss: float
    grad_norm: float
    update_norm: float
    wall_ms: float

    def is_finite(self) -> bool:
        return all(math.isfinite(x) for x in astuple(self))


def _fmt(x: float) -> str:
    # 17 significant digits round-trip every float64 exactly
    return format(float(x), ".17g")


def write_csv(records, path) -> Path:
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([str(int(r.step))] + [_fmt(getattr(r, c)) for c in CSV_COLUMNS[1:]])
    return path


def read_csv(path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        return [RunRecord(int(row[0]), *(float(x) for x in row[1:])) for row in reader]


@lru_cache(maxsize=1)
def build_id() -> str:
    """Package version plus the git revision of the source tree, when available."""
    rev = "unknown"
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            rev = out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"vamuon-{__version__}+{rev}"


def write_summary(path, summary: dict, config: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"build": build_id(), "config": config, "summary": summary}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_summary(path) -> dict:
    return json.loads(Path(path).read_text())


def emit_metrics(records, out_dir, summary: dict | None = None, config: dict | None = None) -> dict[str, Path]:
    """Write ``metrics.csv`` (and ``summary.json`` when a summary is given) under `out_dir`."""
    out_dir = Path(out_dir)
    paths = {"csv": write_csv(records, out_dir / "metrics.csv")}
    if summary is not None:
        paths["summary"] = write_summary(out_dir / "summary.json", summary, config or {})
    return paths

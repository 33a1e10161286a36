"""Results emission: sweep CSV/JSON files and run manifests."""

import csv
import io
import json
import logging
import platform
from datetime import datetime, timezone
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from .types import GramStat, OutputFormat, RunConfig, SweepRecord, SweepResult

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("N", "seed", "error", "gram_rms", "wall_ms")
GRAM_COLUMNS = ("N", "trials", "max_abs", "rms", "kernel_max")


def _write_text(path: Path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    except OSError as e:
        raise OSError(f"Failed to write results to {path}: {e}") from e
    return path


def _csv_text(columns: tuple[str, ...], rows: list[tuple]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def emit_results(sweep: SweepResult, format: OutputFormat, path: Path) -> Path:
    """Write sweep records as CSV (records only) or JSON (records and metadata).

    Output is a pure function of the sweep: floats use ``repr`` and records
    are ordered by (N, seed).

    Raises:
        OSError: On write failure; the message names the path.
    """
    if format == "csv":
        rows = [
            (r.N, r.seed, float(r.error), float(r.gram_rms), float(r.wall_ms))
            for r in sweep.records
        ]
        text = _csv_text(CSV_COLUMNS, rows)
    elif format == "json":
        text = sweep.model_dump_json(indent=2) + "\n"
    else:
        raise ValueError(f"Unsupported results format: {format}")
    _write_text(path, text)
    logger.info(f"Wrote {len(sweep.records)} record(s) to {path}")
    return Path(path)


def read_results_csv(path: Path) -> list[SweepRecord]:
    """Parse a CSV written by :func:`emit_results`."""
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [
            SweepRecord(
                N=int(row["N"]),
                seed=int(row["seed"]),
                error=float(row["error"]),
                gram_rms=float(row["gram_rms"]),
                wall_ms=float(row["wall_ms"]),
            )
            for row in reader
        ]


def emit_gram_stats(stats: list[GramStat], format: OutputFormat, path: Path) -> Path:
    """Write Gram convergence statistics, one row per N."""
    if format == "csv":
        rows = [
            (s.N, s.trials, float(s.max_abs), float(s.rms), float(s.kernel_max))
            for s in stats
        ]
        text = _csv_text(GRAM_COLUMNS, rows)
    else:
        text = json.dumps([s.model_dump() for s in stats], indent=2) + "\n"
    _write_text(path, text)
    logger.info(f"Wrote Gram statistics for {len(stats)} N value(s) to {path}")
    return Path(path)


def _version(dist: str) -> str:
    try:
        return importlib_metadata.version(dist)
    except importlib_metadata.PackageNotFoundError:
        return "unknown"


def environment_versions() -> dict[str, str]:
    return {
        "specklekernel": _version("specklekernel"),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def manifest_path(results_path: Path) -> Path:
    """``results/run.csv`` -> ``results/run.manifest.json``."""
    results_path = Path(results_path)
    return results_path.with_name(results_path.stem + ".manifest.json")


def write_manifest(
    path: Path,
    config: RunConfig,
    *,
    datasets: dict[str, str],
    results_file: Path | None = None,
    partial: bool = False,
    extra: dict[str, Any] | None = None,
) -> Path:
    """Write the JSON manifest needed to rerun an experiment.

    Args:
        path: Manifest file path.
        config: The validated run configuration.
        datasets: SHA-256 per dataset split.
        results_file: Results file the manifest describes.
        partial: True when the run was interrupted.
        extra: Command-specific entries (specs, selected gamma, fits).
    """
    manifest = {
        "command": config.command,
        "config": config.model_dump(mode="json"),
        "seeds": config.seeds,
        "gamma": config.gamma,
        "datasets": datasets,
        "results_file": str(results_file) if results_file is not None else None,
        "partial": partial,
        "versions": environment_versions(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        **(extra or {}),
    }
    _write_text(path, json.dumps(manifest, indent=2, default=str) + "\n")
    logger.debug(f"Wrote manifest {path}")
    return Path(path)

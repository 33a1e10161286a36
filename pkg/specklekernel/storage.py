"""SPKF binary feature files.

Layout: a 16-byte little-endian header ``(magic b"SPKF", version, n, N)``
followed by ``n * N`` little-endian float32 values in row-major order. A
JSON sidecar ``<path>.json`` holds the spec fingerprint and provenance.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .features import FeatureMatrix

logger = logging.getLogger(__name__)

MAGIC = b"SPKF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_features(
    path: Path, features: FeatureMatrix, metadata: dict[str, Any] | None = None
) -> Path:
    """Write a feature matrix and its sidecar; returns the feature file path.

    Raises:
        OSError: If either file cannot be written; the message names the path.
    """
    path = Path(path)
    n, n_features = features.X.shape
    data = np.ascontiguousarray(features.X, dtype="<f4")
    sidecar = {
        "fingerprint": features.fingerprint,
        "n": n,
        "N": n_features,
        "dtype": "float32",
        **(metadata or {}),
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(_HEADER.pack(MAGIC, VERSION, n, n_features))
            f.write(data.tobytes())
        sidecar_path(path).write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as e:
        raise OSError(f"Failed to write features to {path}: {e}") from e
    logger.info(f"Wrote {n}x{n_features} features to {path}")
    return path


def read_features(path: Path) -> FeatureMatrix:
    """Read a feature file written by :func:`write_features`.

    Raises:
        FileNotFoundError: If the file is missing.
        ValueError: On a bad header or a size that does not match it.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, n, n_features = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * n * n_features
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    X = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, n_features)

    fp = ""
    sidecar = sidecar_path(path)
    if sidecar.exists():
        fp = json.loads(sidecar.read_text(encoding="utf-8")).get("fingerprint", "")
    return FeatureMatrix(X=X.astype(np.float32), fingerprint=fp)

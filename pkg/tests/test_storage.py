"""Tests for specklekernel.storage module."""

import json
import struct

import numpy as np
import pytest

from specklekernel.features import FeatureMatrix
from specklekernel.storage import (
    MAGIC,
    read_features,
    sidecar_path,
    write_features,
)


@pytest.fixture
def features(rng) -> FeatureMatrix:
    return FeatureMatrix(
        X=np.abs(rng.normal(size=(7, 5))).astype(np.float32), fingerprint="abc123"
    )


class TestWriteFeatures:
    """Tests for writing SPKF files."""

    def test_header_layout(self, features, temp_dir):
        """Should write magic, version, n and N little-endian."""
        path = write_features(temp_dir / "f.spkf", features)
        raw = path.read_bytes()
        assert raw[:4] == MAGIC
        assert struct.unpack("<III", raw[4:16]) == (1, 7, 5)
        assert len(raw) == 16 + 7 * 5 * 4
        assert np.array_equal(
            np.frombuffer(raw[16:], dtype="<f4").reshape(7, 5), features.X
        )

    def test_sidecar(self, features, temp_dir):
        """Should write the fingerprint and extra metadata next to the file."""
        path = write_features(temp_dir / "f.spkf", features, {"path": "device"})
        assert sidecar_path(path).name == "f.spkf.json"
        sidecar = json.loads(sidecar_path(path).read_text())
        assert sidecar["fingerprint"] == "abc123"
        assert sidecar["path"] == "device"
        assert (sidecar["n"], sidecar["N"]) == (7, 5)

    def test_float64_input_cast(self, temp_dir):
        """Should store float64 features as float32."""
        fm = FeatureMatrix(X=np.full((2, 3), 0.1), fingerprint="x")
        back = read_features(write_features(temp_dir / "f.spkf", fm))
        assert back.X.dtype == np.float32
        np.testing.assert_array_equal(back.X, np.float32(0.1))

    def test_write_error_names_path(self, features, temp_dir):
        """Should wrap OS errors with the target path."""
        (temp_dir / "blocker").write_text("")
        with pytest.raises(OSError, match="blocker"):
            write_features(temp_dir / "blocker" / "f.spkf", features)


class TestReadFeatures:
    """Tests for reading SPKF files."""

    def test_round_trip(self, features, temp_dir):
        """Should return identical values and fingerprint."""
        back = read_features(write_features(temp_dir / "f.spkf", features))
        assert np.array_equal(back.X, features.X)
        assert back.fingerprint == "abc123"

    def test_bad_magic(self, temp_dir):
        """Should reject files with another magic number."""
        path = temp_dir / "bad.spkf"
        path.write_bytes(b"NOPE" + struct.pack("<III", 1, 0, 0))
        with pytest.raises(ValueError, match="magic"):
            read_features(path)

    def test_unsupported_version(self, temp_dir):
        """Should reject unknown format versions."""
        path = temp_dir / "v2.spkf"
        path.write_bytes(MAGIC + struct.pack("<III", 2, 0, 0))
        with pytest.raises(ValueError, match="version"):
            read_features(path)

    def test_size_mismatch(self, features, temp_dir):
        """Should reject a payload that disagrees with the header."""
        path = write_features(temp_dir / "f.spkf", features)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ValueError, match="expected"):
            read_features(path)

    def test_truncated_header(self, temp_dir):
        """Should reject files shorter than the header."""
        path = temp_dir / "short.spkf"
        path.write_bytes(MAGIC)
        with pytest.raises(ValueError, match="header"):
            read_features(path)

    def test_missing_sidecar(self, features, temp_dir):
        """Should read without a sidecar, leaving the fingerprint empty."""
        path = write_features(temp_dir / "f.spkf", features)
        sidecar_path(path).unlink()
        assert read_features(path).fingerprint == ""

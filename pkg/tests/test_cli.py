"""Tests for the specklekernel command line interface."""

import csv
import json
import logging

import pytest
import yaml
from typer.testing import CliRunner

from specklekernel import bench
from specklekernel.cli import DATA_DIR_ENV, app
from specklekernel.logging_config import PACKAGE_LOGGER
from specklekernel.results import read_results_csv
from specklekernel.storage import read_features

runner = CliRunner()


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch):
    """No data directory from the environment; restore logging after each run."""
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)
    package_logger = logging.getLogger(PACKAGE_LOGGER)
    saved = list(package_logger.handlers)
    yield
    package_logger.handlers[:] = saved


def invoke(*args: str):
    return runner.invoke(app, [str(a) for a in args])


class TestKernelExact:
    """Tests for the kernel-exact command."""

    def test_single_record(self, idx_dir, temp_dir):
        """Should write one record and a manifest with the selected gamma."""
        out = temp_dir / "exact.csv"
        result = invoke(
            "kernel-exact", "--data-dir", idx_dir, "--n-train", 50, "--n-test", 20,
            "--seed", 7, "-o", out, "-q",
        )
        assert result.exit_code == 0, result.output
        records = read_results_csv(out)
        assert len(records) == 1
        assert records[0].N == 0 and records[0].seed == 7
        assert 0.0 <= records[0].error <= 1.0

        manifest = json.loads((temp_dir / "exact.manifest.json").read_text())
        assert manifest["command"] == "kernel-exact"
        assert manifest["partial"] is False
        assert manifest["config"]["n_train"] == 50
        assert manifest["metadata"]["gamma"] in manifest["config"]["gamma_grid"]
        stages = set(manifest["metadata"]["stage_ms"])
        assert stages == {"kernel", "select", "test_kernel", "solve"}
        assert set(manifest["datasets"]) == {"train", "test"}
        assert "Results written to" in result.output

    def test_memory_budget_refusal(self, idx_dir, temp_dir, caplog):
        """Should exit 1 and log the required bytes when over budget."""
        result = invoke(
            "kernel-exact", "--data-dir", idx_dir, "--n-train", 50, "--n-test", 20,
            "--memory-budget-gb", 1e-6, "-o", temp_dir / "x.csv",
        )
        assert result.exit_code == 1
        required = bench.estimate_exact_kernel_bytes(
            50, 20, input_dim=784, grid_search=True
        )
        assert f"{required:,} bytes" in caplog.text
        assert not (temp_dir / "x.csv").exists()

    def test_missing_data_dir(self):
        """Should exit 2 naming --data-dir when no dataset is given."""
        result = invoke("kernel-exact", "--n-train", 10)
        assert result.exit_code == 2
        assert "--data-dir" in result.output

    def test_env_data_dir(self, idx_dir, temp_dir, monkeypatch):
        """Should read the dataset directory from the environment."""
        monkeypatch.setenv(DATA_DIR_ENV, str(idx_dir))
        out = temp_dir / "env.json"
        result = invoke(
            "kernel-exact", "--n-train", 30, "--n-test", 10, "--gamma", 0.1,
            "--format", "json", "-o", out, "-q",
        )
        assert result.exit_code == 0, result.output
        data = json.loads(out.read_text())
        assert data["metadata"]["gamma"] == 0.1
        assert len(data["records"]) == 1

    def test_corrupt_file(self, idx_dir, caplog):
        """Should exit 1 with the byte offset for a corrupt IDX file."""
        (idx_dir / "train-images-idx3-ubyte").write_bytes(b"\x00\x00\x09\x99" + bytes(12))
        result = invoke("kernel-exact", "--data-dir", idx_dir)
        assert result.exit_code == 1
        assert "offset 0" in caplog.text


class TestLinearBaseline:
    """Tests for the linear-baseline command."""

    def test_runs(self, idx_dir, temp_dir):
        """Should write a single N=0 record."""
        out = temp_dir / "linear.csv"
        result = invoke("linear-baseline", "--data-dir", idx_dir, "-o", out, "-q")
        assert result.exit_code == 0, result.output
        manifest = json.loads((temp_dir / "linear.manifest.json").read_text())
        assert manifest["metadata"]["model"] == "linear"
        assert [r.N for r in read_results_csv(out)] == [0]


class TestRfSweep:
    """Tests for the rf-sweep command."""

    def test_grid(self, idx_dir, temp_dir):
        """Should write one record per (N, seed) with the exact CSV columns."""
        out = temp_dir / "sweep.csv"
        result = invoke(
            "rf-sweep", "--data-dir", idx_dir, "--N", "64,512,4096", "--seeds", 3,
            "--gamma", 0.1, "--gram-probe", 20, "-o", out, "-q",
        )
        assert result.exit_code == 0, result.output
        with open(out, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["N", "seed", "error", "gram_rms", "wall_ms"]
        assert [(int(r[0]), int(r[1])) for r in rows[1:]] == [
            (n, s) for n in (64, 512, 4096) for s in (0, 1, 2)
        ]
        manifest = json.loads((temp_dir / "sweep.manifest.json").read_text())
        assert manifest["seeds"] == [0, 1, 2]
        assert manifest["metadata"]["normalization"] == "1/N"
        build = manifest["metadata"]["feature_build"]
        assert set(build) == {"0", "1", "2"}
        assert all(entry["features_per_second"] > 0 for entry in build.values())

    def test_feature_noise_json(self, idx_dir, temp_dir):
        """Should carry feature noise and per-seed throughput into the JSON results."""
        out = temp_dir / "noisy.json"
        result = invoke(
            "rf-sweep", "--data-dir", idx_dir, "--N", "32,64", "--seeds", 2,
            "--gamma", 0.1, "--feature-noise", 0.5, "--noise-seed", 3,
            "--format", "json", "-o", out, "-q",
        )
        assert result.exit_code == 0, result.output
        metadata = json.loads(out.read_text())["metadata"]
        assert metadata["feature_noise"] == 0.5 and metadata["noise_seed"] == 3
        assert set(metadata["feature_build"]) == {"0", "1"}
        assert metadata["stage_seconds"]["features"] > 0
        manifest = json.loads((temp_dir / "noisy.manifest.json").read_text())
        assert manifest["config"]["feature_noise"] == 0.5

    def test_feature_noise_on_device_is_usage_error(self, idx_dir):
        """Should exit 2 when feature noise is combined with the device path."""
        result = invoke(
            "rf-sweep", "--data-dir", idx_dir, "--path", "device", "--feature-noise", 0.1
        )
        assert result.exit_code == 2

    def test_config_file_merge(self, idx_dir, temp_dir):
        """Should fill unset flags from --config while explicit flags win."""
        config = temp_dir / "run.yaml"
        config.write_text(
            yaml.dump({"n_features": "8,16", "seed": 5, "gamma": 0.5, "n_seeds": 1})
        )
        out = temp_dir / "merged.csv"
        result = invoke(
            "rf-sweep", "--data-dir", idx_dir, "--config", config, "--seed", 2,
            "--gram-probe", 0, "-o", out, "-q",
        )
        assert result.exit_code == 0, result.output
        manifest = json.loads((temp_dir / "merged.manifest.json").read_text())
        assert manifest["config"]["seed"] == 2
        assert manifest["config"]["n_features"] == [8, 16]
        assert manifest["gamma"] == 0.5
        assert [(r.N, r.seed) for r in read_results_csv(out)] == [(8, 2), (16, 2)]

    def test_bad_config_file(self, idx_dir, temp_dir):
        """Should exit 2 for a config file with unknown keys."""
        config = temp_dir / "bad.yaml"
        config.write_text(yaml.dump({"n_feature": 8}))
        result = invoke("rf-sweep", "--data-dir", idx_dir, "--config", config)
        assert result.exit_code == 2
        assert "n_feature" in result.output

    def test_invalid_value(self, idx_dir):
        """Should exit 2 for an unknown fidelity path."""
        result = invoke("rf-sweep", "--data-dir", idx_dir, "--path", "hologram")
        assert result.exit_code == 2

    def test_interrupt_writes_partial(self, idx_dir, temp_dir, mocker):
        """Should flush finished points, mark the manifest partial and exit 1."""
        real = bench.projected_ridge
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 2:
                raise KeyboardInterrupt
            return real(*args, **kwargs)

        mocker.patch.object(bench, "projected_ridge", side_effect=flaky)
        out = temp_dir / "partial.csv"
        result = invoke(
            "rf-sweep", "--data-dir", idx_dir, "--N", "8,16,32", "--seeds", 1,
            "--gamma", 1.0, "--gram-probe", 0, "-o", out, "-q",
        )
        assert result.exit_code == 1
        assert [r.N for r in read_results_csv(out)] == [8]
        manifest = json.loads((temp_dir / "partial.manifest.json").read_text())
        assert manifest["partial"] is True

    def test_power_law_in_manifest(self, idx_dir, temp_dir, caplog):
        """Should store the power-law fit when --err-inf is given."""
        out = temp_dir / "fit.csv"
        result = invoke(
            "rf-sweep", "--data-dir", idx_dir, "--N", "8,16,32,64,128", "--seeds", 1,
            "--gamma", 0.1, "--gram-probe", 0, "--err-inf", 0.0, "-o", out,
        )
        assert result.exit_code == 0, result.output
        manifest = json.loads((temp_dir / "fit.manifest.json").read_text())
        if "power_law" in manifest:
            assert manifest["power_law"]["fixed_exponent"] == pytest.approx(-2 / 3)
        else:
            assert "Power-law fit skipped" in caplog.text


class TestConvergence:
    """Tests for the convergence command."""

    def test_rows_per_n(self, idx_dir, temp_dir):
        """Should write one statistics row per N."""
        out = temp_dir / "conv.csv"
        result = invoke(
            "convergence", "--data-dir", idx_dir, "--n-train", 20, "--N", "16,256",
            "--trials", 2, "-o", out, "-q",
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text().splitlines()
        assert lines[0] == "N,trials,max_abs,rms,kernel_max"
        assert [line.split(",")[0] for line in lines[1:]] == ["16", "256"]
        manifest = json.loads((temp_dir / "conv.manifest.json").read_text())
        assert manifest["n_samples"] == 20


class TestFeatures:
    """Tests for the features command."""

    def test_workers_bitwise_identical(self, idx_dir, temp_dir):
        """Should write identical feature files for 1, 2 and 8 workers."""
        blobs = []
        for w in (1, 2, 8):
            out = temp_dir / f"f{w}.spkf"
            result = invoke(
                "features", "--data-dir", idx_dir, "--n-train", 30, "--N", 300,
                "--block-rows", 32, "--workers", w, "-o", out, "-q",
            )
            assert result.exit_code == 0, result.output
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1] == blobs[2]
        assert read_features(temp_dir / "f1.spkf").X.shape == (30, 300)

    def test_device_path(self, idx_dir, temp_dir):
        """Should write nonnegative device features with the detector in the sidecar."""
        out = temp_dir / "device.spkf"
        result = invoke(
            "features", "--data-dir", idx_dir, "--n-train", 3, "--N", 16,
            "--path", "device", "--quantize-bits", 0, "-o", out, "-q",
        )
        assert result.exit_code == 0, result.output
        fm = read_features(out)
        assert fm.X.shape == (3, 16)
        assert (fm.X >= 0).all()
        sidecar = json.loads((temp_dir / "device.spkf.json").read_text())
        assert sidecar["detector"]["quantize_bits"] == 0
        assert sidecar["transmission"]["input_dim"] == 16 * 28 * 28

    def test_feature_noise_in_sidecar(self, idx_dir, temp_dir):
        """Should record the feature noise of the ideal projection in the sidecar."""
        out = temp_dir / "noisy.spkf"
        result = invoke(
            "features", "--data-dir", idx_dir, "--n-train", 10, "--N", 40,
            "--feature-noise", 0.25, "--noise-seed", 9, "-o", out, "-q",
        )
        assert result.exit_code == 0, result.output
        sidecar = json.loads((temp_dir / "noisy.spkf.json").read_text())
        assert sidecar["projection"]["feature_noise"] == 0.25
        assert sidecar["projection"]["noise_seed"] == 9
        assert (read_features(out).X >= 0).all()


class TestUsage:
    """Tests for usage errors and help."""

    def test_unknown_flag(self):
        """Should exit 2 on an unknown flag."""
        assert invoke("rf-sweep", "--no-such-flag").exit_code == 2

    def test_help_lists_flags(self):
        """Should document the sweep flags."""
        result = invoke("rf-sweep", "--help")
        assert result.exit_code == 0
        for flag in ("--N", "--seeds", "--gamma", "--path", "--shot-noise", "--workers"):
            assert flag in result.output

    def test_lists_commands(self):
        """Should list every subcommand."""
        result = invoke("--help")
        for command in ("kernel-exact", "linear-baseline", "rf-sweep", "convergence", "features"):
            assert command in result.output

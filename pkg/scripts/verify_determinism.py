# verify_determinism.py
"""Run `specklekernel features` with several worker counts and compare hashes.

Usage:
    python scripts/verify_determinism.py --data-dir /path/to/mnist [--path device]
"""

import hashlib
import subprocess
import sys
import tempfile
from pathlib import Path

WORKER_COUNTS = (1, 2, 8)


def run_features(extra_args: list[str], workers: int, out: Path) -> str:
    cmd = [
        sys.executable,
        "-m",
        "specklekernel.cli",
        "features",
        "--workers",
        str(workers),
        "--output",
        str(out),
        "--quiet",
        *extra_args,
    ]
    print(f"Running: {' '.join(cmd)}")
    subprocess.run(cmd, check=True)
    return hashlib.sha256(out.read_bytes()).hexdigest()


def main(argv: list[str]) -> int:
    extra_args = argv or ["--n-train", "500", "--N", "4096"]
    with tempfile.TemporaryDirectory() as tmp:
        digests = {
            w: run_features(extra_args, w, Path(tmp) / f"features-w{w}.spkf")
            for w in WORKER_COUNTS
        }
    for w, digest in digests.items():
        print(f"workers={w}: {digest}")
    if len(set(digests.values())) != 1:
        print("[FAIL] feature files differ between worker counts")
        return 1
    print("[PASS] feature files are bitwise identical")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))

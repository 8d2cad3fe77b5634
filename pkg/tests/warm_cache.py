"""Pre-build the cached desk-scale checkpoints used by the slow tests.

Run from the repository root:  python3 tests/warm_cache.py
Safe to re-run; finished runs are detected and skipped.
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import torch

import conftest


def main() -> None:
    torch.set_num_threads(1)
    for label, build in [
        ("overfit", conftest.overfit_checkpoint),
        ("desk deterministic", lambda: conftest.desk_checkpoint("deterministic")),
        ("desk probabilistic", lambda: conftest.desk_checkpoint("probabilistic")),
    ]:
        started = time.time()
        path = build()
        print(f"{label}: {path} ({time.time() - started:.0f}s)", flush=True)


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Run every experiment suite with the repository default configuration.

Artifacts land in runs/<suite>/ (config snapshot, summary.json, CSV tables).
Exits nonzero if any suite fails an assertion.

    python scripts/run_all.py [--config configs/default.cfg] [--fast]

--fast shrinks the corpora for a quick end-to-end smoke pass.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from carlstab.cli import main as cli_main  # noqa: E402

SUITES = ["verify-ops", "converge", "energy", "carleman", "stability", "reconstruct"]

FAST_OVERRIDES = {
    "verify-ops": ["verify_ops.fields=40"],
    "converge": [],
    "energy": ["energy.runs=20"],
    "carleman": ["carleman.runs=8", "carleman.feasibility_runs=1"],
    "stability": ["stability.runs=8", "stability.decay_steps=128"],
    "reconstruct": [],
}


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=None)
    ap.add_argument("--fast", action="store_true")
    args = ap.parse_args()
    worst = 0
    for suite in SUITES:
        argv = [suite]
        if args.config:
            argv += ["--config", args.config]
        if args.fast:
            argv += [f"--set={ov}" for ov in FAST_OVERRIDES[suite]]
        print(f"==> {suite}")
        code = cli_main(argv)
        worst = max(worst, code)
    print(f"==> overall exit {worst}")
    return worst


if __name__ == "__main__":
    sys.exit(main())

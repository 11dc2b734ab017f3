"""Ingest, train and benchmark at desk scale in one go.

Usage: python3 scripts/desk_run.py [OUT_DIR] [extra flags passed to every command]

Writes OUT_DIR/data, OUT_DIR/train (checkpoints + histories) and
OUT_DIR/bench (tables, figures). Timing columns are filled, so do not pass
--deterministic if you want the timing table.
"""

import sys
from pathlib import Path

from spikit.cli import main


def run(out: Path, extra: list[str]) -> int:
    common = ["--preset", "desk", "--alpha", "0.0625", *extra]
    steps = [
        ["ingest", "--out", str(out / "data"), *common],
        ["train", "--data", str(out / "data"), "--out", str(out / "train"), *common],
        ["benchmark", "--data", str(out / "data"), "--checkpoints", str(out / "train" / "checkpoints"),
         "--out", str(out / "bench"), *common],
    ]
    for argv in steps:
        print("spikit", " ".join(argv), flush=True)
        code = main(argv)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("runs/desk")
    sys.exit(run(out, sys.argv[2:]))

"""Train and evaluate the reach-avoid example, then plot a few traces.

    python3 scripts/run_reach_avoid.py [--out runs/reach_avoid] [--seed 0]
"""

import argparse
import sys
from pathlib import Path

from ogmp.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/reach_avoid")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    common = ["--config", str(ROOT / "configs" / "reach_avoid.yaml"), "--seed", str(args.seed), "--out", args.out]
    for cmd in (["train", *common], ["eval", *common],
                ["plot", "--run", args.out, "--vars", "px,py,vx,vy"],
                ["plot", "--run", args.out, "--transition-matrix"]):
        code = main(cmd)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())

"""Soccer-stop ablation over several seeds: preference, no preference, multi-policy baseline.

    python3 scripts/run_ablation.py [--out runs/ablation] [--seeds 0 1 2]

Each seed writes ``<out>/seed<k>/`` via ``ogmp ablate``; a combined
``summary.txt`` lists per-seed success rates and the reach/manipulate
transition probabilities of the preference arm.
"""

import argparse
import json
import sys
from pathlib import Path

from ogmp.cli import main

ROOT = Path(__file__).resolve().parents[1]


def summarize(out: Path, seeds) -> str:
    lines = ["seed  pref_success  nopref_success  multi_success  P(r->m)   P(m->r)"]
    for s in seeds:
        reps = {r["policy"]: r for r in json.loads((out / f"seed{s}" / "report.json").read_text())}
        pref = reps["single-policy"]
        modes = pref["transition_modes"]
        probs = pref["transition_probabilities"]
        p_rm = probs[modes.index("reach")][modes.index("manipulate")]
        p_mr = probs[modes.index("manipulate")][modes.index("reach")]
        lines.append(f"{s:<4}  {pref['success_pct']:>12.1f}  {reps['single-policy w/o pref']['success_pct']:>14.1f}  "
                     f"{reps['multi-policy (baseline)']['success_pct']:>13.1f}  {p_rm:.6f}  {p_mr:.6f}")
    return "\n".join(lines) + "\n"


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--config", default=str(ROOT / "configs" / "soccer_stop.yaml"))
    args = ap.parse_args(argv)
    out = Path(args.out)
    for s in args.seeds:
        code = main(["ablate", "--config", args.config, "--seed", str(s), "--out", str(out / f"seed{s}")])
        if code:
            return code
        main(["plot", "--transition-matrix", str(out / f"seed{s}" / "transitions_single_pref.csv")])
    text = summarize(out, args.seeds)
    (out / "summary.txt").write_text(text)
    print(text, end="")
    return 0


if __name__ == "__main__":
    sys.exit(run())

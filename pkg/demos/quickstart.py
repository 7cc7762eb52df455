"""Full pipeline vs plain cross-entropy on one noisy synthetic dataset.

    python3 demos/quickstart.py [--eta 0.4] [--seed 0] [--out runs/quickstart]

Uses the shipped desk config (about a minute per method on a laptop CPU).
"""
import argparse
from pathlib import Path

from noisy_sei import load_config, run_baseline_ce, run_pipeline
from noisy_sei.pipeline import accuracy_table, format_report

ap = argparse.ArgumentParser()
ap.add_argument("--eta", type=float, default=0.4)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--out", default="runs/quickstart")
args = ap.parse_args()

cfg = load_config("desk").replace(seed=args.seed, data={"seed": args.seed, "eta": args.eta})
out = Path(args.out)
reports = [run_baseline_ce(cfg, out / "ce"), run_pipeline(cfg, out / "full")]
for rep in reports:
    print(format_report(rep))
print(accuracy_table([r.metrics() for r in reports]), end="")

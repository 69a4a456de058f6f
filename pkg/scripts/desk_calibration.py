"""Desk-preset calibration run: every trend comparison used by the acceptance suite.

Writes ``results/calibration.csv`` (one line per cell and seed) and prints a
summary table. The committed copy is the oracle run the acceptance
thresholds were checked against.
"""

import argparse
import csv
import time
from pathlib import Path

import numpy as np

from hfcl.experiment import ExperimentConfig, run_experiment

CELLS = {
    "cl": dict(mode="cl"),
    "fl": dict(mode="fl", passive=0),
    "hfcl_L5": dict(mode="hfcl", passive=5),
    "hfcl-sdt_L5": dict(mode="hfcl-sdt", passive=5),
    "hfcl_L7": dict(mode="hfcl", passive=7),
    "fl-active-only_L7": dict(mode="fl-active-only", passive=7),
    "cl_noise_off": dict(mode="cl", noise=False),
    **{f"fl_B{b}": dict(mode="fl", passive=0, bits=b) for b in range(1, 9)},
    **{f"hfcl_L5_B{b}": dict(mode="hfcl", passive=5, bits=b) for b in (1, 8)},
    **{f"fl_snr{s}": dict(mode="fl", passive=0, snr_db=float(s)) for s in (0, 10, 20, 30)},
    "hfcl-sdt_L5_block50": dict(mode="hfcl-sdt", passive=5, sdt_block=50),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--rounds", type=int, default=50)
    ap.add_argument("--eta", type=float, default=0.2)
    ap.add_argument("--out", default="results/calibration.csv")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    template = ExperimentConfig(rounds=args.rounds, eta=args.eta, bits=5, snr_db=20.0)

    start = time.time()
    records = []
    for name, kw in CELLS.items():
        accs = [run_experiment(template.replace(seed=s, **kw)).final_accuracy for s in seeds]
        records += [(name, s, a) for s, a in zip(seeds, accs)]
        print(f"{name:22s} mean {np.mean(accs):6.2f}  std {np.std(accs, ddof=1):5.2f}  {accs}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "seed", "val_acc_pct"])
        w.writerows(records)
    print(f"{len(records)} runs in {time.time() - start:.0f}s -> {out}")


if __name__ == "__main__":
    main()

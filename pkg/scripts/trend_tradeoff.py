"""Step-size scan behind the B-sweep analysis (acceptance criterion 5c).

For each setting, reports mean final accuracy over seeds 0-2 of fl, hfcl at
L=5, fl at B=1 and B=8, fl at 0 dB, hfcl and fl-active-only at L=7. The
output shows no desk setting where hfcl beats fl and B=8 beats B=1 by 5
points at the same time. Writes results/trend_tradeoff.csv.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from hfcl.experiment import ExperimentConfig, run_experiment

SETTINGS = [
    dict(eta=0.05),
    dict(eta=0.2),
    dict(eta=0.5),
    dict(eta=1.0),
    dict(eta=0.2, rounds=200),
    dict(eta=0.2, minibatches=2, batch_size=10),
]
CELLS = {
    "fl": dict(mode="fl", passive=0),
    "hfcl_L5": dict(mode="hfcl", passive=5),
    "fl_B1": dict(mode="fl", passive=0, bits=1),
    "fl_B8": dict(mode="fl", passive=0, bits=8),
    "fl_snr0": dict(mode="fl", passive=0, snr_db=0.0),
    "hfcl_L7": dict(mode="hfcl", passive=7),
    "fl-active-only_L7": dict(mode="fl-active-only", passive=7),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", default="results/trend_tradeoff.csv")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    base = ExperimentConfig(bits=5, snr_db=20.0)
    rows = []
    for extra in SETTINGS:
        acc = {
            name: float(np.mean([run_experiment(base.replace(seed=s, **kw, **extra)).final_accuracy for s in seeds]))
            for name, kw in CELLS.items()
        }
        label = " ".join(f"{k}={v}" for k, v in extra.items())
        a = acc["hfcl_L5"] > acc["fl"]
        c = acc["fl_B8"] - acc["fl_B1"] >= 5.0
        print(label.ljust(40), " ".join(f"{k} {v:6.2f}" for k, v in acc.items()), f"| 5a {a} 5c {c}", flush=True)
        rows.append({"setting": label, **{k: round(v, 3) for k, v in acc.items()}, "5a": a, "5c": c})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()

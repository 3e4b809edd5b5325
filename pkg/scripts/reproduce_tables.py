"""Recompute the reference summary tables from their own (mean, SD) rows.

Prints the 95% intervals at n=27 next to the reference ones, and every
pairwise Welch t / Cohen's d next to the reference effect sizes. Writes
``tables/intervals.csv`` and ``tables/effect_sizes.csv``.
"""

import argparse
import csv
from pathlib import Path

from voicepath.experiments.stats import RunStats, cohens_d, compare

ROWS = [
    ("Simple RNN", 0.9266, 0.0088, (0.9233, 0.9300)),
    ("RNN + Attention", 0.8559, 0.0092, (0.8524, 0.8594)),
    ("LSTM", 0.9286, 0.0098, (0.9249, 0.9323)),
    ("LSTM + Attention", 0.7855, 0.0089, (0.7821, 0.7889)),
    ("SVM", 0.8562, 0.0101, (0.8523, 0.8600)),
    ("CNN", 0.9313, 0.0093, (0.9278, 0.9348)),
]

REFERENCE_D = {
    ("Simple RNN", "RNN + Attention"): 7.8,
    ("Simple RNN", "LSTM"): -0.2,
    ("Simple RNN", "LSTM + Attention"): 15.9,
    ("Simple RNN", "SVM"): 7.4,
    ("Simple RNN", "CNN"): -0.5,
    ("RNN + Attention", "LSTM"): -7.7,
    ("RNN + Attention", "LSTM + Attention"): 7.8,
    ("RNN + Attention", "SVM"): -0.03,
    ("RNN + Attention", "CNN"): -8.2,
    ("LSTM", "LSTM + Attention"): 15.3,
    ("LSTM", "SVM"): 7.3,
    ("LSTM", "CNN"): -0.28,
    ("SVM", "CNN"): -7.75,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=27, help="runs per model assumed for the intervals")
    ap.add_argument("--out", default="tables")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    stats = {name: RunStats.from_summary(name, m, sd, args.n) for name, m, sd, _ in ROWS}
    print(f"95% intervals, n = {args.n}")
    with open(out / "intervals.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mean", "sd", "ci_lo", "ci_hi", "reference_lo", "reference_hi", "max_abs_err"])
        for name, m, sd, pub in ROWS:
            lo, hi = stats[name].ci95
            err = max(abs(lo - pub[0]), abs(hi - pub[1]))
            w.writerow([name, m, sd, repr(lo), repr(hi), pub[0], pub[1], repr(err)])
            flag = "" if err <= 5e-5 else "   <- off by more than 5e-5"
            print(f"  {name:<18}({lo:.4f}, {hi:.4f})  reference ({pub[0]:.4f}, {pub[1]:.4f}){flag}")

    print("\npairwise comparisons (summary form)")
    names = [r[0] for r in ROWS]
    with open(out / "effect_sizes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_a", "model_b", "t_stat", "p_value", "cohens_d", "reference_d"])
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                c = compare(stats[a], stats[b])
                d = cohens_d(stats[a].mean, stats[a].sd, stats[b].mean, stats[b].sd)
                pub = REFERENCE_D.get((a, b))
                w.writerow([a, b, repr(c.t_stat), repr(c.p_value), repr(d), "" if pub is None else pub])
                shown = "   -" if pub is None else f"{pub:6.2f}"
                print(f"  {a:<18}{b:<18}t {c.t_stat:8.2f}  d {d:6.2f}  reference {shown}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Plot per-step statistics produced by smpc_run.

Usage: plot_per_step.py PER_STEP_CSV [PER_STEP_CSV ...] [--level P] [--out FILE]

Renders mean input and empirical constraint satisfaction over time for one or
more runs (e.g. symmetric vs one-sided tightening).
"""
import argparse
import csv
import sys


def load(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {
        "k": [int(r["k"]) for r in rows],
        "p_hat": [float(r["p_hat"]) for r in rows],
        "p_stderr": [float(r["p_stderr"]) for r in rows],
        "mean_u": [float(r["mean_u"]) for r in rows],
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csvs", nargs="+")
    ap.add_argument("--level", type=float, default=None, help="chance constraint level to mark")
    ap.add_argument("--out", default="per_step.png")
    args = ap.parse_args()

    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        sys.exit("matplotlib is required for plotting")

    fig, (ax_u, ax_p) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for path in args.csvs:
        d = load(path)
        ax_u.plot(d["k"], d["mean_u"], label=path)
        ax_p.errorbar(d["k"], d["p_hat"], yerr=[3 * s for s in d["p_stderr"]], label=path)
    if args.level is not None:
        ax_p.axhline(args.level, color="k", linestyle="--", linewidth=0.8)
    ax_u.set_ylabel("mean input u(k)")
    ax_p.set_ylabel("empirical P[(x,u) in Z]")
    ax_p.set_xlabel("step k")
    ax_u.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()

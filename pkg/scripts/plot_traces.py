#!/usr/bin/env python3
"""Plot closed-loop traces produced by `deeepc run` (trace_*.csv files).

Usage: plot_traces.py results/cstr/compare-or-run-dir [--out traces.png]
Overlays inputs, outputs, and running economic cost for every trace found.
"""

import argparse
import csv
import glob
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def load_trace(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    u_cols = sorted(c for c in rows[0] if c.startswith("u"))
    y_cols = sorted(c for c in rows[0] if c.startswith("y"))
    return {
        "k": np.array([int(r["k"]) for r in rows]),
        "u": np.array([[float(r[c]) for c in u_cols] for r in rows]),
        "y": np.array([[float(r[c]) for c in y_cols] for r in rows]),
        "c": np.array([float(r["c_true"]) for r in rows]),
    }


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("directory")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    paths = sorted(glob.glob(os.path.join(args.directory, "**", "trace_*.csv"),
                             recursive=True))
    if not paths:
        print(f"no trace_*.csv under {args.directory}", file=sys.stderr)
        return 2

    fig, axes = plt.subplots(3, 1, figsize=(9, 9), sharex=True)
    for path in paths:
        label = os.path.basename(path)[len("trace_"):-len(".csv")]
        tr = load_trace(path)
        axes[0].plot(tr["k"], tr["u"][:, 0], label=label)
        axes[1].plot(tr["k"], tr["y"][:, -1], label=label)
        axes[2].plot(tr["k"], np.cumsum(tr["c"]) / (tr["k"] + 1), label=label)
    axes[0].set_ylabel("input u1")
    axes[1].set_ylabel("last output")
    axes[2].set_ylabel("running avg cost")
    axes[2].set_xlabel("step")
    for ax in axes:
        ax.legend()
        ax.grid(alpha=0.3)
    out = args.out or os.path.join(args.directory, "traces.png")
    fig.tight_layout()
    fig.savefig(out, dpi=130)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

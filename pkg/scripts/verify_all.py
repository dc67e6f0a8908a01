#!/usr/bin/env python3
"""Run both numerical verification suites and print the verdicts.

Exit code 0 means every check passed; 1 means a verdict failed.
"""

import argparse
import json
import os
import sys

from deeepc.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/verify")
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    rc = cli_main(["verify", "--out", args.out, "--seed", str(args.seed)])
    for name in ("lemma_verdict.json", "theory_verdict.json"):
        path = os.path.join(args.out, name)
        if os.path.exists(path):
            with open(path) as fh:
                print(f"{name}: {json.dumps(json.load(fh), indent=2)}")
    return rc


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Run the frozen patch-classifier recipe and print its result."""

import argparse
import json

from lesionkit.experiments import run_lfn_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    res = run_lfn_synthetic(
        args.seed, on_epoch=lambda e: print(json.dumps(e, sort_keys=True), flush=True)
    )
    print(f"best val acc {res.best_val_acc:.4f}")
    print(f"elapsed      {res.elapsed_seconds:.1f}s")
    print(f"params       {res.params_digest}")
    print(f"log          {res.log_digest}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Run the frozen dual-segmenter recipe and print its result."""

import argparse
import json

from lesionkit.experiments import run_lin_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    res = run_lin_synthetic(
        args.seed, on_epoch=lambda e: print(json.dumps(e, sort_keys=True), flush=True)
    )
    print(f"mean JA             {res.mean_ja:.4f}")
    print(f"acc (weighted)      {res.acc:.4f}")
    print(f"acc (uniform)       {res.acc_uniform:.4f}")
    print(
        f"corrupted subset    {res.corrupted_acc:.4f} weighted"
        f" vs {res.corrupted_acc_uniform:.4f} uniform over {res.n_corrupted}"
    )
    print(f"elapsed             {res.elapsed_seconds:.1f}s")
    print(f"params dr           {res.params_digest_dr}")
    print(f"params dm           {res.params_digest_dm}")
    print(f"log                 {res.log_digest}")
    print(f"outputs             {res.outputs_digest}")


if __name__ == "__main__":
    main()

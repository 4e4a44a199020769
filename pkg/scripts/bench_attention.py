"""Median train-step time, grouped-query vs multi-head attention (h=12, g=3, N=42)."""

import argparse
import json

from penguin.experiments import attention_step_times


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--runs", type=int, default=20)
    args = ap.parse_args()
    t = attention_step_times(args.batch, args.runs)
    t["speedup"] = t["mha"] / t["gqa"] - 1.0
    print(json.dumps(t, indent=2))


if __name__ == "__main__":
    main()

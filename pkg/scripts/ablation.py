"""Regime, wrong-period and causal-mask ablations on desk-scale synthetic data.

    python scripts/ablation.py --out results/
"""

import argparse
import json
from pathlib import Path

from penguin import experiments as ex
from penguin.train import summarize, write_sweep_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--only", choices=["regime", "period", "causal"])
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = range(args.seeds)

    studies = {
        "regime": (ex.TWO_PERIOD, ex.desk_config(), ex.regime_cells()),
        "period": (ex.ONE_PERIOD, ex.desk_config(patch_len=12, stride=6, periods=(24,)),
                   ex.wrong_period_cells()),
        "causal": (ex.TWO_PERIOD, ex.desk_config(), ex.causal_cells()),
    }
    for name, (data, base, cells) in studies.items():
        if args.only and name != args.only:
            continue
        results = ex.run(data.table(), base, cells, seeds)
        write_sweep_csv(out / f"{name}.csv", results)
        print(name, json.dumps(summarize(results), indent=2))


if __name__ == "__main__":
    main()

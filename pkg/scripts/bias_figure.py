"""Write PGM heatmaps of one non-periodic and two periodic heads (N=42, periods 3 and 21)."""

import argparse
from pathlib import Path

from penguin import bias


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="figures")
    ap.add_argument("--heads", type=int, nargs="*", default=[4, 8, 12])
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for hb in bias.assemble("both", (3, 21), 12, 42):
        if hb.head in args.heads:
            (out / f"head{hb.head}_group{hb.group}.pgm").write_bytes(bias.to_pgm(hb.matrix))
            s = hb.spec
            print(f"head {hb.head} group {hb.group} {s.kind.name.lower()} "
                  f"period {s.period} slope {s.slope:.4f}")


if __name__ == "__main__":
    main()

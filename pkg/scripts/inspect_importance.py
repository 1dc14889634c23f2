"""Show the importance ranking stored in a run directory and how concentrated it is.

    python scripts/inspect_importance.py runs/default/runs/<hash>-seed0
"""
import argparse
from pathlib import Path

import numpy as np

from smsc.fir import load_importance, select_top_b


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run_dir", type=Path)
    args = parser.parse_args()
    for path in sorted(args.run_dir.glob("*_importance.txt")):
        s = load_importance(path)
        v = s.values
        order = np.argsort(-v, kind="stable")
        share = np.cumsum(v[order]) / v.sum()
        print(f"{path.name}: L={len(v)}, weights={s.weights}")
        print("  rank order:", " ".join(str(i) for i in order))
        print("  max/min ratio: %.2f" % (v.max() / max(v.min(), 1e-300)))
        for b in (8, 16, 24):
            if b <= len(v):
                print(f"  top-{b} holds {100 * share[b - 1]:.1f}% of total importance: {select_top_b(s, b).indices}")


if __name__ == "__main__":
    main()

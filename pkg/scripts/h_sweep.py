"""Self-convergence in h: F at a fixed horizon for successively halved steps,
with the observed order p = log2(|F_h - F_{h/2}| / |F_{h/2} - F_{h/4}|).

    python3 scripts/h_sweep.py --config scripts/configs/default_1d.cfg
"""
import argparse
import math
from pathlib import Path

from kwcflow.cli import h_sweep_rows
from kwcflow.config import parse_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=Path(__file__).parent / "configs" / "default_1d.cfg")
    ap.add_argument("--h-values", default="0.2,0.1,0.05,0.025")
    ap.add_argument("--horizon", type=float, default=2.0)
    args = ap.parse_args()
    hs = tuple(float(x) for x in args.h_values.split(","))
    rows = h_sweep_rows(parse_config(args.config), hs, args.horizon)
    F = [r["final_energy"] for r in rows]
    for i, r in enumerate(rows):
        order = ""
        if 1 <= i < len(rows) - 1 and F[i] != F[i + 1]:
            order = f"  observed order {math.log2(abs(F[i - 1] - F[i]) / abs(F[i] - F[i + 1])):.2f}"
        print(f"h={r['h']:<7g} F(T={args.horizon:g}) = {r['final_energy']:.8f}  "
              f"change {r['relative_change']:.3%}{order}")


if __name__ == "__main__":
    main()

"""Long run of the default 1D scenario; prints the approach to the omega-limit
(theta spread, stationarity residual of v, free energy) at checkpoints.

    python3 scripts/omega_limit.py --steps 2000 --h 0.1
"""
import argparse
import copy
import math

import numpy as np

from kwcflow.config import preset_initial
from kwcflow.diagnostics import omega_limit
from kwcflow.grid import Grid
from kwcflow.model import default_model
from kwcflow.regnorm import RegularizedNorm
from kwcflow.stepper import run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cells", type=int, default=32)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--h", type=float, default=0.1)
    ap.add_argument("--sigma", type=float, default=0.1)
    args = ap.parse_args()
    grid = Grid.unit((args.cells,))
    traj = run(default_model(), grid, preset_initial(grid, "ramp", math.pi), args.h, args.steps,
               RegularizedNorm("hyperbola", args.sigma))
    print(f"{'step':>6} {'time':>8} {'F':>12} {'theta spread':>13} {'v residual':>11}")
    marks = sorted({int(k) for k in np.geomspace(1, args.steps, 12)} | {0})
    for k in marks:
        part = copy.copy(traj)
        part.records = traj.records[:k + 1]
        om = omega_limit(part, 0.0)
        print(f"{k:6d} {k * args.h:8.2f} {traj.records[k].energy.total:12.4e} "
              f"{om.theta_spread:13.3e} {om.v_residual:11.3e}")
    print(omega_limit(traj, 0.0).to_text())


if __name__ == "__main__":
    main()

"""Randomized dissipation and Lyapunov audits (the acceptance scenario, with
more seeds). Prints the worst slack per audit and a final pass/fail.

    python3 scripts/dissipation_audit.py --runs 20
"""
import argparse
import math

import numpy as np

from kwcflow import diagnostics as D
from kwcflow.config import preset_initial
from kwcflow.grid import Grid
from kwcflow.model import Source, default_model, step_bound
from kwcflow.regnorm import RegularizedNorm
from kwcflow.stepper import run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    all_ok = True
    for k in range(args.runs):
        shape = (32,) if k % 2 == 0 else (16, 16)
        grid = Grid.unit(shape)
        u_inf = float(rng.uniform(-0.5, 0.5))
        spec = default_model(nu=float(rng.choice([0.0, 0.1, 0.3])),
                             source=Source(((0.0, float(rng.uniform(-1, 1))), (1.0, u_inf)), math.inf, u_inf))
        norm = RegularizedNorm(str(rng.choice(["hyperbola", "tanh", "arctan", "yosida"])),
                               float(rng.choice([0.02, 0.1, 0.3])))
        init = preset_initial(grid, str(rng.choice(["random", "ramp", "two-grain", "step"])),
                              float(rng.uniform(0.5, math.pi)), int(rng.integers(1 << 30)))
        traj = run(spec, grid, init, 0.9 * step_bound(spec), args.steps, norm)
        reps = [D.audit_dissipation(traj, ud) for ud in (0.0, u_inf, rng.uniform(-1, 1, shape))]
        reps.append(D.lyapunov_audit(traj, u_inf))
        rep = D.merge(f"run {k}", *reps)
        worst = max(c.worst_slack / c.tol for c in rep.checks)
        all_ok &= rep.passed
        print(f"run {k:2d} {str(shape):8s} {norm.family:9s} sigma={norm.sigma:<5g} nu={spec.nu:<4g} "
              f"worst slack/tol {worst:+.2e} {'ok' if rep.passed else 'FAIL'}")
    print("all audits pass" if all_ok else "SOME AUDITS FAILED")
    return 0 if all_ok else 1


if __name__ == "__main__":
    raise SystemExit(main())

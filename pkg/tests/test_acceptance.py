"""Acceptance criteria 1-10.

Each criterion prints one line "PASS|FAIL criterion N: ..." (also repeated in
the pytest terminal summary). Run directly with ``python3 tests/test_acceptance.py``
to get just the ten lines.
"""
import math
import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kwcflow import cli, diagnostics as D
from kwcflow.config import parse_text, preset_initial
from kwcflow.energy import energy_gradient, free_energy
from kwcflow.grid import Grid
from kwcflow.model import Source, constant, default_model, derived_constants, offset_w_squared, step_bound, zero
from kwcflow.oracle import fd_gradient, oracle_theta_step, oracle_v_step
from kwcflow.regnorm import FAMILIES, RegularizedNorm, verify_axioms
from kwcflow.stepper import InitialData, run, theta_step, v_step

RESULTS = {}


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS[n] = line
    print(line)
    return ok


# -- shared runs for criteria 1, 2, 4 -----------------------------------------

@lru_cache(maxsize=None)
def random_runs():
    """Ten randomized default-model configs: five 1D (32 cells), five 2D (16x16)."""
    rng = np.random.default_rng(2024)
    spec0 = default_model()
    h = 0.9 * step_bound(spec0)
    runs = []
    t0 = time.perf_counter()
    for k in range(10):
        shape = (32,) if k < 5 else (16, 16)
        grid = Grid.unit(shape)
        u_val = float(rng.uniform(-0.5, 0.5))
        spec = default_model(nu=float(rng.choice([0.0, 0.1])), source=Source.constant(u_val))
        norm = RegularizedNorm("hyperbola", float(rng.choice([0.05, 0.1, 0.3])))
        preset = ["random", "ramp", "two-grain", "step"][k % 4]
        init = preset_initial(grid, preset, float(rng.uniform(1.0, math.pi)), int(rng.integers(1 << 30)))
        traj = run(spec, grid, init, h, 200, norm)
        u_random = np.random.default_rng(k).uniform(-1, 1, shape)
        runs.append((traj, {"zero": 0.0, "u_infinity": u_val, "random": u_random}))
    return runs, time.perf_counter() - t0


def criterion_1():
    runs, elapsed = random_runs()
    worst, total = -np.inf, 0
    ok = elapsed <= 120
    for traj, udag in runs:
        for name, ud in udag.items():
            c = D.audit_dissipation(traj, ud)["per_step"]
            worst = max(worst, c.worst_slack / c.tol)
            ok &= c.passed
            total += 1
    return record(1, ok, f"per-step dissipation on 10 runs x 3 u_dagger ({total} audits), "
                         f"worst slack/tol = {worst:.2e}, runtime {elapsed:.1f}s (<= 120s)")


def _heavy_run():
    spec = default_model(delta_star=0.9, alpha0=constant(0.9), alpha=constant(0.9),
                         beta=constant(0.9), g=zero())
    grid = Grid.unit((32,))
    init = preset_initial(grid, "ramp", 0.1)
    traj = run(spec, grid, init, 0.45, 200, RegularizedNorm("hyperbola", 2e-3))
    return traj, derived_constants(spec, init.theta0_sup, grid.measure)


def criterion_2():
    runs, _ = random_runs()
    ok, worst, skipped = True, -np.inf, 0
    for traj, udag in runs:
        for ud in udag.values():
            c = D.audit_dissipation(traj, ud)["weighted_sum"]
            ok &= c.passed
            worst = max(worst, c.worst_slack / c.tol)
        r0 = traj.records[0]
        dc = derived_constants(traj.spec, float(np.max(np.abs(r0.theta))), traj.grid.measure)
        ap = D.audit_apriori(traj, (r0.v, r0.theta), dc)
        ok &= ap.passed
        skipped += ap["apriori"].skipped
    heavy, dc = _heavy_run()
    ap = D.audit_apriori(heavy, (heavy.records[0].v, heavy.records[0].theta), dc)
    in_regime = dc.regime_ok(heavy.spec.nu, heavy.norm.sigma) and not ap["apriori"].skipped
    ok &= ap.passed and in_regime and D.audit_dissipation(heavy)["weighted_sum"].passed
    return record(2, ok, f"weighted sum holds for all m (worst slack/tol = {worst:.2e}); a-priori bound "
                         f"skipped on {skipped}/10 runs outside nu,sigma < nu_star, holds on the in-regime "
                         f"run (sigma=2e-3 < nu_star={dc.nu_star:.2e}, worst {ap['apriori'].worst_slack:.2e})")


def criterion_3():
    ok, details = True, []
    for shape in ((32,), (16, 16)):
        spec = default_model(source=Source(((0.0, 0.8), (1.0, 0.2)), math.inf, 0.2))
        grid = Grid.unit(shape)
        traj = run(spec, grid, preset_initial(grid, "ramp"), 0.45, 100, RegularizedNorm("hyperbola", 0.1))
        rep = D.lyapunov_audit(traj, 0.2)
        ok &= rep.passed
        details.append(f"{len(shape)}D adjacent {rep['adjacent'].worst_slack:.1e}, "
                       f"pairs {rep['pairs'].worst_slack:.1e}")
    return record(3, ok, "Lyapunov J nonincreasing with u_dagger = u_infinity; " + "; ".join(details))


def criterion_4():
    runs, _ = random_runs()
    ok, excess = True, -np.inf
    for traj, _ in runs:
        sup0 = float(np.max(np.abs(traj.records[0].theta)))
        for r in traj.records:
            ok &= bool(r.v.min() >= 0.0 and r.v.max() <= 1.0)
            excess = max(excess, float(np.max(np.abs(r.theta))) - sup0)
    ok &= excess <= 1e-9
    return record(4, ok, f"0 <= w, eta <= 1 exactly at all 2010 records; max|theta_i| - max|theta_0| "
                         f"= {excess:.1e} (<= 1e-9)")


def criterion_5():
    t0 = time.perf_counter()
    grid = Grid.unit((8,))
    worst_t, worst_v = 0.0, 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        spec = default_model(nu=float(rng.choice([0.0, 0.2])))
        norm = RegularizedNorm(str(rng.choice(["hyperbola", "tanh", "arctan"])), float(rng.uniform(0.05, 0.5)))
        h = float(rng.uniform(0.01, step_bound(spec)))
        v_prev = rng.uniform(0, 1, (2, 8))
        th_prev = rng.uniform(-2, 2, 8)
        u = rng.uniform(-1, 1, 8)
        v_st = v_step(grid, v_prev, th_prev, u, h, spec, norm, tol=1e-12)
        v_or = oracle_v_step(grid, v_prev, th_prev, u, h, spec, norm, seed=seed)
        th_st = theta_step(grid, v_st, th_prev, h, spec, norm)
        th_or = oracle_theta_step(grid, v_st, th_prev, h, spec, norm)
        worst_v = max(worst_v, float(np.max(np.abs(v_st - v_or.minimizer))))
        worst_t = max(worst_t, float(np.max(np.abs(th_st - th_or.minimizer))))
    elapsed = time.perf_counter() - t0
    ok = worst_t <= 1e-8 and worst_v <= 1e-6 and elapsed <= 60
    return record(5, ok, f"20 seeded 8-cell instances: theta max diff {worst_t:.1e} (<= 1e-8), "
                         f"v max diff {worst_v:.1e} (<= 1e-6), runtime {elapsed:.1f}s (<= 60s)")


def criterion_6():
    worst = 0.0
    for k in range(20):
        family = ("hyperbola", "p_growth")[k % 2]
        nu = (0.0, 0.2)[(k // 2) % 2]
        rng = np.random.default_rng(100 + k)
        grid = Grid.unit((6,)) if k < 10 else Grid.unit((3, 4))
        spec = default_model(nu=nu, beta=offset_w_squared(0.5))
        norm = RegularizedNorm(family, float(rng.uniform(0.1, 0.6)))
        v = rng.uniform(0.1, 0.9, (2,) + grid.shape)
        th = rng.normal(size=grid.shape)
        gv, gt = energy_gradient(grid, v, th, spec, norm)
        m = grid.cell_measure
        fv = fd_gradient(lambda x: free_energy(grid, x, th, spec, norm).total, v, 1e-6) / m
        ft = fd_gradient(lambda x: free_energy(grid, v, x, spec, norm).total, th, 1e-6) / m
        for a, b in ((gv, fv), (gt, ft)):
            worst = max(worst, float(np.max(np.abs(a - b))) / max(1.0, float(np.max(np.abs(b)))))
    return record(6, worst <= 1e-6, f"energy_gradient vs central differences on 20 instances "
                                    f"(hyperbola/p_growth x nu in {{0, 0.2}}): worst relative error {worst:.1e}")


def criterion_7():
    reports = [verify_axioms(RegularizedNorm(f, s), 10_000) for f in FAMILIES for s in (0.5, 0.1, 0.02)]
    ok = all(r.passed for r in reports)
    worst = max(r.worst for r in reports)
    failed = [f"{r.family}@{r.sigma:g}" for r in reports if not r.passed]
    return record(7, ok, f"verify_axioms on 5 families x 3 sigma, 1e4 samples each: worst violation "
                         f"{worst:.1e}" + (f"; failed {failed}" if failed else ""))


def criterion_8(tmp_dir=None):
    cfg = parse_text("grid.shape = 32\nnorm.family = hyperbola\n")
    sigmas = (0.5, 0.1, 0.02, 0.004)
    rows = cli.sigma_sweep_rows(cfg, sigmas)
    dev = [r["deviation"] for r in rows]
    ok = all(r["within_bound"] for r in rows) and all(b < a for a, b in zip(dev, dev[1:]))
    if tmp_dir is not None:
        ok &= cli.cmd_sigma_sweep(cfg, Path(tmp_dir), sigmas) == 0
    return record(8, ok, "sigma sweep deviations " + ", ".join(f"{d:.3e}" for d in dev)
                         + " strictly decreasing and within the witness bound")


def criterion_9():
    t0 = time.perf_counter()
    grid = Grid.unit((32,))
    traj = run(default_model(), grid, preset_initial(grid, "ramp", math.pi), 0.1, 2000,
               RegularizedNorm("hyperbola", 0.1))
    elapsed = time.perf_counter() - t0
    om = D.omega_limit(traj, 0.0)
    ok = om.theta_spread < 1e-3 and om.v_residual < 1e-5 and om.bounds_ok and elapsed <= 60
    return record(9, ok, f"2000 steps h=0.1: theta spread {om.theta_spread:.1e} (< 1e-3), v residual "
                         f"{om.v_residual:.1e} (< 1e-5), bounds ok={om.bounds_ok}, runtime {elapsed:.1f}s")


def criterion_10():
    cfg = parse_text("grid.shape = 32\n")
    rows = cli.h_sweep_rows(cfg, (0.1, 0.05), 2.0)
    change = rows[1]["relative_change"]
    return record(10, change < 0.05, f"F(T=2) with h=0.1: {rows[0]['final_energy']:.6f}, h=0.05: "
                                     f"{rows[1]['final_energy']:.6f}, relative change {change:.2%} (< 5%)")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("n", range(1, 11))
def test_criterion(n, tmp_path):
    fn = CRITERIA[n - 1]
    ok = fn(tmp_path) if n == 8 else fn()
    assert ok, RESULTS[n]


if __name__ == "__main__":
    results = [fn() for fn in CRITERIA]
    sys.exit(0 if all(results) else 1)

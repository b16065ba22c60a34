"""Command line entry point.

    kwcflow run CONFIG --out DIR
    kwcflow validate CONFIG
    kwcflow constants CONFIG
    kwcflow sigma-sweep CONFIG --out DIR [--sigmas 0.5,0.1,...]
    kwcflow h-sweep CONFIG --out DIR [--h-values 0.1,0.05] [--horizon T]
    kwcflow audit --out DIR

Exit status: 0 success (all requested audits pass), 1 an audit or sweep
check failed, 2 bad configuration or input files, 3 solver failure.
``KWC_THREADS`` caps the worker pool used by the sweeps.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics, energy, fileio
from .config import ConfigError, RunConfig, dump, parse_config, parse_text
from .grid import Grid
from .model import step_bound, validate
from .regnorm import EXACT, make_norm
from .stepper import SolverError, StepRecord, StepSizeError, Trajectory, run

log = logging.getLogger("kwcflow")

EXIT_OK, EXIT_AUDIT, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3


def worker_count() -> int:
    raw = os.environ.get("KWC_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


# -- helpers -----------------------------------------------------------------

def _u_dagger_set(cfg: RunConfig, grid: Grid, spec) -> dict:
    out = {}
    for name in cfg.audit.u_dagger:
        if name == "zero":
            out[name] = grid.zeros()
        elif name == "u_infinity":
            src = spec.source
            out[name] = src.limit(grid) if src.u_infinity is not None else grid.zeros()
        else:
            rng = np.random.default_rng(cfg.initial.seed + 1)
            out[name] = rng.uniform(-1.0, 1.0, grid.shape)
    return out


def run_audits(cfg: RunConfig, traj: Trajectory) -> diagnostics.AuditReport:
    spec, grid = traj.spec, traj.grid
    tol = cfg.tolerance.slack
    reports = []
    udag = _u_dagger_set(cfg, grid, spec)
    if cfg.audit.dissipation:
        for name, ud in udag.items():
            r = diagnostics.audit_dissipation(traj, ud, tol)
            for c in r.checks:
                c.name = f"dissipation[{name}].{c.name}"
            reports.append(r)
    if cfg.audit.lyapunov:
        r = diagnostics.lyapunov_audit(traj, None, tol)
        for c in r.checks:
            c.name = f"lyapunov.{c.name}"
        reports.append(r)
    if cfg.audit.apriori:
        rec0 = traj.records[0]
        constants = cfg.constants()
        r = diagnostics.audit_apriori(traj, (rec0.v, rec0.theta), constants, tol)
        for c in r.checks:
            c.name = f"apriori.{c.name}"
        reports.append(r)
    if cfg.audit.omega:
        om = diagnostics.omega_limit(traj, None, cfg.tolerance.spread, cfg.tolerance.residual, tol)
        r = om.to_report()
        for c in r.checks:
            c.name = f"omega.{c.name}"
        reports.append(r)
    return diagnostics.merge("audits", *reports)


def _write_report(out: Path, report: diagnostics.AuditReport) -> None:
    (out / "audit.txt").write_text(report.to_text() + "\n")
    (out / "audit.csv").write_text(report.to_csv())


class _Snapshots:
    def __init__(self, out: Path, grid: Grid, every: int, steps: int, pgm: bool):
        self.dir = out / "snapshots"
        self.grid, self.every, self.steps, self.pgm = grid, every, steps, pgm

    def __call__(self, rec: StepRecord):
        due = rec.index == self.steps or (self.every and rec.index % self.every == 0)
        if not due:
            return
        prefix = self.dir / f"step_{rec.index:06d}"
        fileio.write_state(prefix, self.grid, rec.v, rec.theta)
        if self.pgm:
            for name, f in zip(fileio.STATE_FIELDS, (rec.v[0], rec.v[1], rec.theta)):
                fileio.write_pgm(prefix.with_name(f"{prefix.name}.{name}.pgm"), f)


def execute(cfg: RunConfig, out: Path | None = None, steps: int | None = None,
            h: float | None = None) -> Trajectory:
    """Run the configured scenario; with ``out`` also write trace and snapshots."""
    grid, spec, norm = cfg.build_grid(), cfg.build_spec(), cfg.build_norm()
    init = cfg.initial_data(grid)
    h = cfg.resolved_h(spec) if h is None else h
    steps = cfg.time.steps if steps is None else steps
    hooks, trace = [], None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        src = spec.source
        ud = src.limit(grid) if src.u_infinity is not None else grid.zeros()
        trace = fileio.TraceWriter(out / "trace.csv", grid, spec, h, ud)
        hooks += [trace, _Snapshots(out, grid, cfg.output.snapshot_every, steps, cfg.output.pgm)]

    def hook(rec):
        for f in hooks:
            f(rec)

    try:
        return run(spec, grid, init, h, steps, norm, tol=cfg.tolerance.v,
                   theta_tol=cfg.tolerance.theta, callback=hook,
                   linear_solver=cfg.solver.linear, v_method=cfg.solver.v,
                   theta_method=cfg.solver.theta)
    finally:
        if trace is not None:
            trace.close()


def rebuild_trajectory(cfg: RunConfig, arrays: dict) -> Trajectory:
    """Trajectory from an archive; energies are recomputed from the fields."""
    grid = Grid(tuple(int(n) for n in arrays["shape"]), tuple(float(x) for x in arrays["spacing"]))
    spec, norm = cfg.build_spec(), cfg.build_norm()
    h = float(arrays["h"])
    traj = Trajectory(spec, grid, h, norm)
    for i, (v, th, u) in enumerate(zip(arrays["v"], arrays["theta"], arrays["u"])):
        e = energy.free_energy(grid, v, th, spec, norm, u=None if i == 0 else u)
        traj.records.append(StepRecord(i, i * h, np.array(v), np.array(th), np.array(u), e))
    return traj


# -- verbs -----------------------------------------------------------------

def cmd_run(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(dump(cfg))
    try:
        traj = execute(cfg, out)
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        if exc.trajectory is not None:
            fileio.save_trajectory(out / "trajectory.npz", exc.trajectory, dump(cfg))
        return EXIT_SOLVER
    fileio.save_trajectory(out / "trajectory.npz", traj, dump(cfg))
    report = run_audits(cfg, traj)
    _write_report(out, report)
    print(report.to_text())
    return EXIT_OK if report.passed else EXIT_AUDIT


def cmd_validate(cfg: RunConfig) -> int:
    spec = cfg.build_spec()
    report = validate(spec)
    print(report.summary())
    print(f"h = {cfg.resolved_h(spec):.6g} (h1_dagger = {step_bound(spec):.6g})")
    src = cfg.build_source()
    print(f"source settles to u_infinity: {'yes' if src.settles() else 'no'}")
    return EXIT_OK if report.passed else EXIT_AUDIT


def cmd_constants(cfg: RunConfig) -> int:
    k = cfg.constants()
    print(k.report())
    sigma = cfg.norm.sigma
    regime = "inside" if k.regime_ok(cfg.model.nu, sigma) else "outside"
    print(f"nu = {cfg.model.nu:g}, sigma = {sigma:g}: {regime} the a-priori regime (both < nu_star)")
    return EXIT_OK


SWEEP_COLUMNS = ("sigma", "phi_sigma", "phi_exact", "deviation", "bound", "within_bound")


def sigma_sweep_rows(cfg: RunConfig, sigmas) -> list[dict]:
    """Phi at each sigma vs the exact weighted TV, on the configured initial state."""
    grid, spec = cfg.build_grid(), cfg.build_spec()
    init = cfg.initial_data(grid)
    v, theta = init.v0, init.theta0
    phi_exact = energy.phi(grid, v, theta, spec, EXACT)
    a_sup = float(np.max(np.abs(spec.alpha(v[0], v[1]))))
    tv = energy.total_variation(grid, theta)
    rows = []
    for s in sigmas:
        norm = make_norm(cfg.norm.family, s, cfg.norm.p if cfg.norm.family == "p_growth" else None)
        wit = norm.witnesses()
        phi_s = energy.phi(grid, v, theta, spec, norm)
        dev = abs(phi_s - phi_exact)
        bound = a_sup * (wit.r0 * grid.measure + (1.0 - wit.q0) * tv)
        rows.append({"sigma": s, "phi_sigma": phi_s, "phi_exact": phi_exact, "deviation": dev,
                     "bound": bound, "within_bound": dev <= bound * (1 + 1e-12) + 1e-15})
    return rows


def _write_rows(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([int(r[c]) if isinstance(r[c], (bool, np.bool_)) else
                        (repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c])
                        for c in columns])


def cmd_sigma_sweep(cfg: RunConfig, out: Path, sigmas=None) -> int:
    sigmas = tuple(sigmas or cfg.sweep.sigmas)
    rows = sigma_sweep_rows(cfg, sigmas)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "sigma_sweep.csv", SWEEP_COLUMNS, rows)
    devs = [r["deviation"] for r in rows]
    monotone = all(b <= a for a, b in zip(devs, devs[1:])) if sorted(sigmas, reverse=True) == list(sigmas) else True
    for r in rows:
        print(f"sigma={r['sigma']:<8g} deviation={r['deviation']:.6e} bound={r['bound']:.6e} "
              f"{'ok' if r['within_bound'] else 'EXCEEDS'}")
    ok = all(r["within_bound"] for r in rows) and monotone
    if not monotone:
        print("deviation is not monotone in sigma")
    return EXIT_OK if ok else EXIT_AUDIT


H_COLUMNS = ("h", "steps", "final_time", "final_energy", "relative_change")


def h_sweep_rows(cfg: RunConfig, h_values, horizon: float) -> list[dict]:
    def one(h):
        steps = int(round(horizon / h))
        if abs(steps * h - horizon) > 1e-9 * horizon:
            raise ConfigError(f"h = {h} does not divide the horizon {horizon}")
        traj = execute(cfg, None, steps=steps, h=h)
        return {"h": h, "steps": steps, "final_time": steps * h,
                "final_energy": traj.records[-1].energy.total}

    with ThreadPoolExecutor(max_workers=min(worker_count(), len(h_values))) as pool:
        rows = list(pool.map(one, h_values))
    prev = None
    for r in rows:
        r["relative_change"] = (abs(r["final_energy"] - prev) / max(abs(prev), 1e-300)
                                if prev is not None else 0.0)
        prev = r["final_energy"]
    return rows


def cmd_h_sweep(cfg: RunConfig, out: Path, h_values=None, horizon=None, threshold=0.05) -> int:
    h_values = tuple(h_values or cfg.sweep.h_values)
    horizon = cfg.sweep.horizon if horizon is None else horizon
    try:
        rows = h_sweep_rows(cfg, h_values, horizon)
    except StepSizeError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "h_sweep.csv", H_COLUMNS, rows)
    for r in rows:
        print(f"h={r['h']:<8g} steps={r['steps']:<6d} F(T)={r['final_energy']:.8e} "
              f"change={r['relative_change']:.3%}")
    return EXIT_OK if all(r["relative_change"] < threshold for r in rows) else EXIT_AUDIT


def cmd_audit(out: Path) -> int:
    arrays = fileio.load_trajectory_arrays(out / "trajectory.npz")
    cfg = parse_text(arrays["config"], out)
    traj = rebuild_trajectory(cfg, arrays)
    report = run_audits(cfg, traj)
    _write_report(out, report)
    print(report.to_text())
    return EXIT_OK if report.passed else EXIT_AUDIT


# -- entry -----------------------------------------------------------------

def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kwcflow",
                                description="Implicit scheme for the Allen-Cahn / KWC grain system")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def with_config(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", type=Path)
        return sp

    sp = with_config("run", "run a scenario, write trace/snapshots, audit it")
    sp.add_argument("--out", type=Path, required=True)
    with_config("validate", "check model assumptions and the time step")
    with_config("constants", "print the derived constants")
    sp = with_config("sigma-sweep", "compare Phi at decreasing sigma with the exact weighted TV")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--sigmas", type=_floats)
    sp = with_config("h-sweep", "self-convergence in the time step")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--h-values", type=_floats)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--threshold", type=float, default=0.05)
    sp = sub.add_parser("audit", help="re-audit a saved trajectory")
    sp.add_argument("--out", type=Path, required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.verb == "audit":
            return cmd_audit(args.out)
        # validate reports every assumption instead of stopping at the first
        cfg = parse_config(args.config, validate_model=args.verb != "validate")
        if args.verb == "run":
            return cmd_run(cfg, args.out)
        if args.verb == "validate":
            return cmd_validate(cfg)
        if args.verb == "constants":
            return cmd_constants(cfg)
        if args.verb == "sigma-sweep":
            return cmd_sigma_sweep(cfg, args.out, args.sigmas)
        if args.verb == "h-sweep":
            return cmd_h_sweep(cfg, args.out, args.h_values, args.horizon, args.threshold)
    except (ConfigError, fileio.SnapshotError, StepSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Read-only audits of computed trajectories.

Every audit recomputes energies from the stored fields instead of trusting
the logged values, so a corrupted record is caught rather than hidden.
Reports are lists of named checks with their worst slack (lhs - rhs; a
check passes when its worst slack is <= its tolerance).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import energy
from .model import DerivedConstants
from .stepper import Trajectory, project_box, projected_residual


@dataclass
class Check:
    name: str
    worst_slack: float
    tol: float
    worst_at: object = None
    skipped: bool = False
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.skipped or bool(self.worst_slack <= self.tol)


@dataclass
class AuditReport:
    title: str
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_text(self) -> str:
        lines = [f"{self.title}: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            if c.skipped:
                lines.append(f"  skip {c.name}: {c.note}")
                continue
            state = "ok  " if c.passed else "FAIL"
            where = "" if c.worst_at is None else f" at {c.worst_at}"
            lines.append(f"  {state} {c.name}: worst slack {c.worst_slack:+.3e} (tol {c.tol:.1e}){where}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "worst_slack", "pass"])
        for c in self.checks:
            w.writerow([c.name, "nan" if c.skipped else repr(float(c.worst_slack)), int(c.passed)])
        return buf.getvalue()


def merge(title: str, *reports: AuditReport) -> AuditReport:
    return AuditReport(title, [c for r in reports for c in r.checks])


# -- per-record quantities --------------------------------------------------

@dataclass
class _Series:
    F: np.ndarray          # free energy per record
    coup: np.ndarray       # c (u_dagger, w_i)
    dv2: np.ndarray        # |v_i - v_{i-1}|^2, index 0 unused
    dth2: np.ndarray       # |sqrt(alpha0(v_i)) (theta_i - theta_{i-1})|^2
    du2: np.ndarray        # |u_i - u_dagger|^2


def _series(traj: Trajectory, u_dagger) -> _Series:
    grid, spec = traj.grid, traj.spec
    m = grid.cell_measure
    ud = np.broadcast_to(np.asarray(u_dagger, dtype=float), grid.shape)
    recs = traj.records
    n = len(recs)
    F = np.array([energy.free_energy(grid, r.v, r.theta, spec, traj.norm).total for r in recs])
    coup = np.array([spec.c * grid.inner(ud, r.v[0]) for r in recs])
    dv2, dth2, du2 = np.zeros(n), np.zeros(n), np.zeros(n)
    for i in range(1, n):
        a, b = recs[i - 1], recs[i]
        dv2[i] = float(np.sum((b.v - a.v) ** 2)) * m
        a0 = spec.alpha0(b.v[0], b.v[1])
        dth2[i] = float(np.sum(a0 * (b.theta - a.theta) ** 2)) * m
        du = b.u - ud
        du2[i] = float(np.sum(du * du)) * m
    return _Series(F, coup, dv2, dth2, du2)


def default_slack_tol(traj: Trajectory) -> float:
    f0 = energy.free_energy(traj.grid, traj.records[0].v, traj.records[0].theta,
                            traj.spec, traj.norm).total
    return 1e-7 * (1.0 + abs(f0))


def sample_times(traj: Trajectory, count: int = 41) -> np.ndarray:
    """Deterministic (s, t) mesh: uniform points plus off-node points in every region."""
    T = traj.steps * traj.h
    if traj.steps == 0:
        return np.array([0.0])
    base = np.linspace(0.0, T, count)
    shifted = np.clip(base + 0.37 * traj.h, 0.0, T)
    return np.unique(np.concatenate([base, shifted]))


# -- dissipation -------------------------------------------------------------

def audit_dissipation(traj: Trajectory, u_dagger=0.0, slack_tol: float | None = None,
                      mesh: int = 41) -> AuditReport:
    """Per-step dissipation, its i-weighted sum for every m, and the two-time
    form on interpolants over a sampled (s, t) mesh."""
    tol = default_slack_tol(traj) if slack_tol is None else slack_tol
    h, c = traj.h, traj.spec.c
    S = _series(traj, u_dagger)
    n = len(traj.records)
    report = AuditReport("dissipation")
    if n == 1:
        report.checks += [Check("per_step", 0.0, tol), Check("weighted_sum", 0.0, tol),
                          Check("two_time", 0.0, tol)]
        return report
    i = np.arange(1, n)
    lhs = S.dv2[1:] / (2 * h) + S.dth2[1:] / h + S.F[1:] + S.coup[1:]
    rhs = S.F[:-1] + S.coup[:-1] + c * c * h * S.du2[1:]
    per = lhs - rhs
    k = int(np.argmax(per))
    report.checks.append(Check("per_step", float(per[k]), tol, f"step {k + 1}"))

    # sum_{i<=m} i*(...) + m h (F_m + coup_m) <= h sum_{i<=m} (F_{i-1} + coup_{i-1}) + c^2 h^2 sum i |du_i|^2
    lhs2 = 0.5 * np.cumsum(i * S.dv2[1:]) + np.cumsum(i * S.dth2[1:]) + i * h * (S.F[1:] + S.coup[1:])
    rhs2 = h * np.cumsum(S.F[:-1] + S.coup[:-1]) + c * c * h * h * np.cumsum(i * S.du2[1:])
    w = lhs2 - rhs2
    # the weighted sum scales with m h, so is its rounding
    w_scaled = w / np.maximum(1.0, i * h)
    k = int(np.argmax(w_scaled))
    report.checks.append(Check("weighted_sum", float(w_scaled[k]), tol, f"m={k + 1}"))

    report.checks.append(_two_time(traj, S, tol, mesh))
    return report


def _overlap(s, t, lo, hi):
    return np.clip(np.minimum(t, hi) - np.maximum(s, lo), 0.0, None)


def _two_time(traj: Trajectory, S: _Series, tol: float, mesh: int) -> Check:
    h, c = traj.h, traj.spec.c
    n = len(traj.records) - 1
    times = sample_times(traj, mesh)
    lo = (np.arange(1, n + 1) - 1) * h
    hi = np.arange(1, n + 1) * h
    rate = S.dv2[1:] / (2 * h * h) + S.dth2[1:] / (h * h)   # integrand of the dissipation on each step
    E = S.F + S.coup

    def Q(t):  # c^2 int_0^t |u_bar - u_dagger|^2
        return c * c * float(np.sum(_overlap(0.0, t, lo, hi) * S.du2[1:]))

    # The source integrals run to the step nodes bracketing [s, t]: between
    # nodes the energy may rise by up to c^2 h |u_i - u_dagger|^2, which the
    # per-step inequality only pays for over the whole step.
    worst, where = -np.inf, None
    for a, s in enumerate(times):
        j = min(int(np.floor(s / h + 1e-9)), n)
        rhs = E[j] - Q(j * h)
        for t in times[a:]:
            i = min(max(int(np.ceil(t / h - 1e-9)), 0), n)
            lhs = float(np.sum(_overlap(s, t, lo, hi) * rate)) + E[i] - Q(i * h)
            if lhs - rhs > worst:
                worst, where = lhs - rhs, f"s={s:.6g}, t={t:.6g}"
    return Check("two_time", float(worst), tol, where)


# -- a-priori estimate -------------------------------------------------------

def audit_apriori(traj: Trajectory, anchor, constants: DerivedConstants,
                  slack_tol: float | None = None, force: bool = False) -> AuditReport:
    """Both sides of the a-priori estimate for every m, anchored at ``anchor = (w0, omega0)``.

    Skipped (with a notice) when nu or sigma is not below nu_star, unless ``force``.
    """
    tol = default_slack_tol(traj) if slack_tol is None else slack_tol
    grid, spec, h = traj.grid, traj.spec, traj.h
    report = AuditReport("a-priori")
    sigma = getattr(traj.norm, "sigma", 0.0)
    if not force and not constants.regime_ok(spec.nu, sigma):
        report.checks.append(Check("apriori", np.nan, tol, skipped=True,
                                   note=f"nu={spec.nu:g}, sigma={sigma:g} not below "
                                        f"nu_star={constants.nu_star:.3e}; estimate not claimed"))
        return report
    w0, om0 = anchor
    w0 = energy.check_pair(grid, w0)
    om0 = grid.check(om0)
    m_ = grid.cell_measure
    A, B, C = constants.A_star, constants.B_star, constants.C_star
    S = _series(traj, 0.0)
    recs = traj.records

    def dist(r):
        return 0.5 * (float(np.sum((r.v - w0) ** 2)) * m_ + A * grid.norm(r.theta - om0) ** 2)

    def h1sq(f):
        return grid.norm(f) ** 2 + grid.face_inner(grid.face_gradient(f), grid.face_gradient(f))

    anchor_size = 1.0 + h1sq(w0[0]) + h1sq(w0[1]) + h1sq(om0)
    u2 = np.array([grid.norm(r.u) ** 2 for r in recs])
    worst, where = -np.inf, None
    d0 = dist(recs[0])
    for m in range(1, len(recs)):
        lhs = dist(recs[m]) + 0.5 * B * h * float(np.sum(S.F[:m]))
        rhs = (d0 + h / B * S.F[0] + m * h * C * anchor_size
               + 0.5 * spec.c ** 2 * h * float(np.sum(u2[1:m + 1])))
        if lhs - rhs > worst:
            worst, where = lhs - rhs, f"m={m}"
    if len(recs) == 1:
        worst = 0.0
    report.checks.append(Check("apriori", float(worst), tol, where))
    return report


# -- Lyapunov ----------------------------------------------------------------

def lyapunov_audit(traj: Trajectory, u_dagger=None, slack_tol: float | None = None,
                   mesh: int = 41) -> AuditReport:
    """J must be nonincreasing across adjacent steps and across all sampled s < t."""
    grid, spec, h = traj.grid, traj.spec, traj.h
    if u_dagger is None:
        u_dagger = _u_infinity(traj)
    S = _series(traj, u_dagger)
    c = spec.c
    J = S.F + S.coup - c * c * h * np.cumsum(S.du2)
    tol = 1e-7 * (1.0 + abs(J[0])) if slack_tol is None else slack_tol
    report = AuditReport("lyapunov")
    if len(J) == 1:
        report.checks += [Check("adjacent", 0.0, tol), Check("pairs", 0.0, tol)]
        return report
    d = np.diff(J)
    k = int(np.argmax(d))
    report.checks.append(Check("adjacent", float(d[k]), tol, f"step {k + 1}"))
    # J as a left-continuous step function of time: J(t) = J_{ceil(t/h)}
    times = sample_times(traj, mesh)
    idx = np.minimum(np.ceil(times / h - 1e-9).astype(int), len(J) - 1)
    Jt = J[idx]
    running_min = np.minimum.accumulate(Jt)
    viol = Jt[1:] - running_min[:-1]
    k = int(np.argmax(viol))
    report.checks.append(Check("pairs", float(viol[k]), tol, f"t={times[k + 1]:.6g}"))
    return report


# -- omega limit -------------------------------------------------------------

@dataclass
class OmegaReport:
    theta_spread: float
    v_residual: float
    bounds_ok: bool
    lyapunov_monotone: bool
    lyapunov_worst: float
    converged: bool
    spread_tol: float
    residual_tol: float
    theta_bound_excess: float = 0.0

    def to_text(self) -> str:
        return "\n".join([
            f"omega-limit: {'CONVERGED' if self.converged else 'NOT CONVERGED'}",
            f"  theta spread      {self.theta_spread:.3e} (tol {self.spread_tol:.1e})",
            f"  v residual        {self.v_residual:.3e} (tol {self.residual_tol:.1e})",
            f"  bounds            {'ok' if self.bounds_ok else 'VIOLATED'} "
            f"(theta excess {self.theta_bound_excess:+.1e})",
            f"  lyapunov monotone {'yes' if self.lyapunov_monotone else 'no'} "
            f"(worst {self.lyapunov_worst:+.3e})",
        ])

    def to_report(self) -> AuditReport:
        return AuditReport("omega-limit", [
            Check("theta_spread", self.theta_spread, self.spread_tol),
            Check("v_residual", self.v_residual, self.residual_tol),
            Check("bounds", 0.0 if self.bounds_ok else 1.0, 0.0),
            Check("lyapunov_monotone", 0.0 if self.lyapunov_monotone else self.lyapunov_worst, 0.0),
        ])


def _u_infinity(traj: Trajectory) -> np.ndarray:
    src = traj.spec.source
    if src.u_infinity is None:
        return traj.grid.zeros()
    return src.limit(traj.grid)


def stationarity_residual(grid, spec, v, u_infinity, tau: float = 1.0) -> float:
    """Projected fixed-point residual of -Lap v + gamma'(w) + grad g(v) + (c u, 0) in the box."""
    w, eta = v
    gw, ge = spec.g.gradient(w, eta)
    G = np.empty_like(v)
    G[0] = -grid.neumann_laplacian(w) + spec.gamma.dsmooth(w) + gw + spec.c * u_infinity
    G[1] = -grid.neumann_laplacian(eta) + ge
    return projected_residual(v, G, tau)


def check_bounds(traj: Trajectory, theta_tol: float = 1e-9) -> tuple[bool, float]:
    cap = float(np.max(np.abs(traj.records[0].theta)))
    box = all(energy.in_box(r.v) for r in traj.records)
    excess = max(float(np.max(np.abs(r.theta))) - cap for r in traj.records)
    return bool(box and excess <= theta_tol), excess


def omega_limit(traj: Trajectory, u_infinity=None, spread_tol: float = 1e-3,
                residual_tol: float = 1e-5, slack_tol: float | None = None) -> OmegaReport:
    grid = traj.grid
    u_inf = _u_infinity(traj) if u_infinity is None else np.broadcast_to(
        np.asarray(u_infinity, dtype=float), grid.shape)
    last = traj.records[-1]
    spread = float(np.ptp(last.theta))
    res = stationarity_residual(grid, traj.spec, last.v, u_inf)
    bounds_ok, excess = check_bounds(traj)
    ly = lyapunov_audit(traj, u_inf, slack_tol)
    worst = max(c.worst_slack for c in ly.checks)
    converged = spread <= spread_tol and res <= residual_tol and bounds_ok
    return OmegaReport(spread, res, bounds_ok, ly.passed, worst, converged,
                       spread_tol, residual_tol, excess)


# box projection re-exported for callers that build residuals themselves
__all__ = ["Check", "AuditReport", "merge", "audit_dissipation", "audit_apriori",
           "lyapunov_audit", "omega_limit", "OmegaReport", "stationarity_residual",
           "check_bounds", "default_slack_tol", "sample_times", "project_box"]

"""Implicit time stepping for the coupled Allen-Cahn / KWC system.

One step first updates ``v = [w, eta]`` with theta frozen at the previous
level, then updates theta with the new ``v`` frozen:

* ``v_step`` minimizes a strongly convex (for h <= h1_dagger) functional over
  the box [0,1]^2 by projected Newton (default) or spectral projected
  gradients. The box indicator is enforced by projection.
* ``theta_step`` minimizes the weighted minimizing-movement functional
  ``K(theta) = (1/2h)(alpha0 (theta - theta_prev), theta - theta_prev) + Phi``
  by damped Newton (default) or plain lagged diffusivity.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import energy
from .energy import EnergyBreakdown, check_pair
from .grid import Grid
from .model import ModelSpec, step_bound
from .regnorm import EXACT, RegularizedNorm

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None, trajectory=None):
        super().__init__(msg)
        self.residual = residual
        self.trajectory = trajectory


class StepSizeError(ValueError):
    pass


@dataclass
class InitialData:
    v0: np.ndarray
    theta0: np.ndarray

    def __post_init__(self):
        self.v0 = np.array(self.v0, dtype=float)
        self.theta0 = np.array(self.theta0, dtype=float)

    @property
    def theta0_sup(self) -> float:
        return float(np.max(np.abs(self.theta0)))

    def check(self, grid: Grid) -> None:
        check_pair(grid, self.v0)
        grid.check(self.theta0)
        if not energy.in_box(self.v0):
            raise ValueError("initial w, eta must lie in [0, 1]")
        if not np.all(np.isfinite(self.theta0)):
            raise ValueError("initial theta must be finite")


# -- v-step ---------------------------------------------------------------

@dataclass
class _VProblem:
    grid: Grid
    spec: ModelSpec
    v_prev: np.ndarray
    u: np.ndarray
    h: float
    tv_density: np.ndarray
    quad_density: np.ndarray

    @classmethod
    def build(cls, grid, spec, v_prev, theta_prev, u, h, norm):
        s = energy.grad_magnitude(grid, theta_prev)
        return cls(grid, spec, v_prev, u, h, norm.profile(s), spec.nu ** 2 * s * s)

    def objective(self, v) -> float:
        g, spec, m = self.grid, self.spec, self.grid.cell_measure
        w, eta = v
        dv = v - self.v_prev
        dens = (spec.gamma.smooth(w) + spec.g(w, eta) + spec.c * self.u * w
                + spec.alpha(w, eta) * self.tv_density + spec.beta(w, eta) * self.quad_density)
        dirichlet = sum(g.face_inner(g.face_gradient(f), g.face_gradient(f)) for f in v)
        return float(np.sum(dv * dv) * m / (2 * self.h) + 0.5 * dirichlet + np.sum(dens) * m)

    def gradient(self, v) -> np.ndarray:
        """L2-gradient (a field); the derivative w.r.t. cell values is this times the cell measure."""
        g, spec = self.grid, self.spec
        w, eta = v
        gw, ge = spec.g.gradient(w, eta)
        aw, ae = spec.alpha.gradient(w, eta)
        bw, be = spec.beta.gradient(w, eta)
        out = (v - self.v_prev) / self.h
        out[0] += (-g.neumann_laplacian(w) + spec.gamma.dsmooth(w) + gw + spec.c * self.u
                   + aw * self.tv_density + bw * self.quad_density)
        out[1] += -g.neumann_laplacian(eta) + ge + ae * self.tv_density + be * self.quad_density
        return out

    def hessian(self, v) -> sp.csr_matrix:
        """Hessian of the objective divided by the cell measure; unknowns ordered [w, eta]."""
        g, spec = self.grid, self.spec
        w, eta = v
        lap = sp.csr_matrix(sum(dk.T @ dk for dk in g.difference_matrices))
        blocks = [spec.g.hessian(w, eta), spec.alpha.hessian(w, eta), spec.beta.hessian(w, eta)]
        ww, we, ee = (b0 + self.tv_density * b1 + self.quad_density * b2
                      for b0, b1, b2 in zip(*blocks))
        ww = ww + spec.gamma.d2smooth(w) + 1.0 / self.h
        ee = ee + 1.0 / self.h
        diag = lambda f: sp.diags(np.broadcast_to(f, g.shape).ravel())
        return sp.bmat([[lap + diag(ww), diag(we)], [diag(we), lap + diag(ee)]], format="csr")


def project_box(v):
    return np.clip(v, 0.0, 1.0)


def projected_residual(v, grad, tau: float = 1.0) -> float:
    """Sup norm of (v - P(v - tau grad)) / tau; zero exactly at constrained stationary points."""
    return float(np.max(np.abs(v - project_box(v - tau * grad)))) / tau


@dataclass
class VStepInfo:
    iterations: int
    residual: float
    objective: float


def _v_spg(prob: _VProblem, x, tol, max_iter):
    """Spectral projected gradient: BB steps, nonmonotone Armijo (memory 10)."""
    m = prob.grid.cell_measure
    f = prob.objective(x)
    gr = prob.gradient(x)
    res = projected_residual(x, gr)
    lam = min(max(1.0 / max(res, 1e-12), 1e-10), prob.h)
    history = [f]
    k = 0
    while res > tol:
        if k >= max_iter:
            raise SolverError(f"v-step did not converge in {max_iter} iterations "
                              f"(projected residual {res:.3e} > {tol:.1e})", residual=res)
        d = project_box(x - lam * gr) - x
        slope = float(np.sum(gr * d)) * m
        fref = max(history[-10:])
        a = 1.0
        while True:
            xn = x + a * d
            fn = prob.objective(xn)
            if fn <= fref + 1e-4 * a * slope or a < 1e-12:
                break
            # safeguarded quadratic interpolation
            denom = 2.0 * (fn - f - a * slope)
            a_new = -slope * a * a / denom if denom > 0 else 0.5 * a
            a = min(max(a_new, 0.1 * a), 0.5 * a)
        gn = prob.gradient(xn)
        s, y = xn - x, gn - gr
        sy = float(np.sum(s * y))
        lam = float(np.sum(s * s)) / sy if sy > 0 else 1e10
        lam = min(max(lam, 1e-10), 1e10)
        x, f, gr = xn, fn, gn
        history.append(f)
        res = projected_residual(x, gr)
        k += 1
    return x, VStepInfo(k, res, f)


def _v_projected_newton(prob: _VProblem, x, tol, max_iter):
    """Projected Newton: Newton on the variables not held at a bound, a
    search along the projection arc, and a projected-gradient fallback when
    the arc search fails (possible far from the solution)."""
    m = prob.grid.cell_measure
    f = prob.objective(x)
    gr = prob.gradient(x)
    res = projected_residual(x, gr)
    k = 0
    eps_f = 8 * np.finfo(float).eps
    while res > tol:
        if k >= max_iter:
            raise SolverError(f"v-step did not converge in {max_iter} iterations "
                              f"(projected residual {res:.3e} > {tol:.1e})", residual=res)
        xf, gf = x.ravel(), gr.ravel()
        held = ((xf <= 0.0) & (gf > 0)) | ((xf >= 1.0) & (gf < 0))
        free = ~held
        H = prob.hessian(x)
        d = np.zeros_like(xf)
        if free.any():
            d[free] = -spla.spsolve(H[free][:, free].tocsc(), gf[free])
        accepted = False
        if np.all(np.isfinite(d)) and gf @ d < 0:
            t = 1.0
            for _ in range(40):
                xn = project_box(x + t * d.reshape(x.shape))
                fn = prob.objective(xn)
                if fn <= f + 1e-4 * float(gf @ (xn.ravel() - xf)) * m + eps_f * abs(f):
                    accepted = True
                    break
                t *= 0.5
        if not accepted:
            # projected gradient step scaled by the Hessian diagonal
            hd = np.maximum(H.diagonal(), 1e-12).reshape(x.shape)
            t = 1.0
            for _ in range(60):
                xn = project_box(x - t * gr / hd)
                fn = prob.objective(xn)
                if fn <= f + 1e-4 * float(np.sum(gr * (xn - x))) * m + eps_f * abs(f):
                    break
                t *= 0.5
        x, f = xn, fn
        gr = prob.gradient(x)
        res = projected_residual(x, gr)
        k += 1
    return x, VStepInfo(k, res, f)


def v_step(grid: Grid, v_prev, theta_prev, u_i, h: float, spec: ModelSpec, norm,
           tol: float = 1e-9, max_iter: int = 10_000, h1_dagger: float | None = None,
           start=None, method: str = "newton", return_info: bool = False):
    """Solve the v-problem of one step with theta frozen at ``theta_prev``.

    Returns the box-constrained minimizer certified by the projected-gradient
    fixed-point residual (tau = 1) being <= ``tol``. ``method`` is
    ``"newton"`` (projected Newton, default) or ``"spg"``.
    """
    v_prev = check_pair(grid, v_prev)
    h1 = step_bound(spec) if h1_dagger is None else h1_dagger
    if not 0 < h <= h1 * (1 + 1e-12):
        raise StepSizeError(f"time step h={h} outside (0, h1_dagger={h1:.6g}]")
    u_i = np.broadcast_to(np.asarray(u_i, dtype=float), grid.shape)
    prob = _VProblem.build(grid, spec, v_prev, theta_prev, u_i, h, norm)
    x = project_box(v_prev if start is None else check_pair(grid, start))
    if method == "newton":
        x, info = _v_projected_newton(prob, x, tol, max_iter)
    elif method == "spg":
        x, info = _v_spg(prob, x, tol, max_iter)
    else:
        raise ValueError(f"unknown v-step method {method!r}")
    return (x, info) if return_info else x


# -- theta-step -----------------------------------------------------------

def theta_objective(grid: Grid, v, theta, theta_prev, h, spec, norm) -> float:
    a0 = spec.alpha0(v[0], v[1])
    d = theta - theta_prev
    return float(np.sum(a0 * d * d) * grid.cell_measure / (2 * h)) + energy.phi(grid, v, theta, spec, norm)


def theta_gradient(grid: Grid, v, theta, theta_prev, h, spec, norm) -> np.ndarray:
    a0 = spec.alpha0(v[0], v[1])
    flux = grid.cell_to_flux(energy.theta_flux(grid, v, theta, spec, norm))
    return a0 * (theta - theta_prev) / h - grid.face_divergence(flux)


def diffusion_matrix(grid: Grid, weights: np.ndarray) -> sp.csr_matrix:
    """sum_k D_k^T diag(weights) D_k; each face is weighted by its owning (lower) cell."""
    W = sp.diags(np.asarray(weights, dtype=float).ravel())
    return sp.csr_matrix(sum(dk.T @ W @ dk for dk in grid.cell_difference_matrices))


def theta_hessian(grid: Grid, a, b, theta, nu: float, norm) -> sp.csr_matrix:
    """Hessian of Phi (divided by the cell measure) w.r.t. cell values of theta."""
    xi = grid.cell_gradient(theta)
    s = np.sqrt(np.sum(xi * xi, axis=0))
    r = norm.ratio(s)
    diff = a * r + 2.0 * nu ** 2 * b
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(s > 0, a * (norm.d2profile(s) - r) / np.where(s > 0, s * s, 1.0), 0.0)
    D = grid.cell_difference_matrices
    H = None
    for k in range(grid.dim):
        for l in range(grid.dim):
            w = kappa * xi[k] * xi[l] + (diff if k == l else 0.0)
            term = D[k].T @ sp.diags(w.ravel()) @ D[l]
            H = term if H is None else H + term
    return sp.csr_matrix(H)


def conjugate_gradient(A, b, x0=None, rtol: float = 1e-12, max_iter: int | None = None):
    """Jacobi-preconditioned CG for SPD systems; returns (x, converged, iterations)."""
    n = b.shape[0]
    max_iter = max_iter or 10 * n
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else x0.copy()
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    bnorm = np.linalg.norm(b) or 1.0
    for k in range(max_iter):
        if np.linalg.norm(r) <= rtol * bnorm:
            return x, True, k
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, bool(np.linalg.norm(r) <= rtol * bnorm), max_iter


@dataclass
class ThetaStepInfo:
    iterations: int
    change: float
    objective_history: list = field(default_factory=list)


def _solve(A, rhs, x0, linear_solver):
    if linear_solver == "cg":
        x, ok, _ = conjugate_gradient(A, rhs, x0)
        if not ok:
            raise SolverError("conjugate gradient breakdown in theta step")
        return x
    if linear_solver != "direct":
        raise ValueError(f"unknown linear solver {linear_solver!r}")
    return spla.spsolve(A.tocsc(), rhs)


def theta_step(grid: Grid, v_i, theta_prev, h: float, spec: ModelSpec, norm,
               tol: float = 1e-11, max_iter: int = 200, linear_solver: str = "direct",
               method: str = "newton", return_info: bool = False):
    """Minimize K(theta) = (1/2h)(alpha0 (theta - theta_prev), theta - theta_prev) + Phi.

    ``method="picard"`` is plain lagged diffusivity: each iterate solves
    (alpha0/h + div-form diffusion with the diffusivity frozen at the previous
    iterate), an M-matrix system. It decreases K monotonically but converges
    only linearly, which stalls for small sigma. ``method="newton"`` (default)
    uses the exact Hessian with an Armijo backtracking search; the Picard
    operator is its isotropic part.
    """
    if norm is EXACT or not isinstance(norm, RegularizedNorm):
        raise NotImplementedError("theta step needs a regularized norm (sigma > 0)")
    if h <= 0:
        raise ValueError("h must be positive")
    if method not in ("newton", "picard"):
        raise ValueError(f"unknown theta-step method {method!r}")
    v_i = check_pair(grid, v_i)
    theta_prev = grid.check(theta_prev)
    a0 = spec.alpha0(v_i[0], v_i[1])
    a = spec.alpha(v_i[0], v_i[1])
    b = spec.beta(v_i[0], v_i[1])
    m = grid.cell_measure
    mass = sp.diags((a0 / h).ravel())

    def K(th):
        return theta_objective(grid, v_i, th, theta_prev, h, spec, norm)

    theta = theta_prev.copy()
    f = K(theta)
    history = [f]
    change = np.inf
    k = 0
    while change > tol:
        if k >= max_iter:
            raise SolverError(f"theta-step ({method}) did not converge in {max_iter} "
                              f"iterations (change {change:.3e} > {tol:.1e})", residual=change)
        s = energy.grad_magnitude(grid, theta)
        diffusivity = a * norm.ratio(s) + 2.0 * spec.nu ** 2 * b
        if method == "picard":
            A = (mass + diffusion_matrix(grid, diffusivity)).tocsr()
            rhs = ((a0 / h) * theta_prev).ravel()
            new = _solve(A, rhs, theta.ravel(), linear_solver).reshape(grid.shape)
            fn = K(new)
        else:
            grad = theta_gradient(grid, v_i, theta, theta_prev, h, spec, norm).ravel()
            H = (mass + theta_hessian(grid, a, b, theta, spec.nu, norm)).tocsr()
            d = -_solve(H, grad, None, linear_solver)
            slope = float(grad @ d) * m
            t = 1.0
            while True:
                new = theta + t * d.reshape(grid.shape)
                fn = K(new)
                # the rounding allowance lets the final, tiny Newton steps through
                if fn <= f + 1e-4 * t * slope + 8 * np.finfo(float).eps * abs(f) or t < 1e-10:
                    break
                t *= 0.5
        change = float(np.max(np.abs(new - theta)))
        theta, f = new, fn
        history.append(f)
        k += 1
    if return_info:
        return theta, ThetaStepInfo(k, change, history)
    return theta


# -- orchestration --------------------------------------------------------

@dataclass
class StepRecord:
    index: int
    time: float
    v: np.ndarray
    theta: np.ndarray
    u: np.ndarray
    energy: EnergyBreakdown
    v_increment_norm: float = 0.0
    theta_increment_norm: float = 0.0
    v_iterations: int = 0
    theta_iterations: int = 0
    v_residual: float = 0.0
    dissipation_slack: float = 0.0

    @property
    def solver_iterations(self) -> tuple[int, int]:
        return self.v_iterations, self.theta_iterations


@dataclass
class Trajectory:
    spec: ModelSpec
    grid: Grid
    h: float
    norm: object
    records: list = field(default_factory=list)

    @property
    def sources(self) -> list:
        return [r.u for r in self.records]

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records])

    @property
    def steps(self) -> int:
        return len(self.records) - 1

    def energies(self) -> np.ndarray:
        return np.array([r.energy.total for r in self.records])


def dissipation_terms(grid: Grid, spec: ModelSpec, h: float, prev: StepRecord, cur: StepRecord,
                      u_dagger) -> tuple[float, float]:
    """Both sides of the per-step dissipation inequality for a given u_dagger."""
    dv = cur.v - prev.v
    dth = cur.theta - prev.theta
    a0 = spec.alpha0(cur.v[0], cur.v[1])
    c = spec.c
    du = cur.u - u_dagger
    lhs = (float(np.sum(dv * dv)) * grid.cell_measure / (2 * h)
           + float(np.sum(a0 * dth * dth)) * grid.cell_measure / h
           + cur.energy.total + c * grid.inner(u_dagger, cur.v[0]))
    rhs = prev.energy.total + c * grid.inner(u_dagger, prev.v[0]) + c * c * h * grid.inner(du, du)
    return lhs, rhs


def initial_record(grid: Grid, spec: ModelSpec, initial: InitialData, norm) -> StepRecord:
    initial.check(grid)
    e = energy.free_energy(grid, initial.v0, initial.theta0, spec, norm)
    return StepRecord(0, 0.0, initial.v0.copy(), initial.theta0.copy(), grid.zeros(), e)


def step(grid: Grid, state: StepRecord, spec: ModelSpec, norm, h: float, tol: float = 1e-9,
         theta_tol: float | None = None, h1_dagger: float | None = None,
         linear_solver: str = "direct", v_method: str = "newton",
         theta_method: str = "newton") -> StepRecord:
    i = state.index + 1
    u_i = spec.sample_source(i, h, grid)
    v_new, vinfo = v_step(grid, state.v, state.theta, u_i, h, spec, norm, tol=tol,
                          h1_dagger=h1_dagger, method=v_method, return_info=True)
    theta_new, tinfo = theta_step(grid, v_new, state.theta, h, spec, norm,
                                  tol=theta_tol if theta_tol is not None else min(tol, 1e-11),
                                  linear_solver=linear_solver, method=theta_method,
                                  return_info=True)
    e = energy.free_energy(grid, v_new, theta_new, spec, norm, u=u_i)
    rec = StepRecord(i, i * h, v_new, theta_new, u_i, e,
                     v_increment_norm=float(np.sqrt(np.sum((v_new - state.v) ** 2) * grid.cell_measure)),
                     theta_increment_norm=grid.norm(theta_new - state.theta),
                     v_iterations=vinfo.iterations, theta_iterations=tinfo.iterations,
                     v_residual=vinfo.residual)
    lhs, rhs = dissipation_terms(grid, spec, h, state, rec, np.zeros(grid.shape))
    rec.dissipation_slack = lhs - rhs
    return rec


def run(spec: ModelSpec, grid: Grid, initial: InitialData, h: float, steps: int, norm,
        tol: float = 1e-9, theta_tol: float | None = None,
        callback: Callable[[StepRecord], None] | None = None,
        linear_solver: str = "direct", v_method: str = "newton",
        theta_method: str = "newton") -> Trajectory:
    h1 = step_bound(spec)
    if not 0 < h <= h1 * (1 + 1e-12):
        raise StepSizeError(f"time step h={h} outside (0, h1_dagger={h1:.6g}]")
    traj = Trajectory(spec, grid, h, norm)
    rec = initial_record(grid, spec, initial, norm)
    traj.records.append(rec)
    if callback:
        callback(rec)
    for _ in range(steps):
        try:
            rec = step(grid, rec, spec, norm, h, tol, theta_tol, h1, linear_solver,
                       v_method, theta_method)
        except SolverError as exc:
            exc.trajectory = traj
            raise
        traj.records.append(rec)
        if callback:
            callback(rec)
    return traj


def interpolate(traj: Trajectory, t: float, mode: str = "linear"):
    """Piecewise-constant (backward/forward) or piecewise-linear time interpolants.

    backward: value of step i on ((i-1)h, ih], the initial state at t = 0.
    forward:  value of step i-1 on [(i-1)h, ih), the last state at the final time.
    linear:   affine blend of steps i-1 and i on [(i-1)h, ih].
    """
    h, n = traj.h, traj.steps
    if not (-1e-12 <= t <= n * h * (1 + 1e-12) + 1e-12):
        raise ValueError(f"t={t} outside [0, {n * h}]")
    x = t / h
    recs = traj.records
    if mode == "backward":
        i = min(max(int(np.ceil(x - 1e-9)), 0), n)
        return recs[i].v.copy(), recs[i].theta.copy()
    if mode == "forward":
        i = min(max(int(np.floor(x + 1e-9)), 0), n)
        return recs[i].v.copy(), recs[i].theta.copy()
    if mode == "linear":
        i = min(max(int(np.ceil(x)), 1), n) if n > 0 else 0
        if n == 0:
            return recs[0].v.copy(), recs[0].theta.copy()
        lam = min(max(x - (i - 1), 0.0), 1.0)
        a, b = recs[i - 1], recs[i]
        return (1 - lam) * a.v + lam * b.v, (1 - lam) * a.theta + lam * b.theta
    raise ValueError(f"unknown interpolation mode {mode!r}")

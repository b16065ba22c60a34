"""Brute-force reference solvers for tests.

Nothing here is imported by the stepper or the CLI. The per-step
functionals are rebuilt from dense difference matrices and the norm's
profile derivative, so the oracle shares no solver code with ``stepper``.
Problems are limited to 64 cells.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid

MAX_CELLS = 64


class OracleDisagreement(RuntimeError):
    def __init__(self, msg, points):
        super().__init__(msg)
        self.points = points


@dataclass
class OracleResult:
    minimizer: np.ndarray
    objective: float
    certificate: float
    starts: list = field(default_factory=list)
    spread: float = 0.0


def fd_gradient(objective, point, epsilon: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar functional, one component at a time."""
    x = np.array(point, dtype=float)
    out = np.empty_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + epsilon
        fp = objective(x.copy())
        flat[i] = old - epsilon
        fm = objective(x.copy())
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"objective not finite within epsilon={epsilon} of component {i}")
        gflat[i] = (fp - fm) / (2.0 * epsilon)
    return out


def _dense_ops(grid: Grid):
    if grid.size > MAX_CELLS:
        raise ValueError(f"oracle limited to {MAX_CELLS} cells, grid has {grid.size}")
    # forward differences owned by the lower cell, dense
    mats = []
    idx = np.arange(grid.size).reshape(grid.shape)
    for k, h in enumerate(grid.spacing):
        D = np.zeros((grid.size, grid.size))
        lower = [slice(None)] * grid.dim
        upper = [slice(None)] * grid.dim
        lower[k] = slice(0, grid.shape[k] - 1)
        upper[k] = slice(1, None)
        lo, hi = idx[tuple(lower)].ravel(), idx[tuple(upper)].ravel()
        D[lo, lo] = -1.0 / h
        D[lo, hi] = 1.0 / h
        mats.append(D)
    return mats


def _max_pairwise(points) -> float:
    return max((float(np.max(np.abs(a - b))) for i, a in enumerate(points)
                for b in points[i + 1:]), default=0.0)


# -- theta ------------------------------------------------------------------

def _theta_problem(grid, v_i, theta_prev, h, spec, norm):
    D = _dense_ops(grid)
    w, eta = (np.asarray(f, dtype=float).ravel() for f in v_i)
    a0, a, b = spec.alpha0(w, eta), spec.alpha(w, eta), spec.beta(w, eta)
    tp = np.asarray(theta_prev, dtype=float).ravel()
    m, nu2 = grid.cell_measure, spec.nu ** 2

    def K(t):
        xi = np.array([Dk @ t for Dk in D])
        s = np.sqrt(np.sum(xi * xi, axis=0))
        return m * (np.sum(a0 * (t - tp) ** 2) / (2 * h) + np.sum(a * norm.profile(s) + nu2 * b * s * s))

    def grad(t):
        # derivative w.r.t. cell values divided by the cell measure
        xi = np.array([Dk @ t for Dk in D])
        s = np.sqrt(np.sum(xi * xi, axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(s > 0, norm.dprofile(s) / np.where(s > 0, s, 1.0), 0.0)
        coef = a * unit + 2.0 * nu2 * b
        return a0 * (t - tp) / h + sum(Dk.T @ (coef * xi[k]) for k, Dk in enumerate(D))

    return K, grad, tp


def _descent(K, grad, x, tol, max_iter, project=None):
    """Gradient descent, Barzilai-Borwein trial step, monotone Armijo backtracking.

    With ``project`` it is projected gradient along the projection arc; the
    stopping measure is the fixed-point residual |x - P(x - g)|.
    """
    P = project or (lambda z: z)
    f, g = K(x), grad(x)
    step = 1e-3
    for _ in range(max_iter):
        r = float(np.max(np.abs(x - P(x - g))))
        if r <= tol:
            return x, f, r
        t = step
        while True:
            xn = P(x - t * g)
            fn = K(xn)
            # rounding allowance: near the minimizer K changes below eps * |K|
            if fn <= f - 1e-4 * float(g @ (x - xn)) + 8 * np.finfo(float).eps * abs(f) or t < 1e-16:
                break
            t *= 0.5
        gn = grad(xn)
        s, y = xn - x, gn - g
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 1e-300 else 1e-3
        step = min(max(step, 1e-12), 1e6)
        if t < 1e-16:
            break
        x, f, g = xn, fn, gn
    return x, f, float(np.max(np.abs(x - P(x - g))))


def oracle_theta_step(grid: Grid, v_i, theta_prev, h, spec, norm, tol: float = 1e-10,
                      agree_tol: float = 1e-8, max_iter: int = 200_000) -> OracleResult:
    """Minimize the theta-step functional from five starts and check they agree."""
    if getattr(norm, "sigma", 0.0) <= 0:
        raise ValueError("oracle needs sigma > 0")
    K, grad, tp = _theta_problem(grid, v_i, theta_prev, h, spec, norm)
    starts = [tp.copy(), np.full_like(tp, tp.min()), np.full_like(tp, tp.max()),
              np.full_like(tp, tp.mean()), np.zeros_like(tp)]
    results = [_descent(K, grad, x0, tol, max_iter) for x0 in starts]
    points = [r[0] for r in results]
    spread = _max_pairwise(points)
    best = min(results, key=lambda r: r[1])
    if spread > agree_tol:
        raise OracleDisagreement(f"theta oracle starts disagree by {spread:.3e}", points)
    return OracleResult(best[0].reshape(grid.shape), float(best[1]),
                        max(r[2] for r in results), [p.reshape(grid.shape) for p in points], spread)


# -- v ----------------------------------------------------------------------

def _v_problem(grid, v_prev, theta_prev, u_i, h, spec, norm):
    D = _dense_ops(grid)
    n, m, c = grid.size, grid.cell_measure, spec.c
    L = sum(Dk.T @ Dk for Dk in D)   # -Laplacian (forward differences own every interior face)
    vp = np.asarray(v_prev, dtype=float).reshape(2, n)
    tp = np.asarray(theta_prev, dtype=float).ravel()
    u = np.broadcast_to(np.asarray(u_i, dtype=float), grid.shape).ravel()
    xi = np.array([Dk @ tp for Dk in D])
    s = np.sqrt(np.sum(xi * xi, axis=0))
    tv, quad = norm.profile(s), spec.nu ** 2 * s * s

    def J(x):
        w, eta = x[:n], x[n:]
        dv = x - vp.ravel()
        dens = (spec.gamma.smooth(w) + spec.g(w, eta) + c * u * w
                + spec.alpha(w, eta) * tv + spec.beta(w, eta) * quad)
        return m * (dv @ dv / (2 * h) + 0.5 * (w @ L @ w + eta @ L @ eta) + np.sum(dens))

    def grad(x):
        w, eta = x[:n], x[n:]
        gw, ge = spec.g.gradient(w, eta)
        aw, ae = spec.alpha.gradient(w, eta)
        bw, be = spec.beta.gradient(w, eta)
        out = (x - vp.ravel()) / h
        out[:n] += L @ w + spec.gamma.dsmooth(w) + gw + c * u + aw * tv + bw * quad
        out[n:] += L @ eta + ge + ae * tv + be * quad
        return out

    return J, grad, vp.ravel()


def oracle_v_step(grid: Grid, v_prev, theta_prev, u_i, h, spec, norm, seed: int = 0,
                  n_random: int = 16, tol: float = 1e-10, agree_tol: float = 1e-6,
                  max_iter: int = 200_000) -> OracleResult:
    """Projected gradient from v_prev and ``n_random`` seeded random starts in [0,1]^2."""
    J, grad, vp = _v_problem(grid, v_prev, theta_prev, u_i, h, spec, norm)
    rng = np.random.default_rng(seed)
    starts = [np.clip(vp, 0.0, 1.0)] + [rng.uniform(0.0, 1.0, vp.size) for _ in range(n_random)]
    clip = lambda z: np.clip(z, 0.0, 1.0)
    results = [_descent(J, grad, x0, tol, max_iter, clip) for x0 in starts]
    points = [r[0] for r in results]
    spread = _max_pairwise(points)
    best = min(results, key=lambda r: r[1])
    if spread > agree_tol:
        raise OracleDisagreement(f"v oracle starts disagree by {spread:.3e}", points)
    shape = (2,) + grid.shape
    return OracleResult(best[0].reshape(shape), float(best[1]), max(r[2] for r in results),
                        [p.reshape(shape) for p in points], spread)

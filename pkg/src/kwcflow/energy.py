"""Discrete free energies, weighted total variations and their gradients.

A pair ``v = [w, eta]`` is an array of shape ``(2, *grid.shape)``. The
gradient magnitude of theta at a cell is the Euclidean norm of its
forward differences (``Grid.cell_gradient``), so every interior face
enters the energy exactly once and the gradients below are the exact
L2-gradients of the discrete energies.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .grid import Grid
from .model import ModelSpec
from .regnorm import EXACT, RegularizedNorm


def check_pair(grid: Grid, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (2,) + grid.shape:
        raise ValueError(f"pair of shape {v.shape} does not live on grid {grid.shape}")
    return v


def in_box(v, tol: float = 0.0) -> bool:
    return bool(np.all(v >= -tol) and np.all(v <= 1.0 + tol))


@dataclass
class EnergyBreakdown:
    dirichlet_v: float
    potential_gamma: float
    interaction_g: float
    weighted_tv: float
    theta_dirichlet: float
    total: float
    coupling: float | None = None
    admissible: bool = True

    def as_dict(self) -> dict:
        return asdict(self)


def grad_magnitude(grid: Grid, theta) -> np.ndarray:
    xi = grid.cell_gradient(theta)
    return np.sqrt(np.sum(xi * xi, axis=0))


def weighted_tv(grid: Grid, rho, theta, norm=EXACT) -> float:
    """Sum over cells of rho * |grad theta|_sigma * cell measure, for rho >= 0."""
    rho = grid.check(rho)
    if np.any(rho < 0):
        raise ValueError("weight must be nonnegative; use signed_weighted_tv")
    return float(np.sum(rho * norm.profile(grad_magnitude(grid, theta))) * grid.cell_measure)


def signed_weighted_tv(grid: Grid, rho, theta, norm=EXACT) -> float:
    rho = grid.check(rho)
    return (weighted_tv(grid, np.maximum(rho, 0.0), theta, norm)
            - weighted_tv(grid, np.maximum(-rho, 0.0), theta, norm))


def total_variation(grid: Grid, theta) -> float:
    return weighted_tv(grid, np.ones(grid.shape), theta, EXACT)


def phi(grid: Grid, v, theta, spec: ModelSpec, norm=EXACT, nu: float | None = None) -> float:
    """Relaxed weighted TV of theta plus the nu^2-weighted Dirichlet term."""
    v = check_pair(grid, v)
    nu = spec.nu if nu is None else nu
    s = grad_magnitude(grid, theta)
    a = spec.alpha(v[0], v[1])
    b = spec.beta(v[0], v[1])
    return float(np.sum(a * norm.profile(s) + nu * nu * b * s * s) * grid.cell_measure)


def free_energy(grid: Grid, v, theta, spec: ModelSpec, norm=EXACT,
                u=None) -> EnergyBreakdown:
    v = check_pair(grid, v)
    theta = grid.check(theta)
    w, eta = v
    m = grid.cell_measure
    dirichlet = 0.5 * (grid.face_inner(grid.face_gradient(w), grid.face_gradient(w))
                       + grid.face_inner(grid.face_gradient(eta), grid.face_gradient(eta)))
    admissible = in_box(v)
    pot = float(np.sum(spec.gamma.smooth(w)) * m) if admissible else np.inf
    inter = float(np.sum(spec.g(w, eta)) * m)
    s = grad_magnitude(grid, theta)
    a = spec.alpha(w, eta)
    b = spec.beta(w, eta)
    tv = float(np.sum(a * norm.profile(s)) * m)
    quad = float(spec.nu ** 2 * np.sum(b * s * s) * m)
    total = dirichlet + pot + inter + tv + quad
    coupling = None if u is None else spec.c * grid.inner(u, w)
    return EnergyBreakdown(dirichlet, pot, inter, tv, quad, total, coupling, admissible)


def gibbs_energy(grid: Grid, u, v, theta, spec: ModelSpec, norm=EXACT) -> float:
    v = check_pair(grid, v)
    return free_energy(grid, v, theta, spec, norm).total + spec.c * grid.inner(u, v[0])


def theta_flux(grid: Grid, v, theta, spec: ModelSpec, norm: RegularizedNorm):
    """Cell-placed flux alpha(v) grad|.|_sigma(xi) + 2 nu^2 beta(v) xi."""
    xi = grid.cell_gradient(theta)
    s = np.sqrt(np.sum(xi * xi, axis=0))
    a = spec.alpha(v[0], v[1])
    b = spec.beta(v[0], v[1])
    return (a * norm.ratio(s) + 2.0 * spec.nu ** 2 * b) * xi


def energy_gradient(grid: Grid, v, theta, spec: ModelSpec, norm: RegularizedNorm):
    """L2-gradients of F_{nu,sigma} in v and in theta (indicator of gamma excluded).

    Returns ``(grad_v, grad_theta)`` with shapes ``(2, *shape)`` and ``shape``.
    Multiply by the cell measure to get partial derivatives w.r.t. cell values.
    """
    if norm is EXACT or getattr(norm, "sigma", 0.0) == 0.0:
        raise NotImplementedError("energy gradient needs a regularized norm (sigma > 0)")
    v = check_pair(grid, v)
    theta = grid.check(theta)
    w, eta = v
    s = grad_magnitude(grid, theta)
    tv_density = norm.profile(s)
    quad_density = spec.nu ** 2 * s * s
    gw, ge = spec.g.gradient(w, eta)
    aw, ae = spec.alpha.gradient(w, eta)
    bw, be = spec.beta.gradient(w, eta)
    grad_v = np.empty_like(v)
    grad_v[0] = -grid.neumann_laplacian(w) + spec.gamma.dsmooth(w) + gw + aw * tv_density + bw * quad_density
    grad_v[1] = -grid.neumann_laplacian(eta) + ge + ae * tv_density + be * quad_density
    flux = grid.cell_to_flux(theta_flux(grid, v, theta, spec, norm))
    grad_theta = -grid.face_divergence(flux)
    return grad_v, grad_theta


def lyapunov(traj, u_dagger) -> np.ndarray:
    """J_i = F(v_i, theta_i) + c (u_dagger, w_i) - c^2 sum_{k<=i} h |u_k - u_dagger|^2.

    Uses the ``+c`` sign of the per-step dissipation inequality.
    """
    grid, spec, h = traj.grid, traj.spec, traj.h
    if traj.sources is None:
        raise ValueError("trajectory carries no source history")
    u_dagger = np.broadcast_to(np.asarray(u_dagger, dtype=float), grid.shape)
    c = spec.c
    out = np.empty(len(traj.records))
    acc = 0.0
    for i, rec in enumerate(traj.records):
        if i > 0:
            du = rec.u - u_dagger
            acc += h * grid.inner(du, du)
        out[i] = rec.energy.total + c * grid.inner(u_dagger, rec.v[0]) - c * c * acc
    return out

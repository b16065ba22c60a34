"""Smooth convex approximations of the Euclidean norm.

Every family here is radial: ``|xi|_sigma = phi(|xi|)`` with a convex,
nondecreasing profile ``phi`` on [0, inf) with ``phi(0) = phi'(0) = 0``. The
gradient is ``ratio(|xi|) * xi`` where ``ratio(s) = phi'(s) / s``; this ratio
is exactly the face diffusivity used by the lagged-diffusivity solver.

Vectors ``xi`` are arrays whose *first* axis indexes components, matching
``Grid.cell_gradient``; a plain sequence like ``(3, 4)`` also works.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("hyperbola", "yosida", "tanh", "arctan", "p_growth")


@dataclass(frozen=True)
class BoundWitness:
    q0: float
    q1: float
    r0: float
    r1: float


def _magnitude(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return np.sqrt(np.sum(xi * xi, axis=0))


def _log_cosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


@dataclass(frozen=True)
class RegularizedNorm:
    family: str
    sigma: float
    p: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if not (0.0 < self.sigma < 1.0):
            raise ValueError(f"sigma must lie in (0, 1), got {self.sigma}")
        if self.family == "p_growth":
            p = 1.0 + self.sigma if self.p is None else float(self.p)
            if not p > 1.0:
                raise ValueError(f"p_growth needs p > 1, got {p}")
            object.__setattr__(self, "p", p)

    # -- radial profile ---------------------------------------------------

    def profile(self, s):
        s = np.asarray(s, dtype=float)
        sig = self.sigma
        if self.family == "hyperbola":
            # sqrt(s^2 + sig^2) - sig without cancellation
            return s * s / (np.sqrt(s * s + sig * sig) + sig)
        if self.family == "yosida":
            return np.where(s <= sig, 0.5 * s * s / sig, s - 0.5 * sig)
        if self.family == "tanh":
            return sig * _log_cosh(s / sig)
        if self.family == "arctan":
            x = s / sig
            return (2.0 / np.pi) * (s * np.arctan(x) - 0.5 * sig * np.log1p(x * x))
        return s ** self.p / self.p

    def dprofile(self, s):
        s = np.asarray(s, dtype=float)
        sig = self.sigma
        if self.family == "hyperbola":
            return s / np.sqrt(s * s + sig * sig)
        if self.family == "yosida":
            return np.minimum(s / sig, 1.0)
        if self.family == "tanh":
            return np.tanh(s / sig)
        if self.family == "arctan":
            return (2.0 / np.pi) * np.arctan(s / sig)
        return s ** (self.p - 1.0)

    def d2profile(self, s, floor: float = 1e-12):
        """phi''(s); for p_growth with p < 2 the origin is clipped at ``floor``."""
        s = np.asarray(s, dtype=float)
        sig = self.sigma
        if self.family == "hyperbola":
            return sig * sig / (s * s + sig * sig) ** 1.5
        if self.family == "yosida":
            return np.where(s < sig, 1.0 / sig, 0.0)
        if self.family == "tanh":
            return 1.0 / (sig * np.cosh(np.minimum(s / sig, 350.0)) ** 2)
        if self.family == "arctan":
            return (2.0 / np.pi) * sig / (s * s + sig * sig)
        return (self.p - 1.0) * np.maximum(s, floor) ** (self.p - 2.0)

    def ratio(self, s, floor: float = 1e-12):
        """phi'(s)/s with its removable singularity at s = 0 filled in.

        Bounded for every family except p_growth, where s**(p-2) blows up at
        the origin; there ``s`` is clipped at ``floor``.
        """
        s = np.asarray(s, dtype=float)
        sig = self.sigma
        if self.family == "hyperbola":
            return 1.0 / np.sqrt(s * s + sig * sig)
        if self.family == "yosida":
            return 1.0 / np.maximum(s, sig)
        if self.family == "tanh":
            x = s / sig
            small = x < 1e-4
            xs = np.where(small, 1.0, x)
            return np.where(small, (1.0 - x * x / 3.0) / sig, np.tanh(xs) / np.where(small, 1.0, s))
        if self.family == "arctan":
            x = s / sig
            small = x < 1e-4
            xs = np.where(small, 1.0, x)
            return (2.0 / np.pi) * np.where(
                small, (1.0 - x * x / 3.0) / sig, np.arctan(xs) / np.where(small, 1.0, s))
        return np.maximum(s, floor) ** (self.p - 2.0)

    # -- vector interface -------------------------------------------------

    def value(self, xi):
        return self.profile(_magnitude(xi))

    def gradient(self, xi):
        xi = np.asarray(xi, dtype=float)
        r = self.ratio(_magnitude(xi))
        if self.family == "p_growth":
            # removable: |xi|^(p-2) xi -> 0 as xi -> 0
            r = np.where(_magnitude(xi) == 0.0, 0.0, r)
        return r * xi

    def witnesses(self) -> BoundWitness:
        sig = self.sigma
        if self.family == "hyperbola":
            return BoundWitness(1.0, 1.0, sig, 0.0)
        if self.family == "yosida":
            return BoundWitness(1.0, 1.0, 0.5 * sig, 0.0)
        if self.family == "tanh":
            return BoundWitness(1.0, 1.0, sig * np.log(2.0), 0.0)
        if self.family == "arctan":
            # q0 < 1 is forced: phi(s) - s ~ -(2 sig/pi) log(s) is unbounded below.
            # r0 is the exact sup of q0*s - phi(s), attained at s = sig*tan(pi q0/2).
            q0 = 1.0 - np.sqrt(sig)
            r0 = -(2.0 * sig / np.pi) * np.log(np.sin(0.5 * np.pi * np.sqrt(sig)))
            return BoundWitness(q0, 1.0, float(r0), 0.0)
        return BoundWitness(1.0, 1.0, (self.p - 1.0) / self.p, self.p - 1.0)


class ExactNorm:
    """The Euclidean norm itself (sigma = 0); evaluation only, no gradient."""

    family = "exact"
    sigma = 0.0

    def profile(self, s):
        return np.asarray(s, dtype=float)

    def value(self, xi):
        return _magnitude(xi)

    def gradient(self, xi):
        raise NotImplementedError("the exact norm is not differentiable at 0; use sigma > 0")

    def ratio(self, s, floor: float = 1e-12):
        raise NotImplementedError("the exact norm has no lagged diffusivity; use sigma > 0")

    def witnesses(self) -> BoundWitness:
        return BoundWitness(1.0, 1.0, 0.0, 0.0)

    def __repr__(self):
        return "ExactNorm()"


EXACT = ExactNorm()


def make_norm(family: str, sigma: float, p: float | None = None):
    if family == "exact" or sigma == 0.0:
        return EXACT
    return RegularizedNorm(family, sigma, p)


# -- axiom verification ---------------------------------------------------

@dataclass
class AxiomReport:
    family: str
    sigma: float
    witnesses: BoundWitness
    value_at_zero: float
    convexity: float
    lower_bound: float
    gradient_bound: float
    chain_lower: float
    chain_upper: float
    counterexample: dict | None
    tol: float = 1e-10

    @property
    def worst(self) -> float:
        return max(abs(self.value_at_zero), self.convexity, self.lower_bound,
                   self.gradient_bound, self.chain_lower, self.chain_upper)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def summary(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (f"{state} {self.family} sigma={self.sigma:g} worst={self.worst:.3e} "
                f"(convex {self.convexity:.1e}, lower {self.lower_bound:.1e}, "
                f"grad {self.gradient_bound:.1e}, chain {max(self.chain_lower, self.chain_upper):.1e})")


def sample_vectors(rng: np.random.Generator, count: int, dim: int = 2) -> np.ndarray:
    """Random vectors with log-uniform magnitudes in [1e-6, 1e2], plus the origin."""
    direction = rng.normal(size=(dim, count))
    direction /= np.linalg.norm(direction, axis=0)
    mag = 10.0 ** rng.uniform(-6.0, 2.0, size=count)
    xi = direction * mag
    xi[:, 0] = 0.0
    return xi


def verify_axioms(norm: RegularizedNorm, sample_count: int = 10_000,
                  witnesses: BoundWitness | None = None, seed: int = 0,
                  dim: int = 2, tol: float = 1e-10) -> AxiomReport:
    """Sample-based check of convexity, vanishing at 0, the two growth
    bounds, and value(xi) <= grad(xi).xi <= q1 |xi|^(1+r1).

    Violations are reported, never raised. Relative slack scales with the
    magnitude of the compared quantities so that rounding at |xi| ~ 1e2 is
    not mistaken for a violation.
    """
    if sample_count < 100:
        raise ValueError("sample_count must be at least 100")
    wit = witnesses or norm.witnesses()
    rng = np.random.default_rng(seed)
    xi = sample_vectors(rng, sample_count, dim)
    zeta = sample_vectors(rng, sample_count, dim)
    s = _magnitude(xi)
    val = norm.value(xi)
    grad = norm.gradient(xi)
    gdot = np.sum(grad * xi, axis=0)
    gmag = _magnitude(grad)
    eps = np.finfo(float).eps * 64

    def worst(viol, scale):
        v = viol - eps * (1.0 + scale)
        return float(max(np.max(v), 0.0)), int(np.argmax(v))

    mid = norm.value(0.5 * (xi + zeta))
    avg = 0.5 * (val + norm.value(zeta))
    convex, i_cvx = worst(mid - avg, np.abs(avg))
    lower, i_low = worst(wit.q0 * s - wit.r0 - val, s)
    with np.errstate(divide="ignore"):
        bound = wit.q1 * np.where(s > 0, s ** wit.r1, 1.0 if wit.r1 == 0 else 0.0)
    gbound, i_g = worst(gmag - bound, bound)
    chain_lo, i_cl = worst(val - gdot, np.abs(gdot))
    chain_up, i_cu = worst(gdot - wit.q1 * s ** (1.0 + wit.r1), np.abs(gdot))

    checks = {"convexity": (convex, i_cvx), "lower_bound": (lower, i_low),
              "gradient_bound": (gbound, i_g), "chain_lower": (chain_lo, i_cl),
              "chain_upper": (chain_up, i_cu)}
    name, (amount, idx) = max(checks.items(), key=lambda kv: kv[1][0])
    counter = None
    if amount > tol:
        counter = {"check": name, "xi": xi[:, idx].tolist(), "violation": amount}
    return AxiomReport(norm.family, norm.sigma, wit, float(norm.value(np.zeros(dim))),
                       convex, lower, gbound, chain_lo, chain_up, counter, tol)

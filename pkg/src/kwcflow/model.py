"""Model functions, assumption checks and the derived step/energy constants.

All coefficient functions are built-ins with analytic first and second
derivatives. A ``Func2`` is a function of ``(w, eta)`` evaluated
elementwise on arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid


@dataclass(frozen=True)
class Func2:
    name: str
    f: Callable
    grad: Callable      # -> (f_w, f_eta)
    hess: Callable      # -> (f_ww, f_weta, f_etaeta)
    params: dict = field(default_factory=dict)

    def __call__(self, w, eta):
        return np.broadcast_to(self.f(w, eta), np.broadcast(w, eta).shape).astype(float)

    def gradient(self, w, eta):
        shape = np.broadcast(w, eta).shape
        return tuple(np.broadcast_to(g, shape).astype(float) for g in self.grad(w, eta))

    def hessian(self, w, eta):
        shape = np.broadcast(w, eta).shape
        return tuple(np.broadcast_to(h, shape).astype(float) for h in self.hess(w, eta))


def constant(value: float = 1.0) -> Func2:
    k = float(value)
    return Func2("constant", lambda w, e: k + 0 * w, lambda w, e: (0 * w, 0 * w),
                 lambda w, e: (0 * w, 0 * w, 0 * w), {"value": k})


def offset_eta_squared(offset: float = 0.1, scale: float = 1.0) -> Func2:
    """offset + scale * eta^2."""
    a, b = float(offset), float(scale)
    return Func2("offset_eta_squared",
                 lambda w, e: a + b * e * e,
                 lambda w, e: (0 * w, 2 * b * e + 0 * w),
                 lambda w, e: (0 * w, 0 * w, 2 * b + 0 * w),
                 {"offset": a, "scale": b})


def offset_w_squared(offset: float = 0.1, scale: float = 1.0) -> Func2:
    """offset + scale * w^2 (a beta depending on w only)."""
    a, b = float(offset), float(scale)
    return Func2("offset_w_squared",
                 lambda w, e: a + b * w * w + 0 * e,
                 lambda w, e: (2 * b * w + 0 * e, 0 * e),
                 lambda w, e: (2 * b + 0 * w, 0 * w, 0 * w),
                 {"offset": a, "scale": b})


def cubic_eta(offset: float = 0.0) -> Func2:
    """eta^3 - eta + offset: convex only for eta >= 0."""
    a = float(offset)
    return Func2("cubic_eta",
                 lambda w, e: e ** 3 - e + a + 0 * w,
                 lambda w, e: (0 * w, 3 * e * e - 1 + 0 * w),
                 lambda w, e: (0 * w, 0 * w, 6 * e + 0 * w),
                 {"offset": a})


def quadratic_difference(scale: float = 1.0) -> Func2:
    """(scale / 2) (w - eta)^2."""
    k = float(scale)
    return Func2("quadratic_difference",
                 lambda w, e: 0.5 * k * (w - e) ** 2,
                 lambda w, e: (k * (w - e), -k * (w - e)),
                 lambda w, e: (k + 0 * w, -k + 0 * w, k + 0 * w),
                 {"scale": k})


def relaxed_difference(c: float = 1.0) -> Func2:
    """(1/2)(w - eta)^2 - (c/2) w^2; negative somewhere on [0,1]^2 when c > 0."""
    c = float(c)
    return Func2("relaxed_difference",
                 lambda w, e: 0.5 * (w - e) ** 2 - 0.5 * c * w * w,
                 lambda w, e: ((w - e) - c * w, -(w - e)),
                 lambda w, e: (1.0 - c + 0 * w, -1.0 + 0 * w, 1.0 + 0 * w),
                 {"c": c})


def zero() -> Func2:
    f = constant(0.0)
    return Func2("zero", f.f, f.grad, f.hess, {})


FUNCTIONS = {
    "constant": constant,
    "offset_eta_squared": offset_eta_squared,
    "offset_w_squared": offset_w_squared,
    "cubic_eta": cubic_eta,
    "quadratic_difference": quadratic_difference,
    "relaxed_difference": relaxed_difference,
    "zero": zero,
}
RELAXED_ONLY = {"relaxed_difference"}


def build_function(name: str, **params) -> Func2:
    try:
        factory = FUNCTIONS[name]
    except KeyError:
        raise ValueError(f"unknown model function {name!r}; known: {sorted(FUNCTIONS)}") from None
    return factory(**params)


@dataclass(frozen=True)
class Potential:
    """gamma = smooth part + indicator of [0, 1]; smooth part is (k/2) w^2."""
    quadratic: float = 0.0

    def smooth(self, w):
        return 0.5 * self.quadratic * np.asarray(w, dtype=float) ** 2

    def dsmooth(self, w):
        return self.quadratic * np.asarray(w, dtype=float)

    def d2smooth(self, w):
        return self.quadratic + 0 * np.asarray(w, dtype=float)

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        return np.where((w >= 0.0) & (w <= 1.0), self.smooth(w), np.inf)

    def sup(self) -> float:
        return 0.5 * abs(self.quadratic)


# -- temperature source ---------------------------------------------------

@dataclass(frozen=True)
class Source:
    """Piecewise-constant-in-time source.

    ``table`` holds ``(t_start, value)`` pairs sorted by start time; each
    value (scalar or field) holds until the next start, the last one until
    ``t_end``. Outside ``[table[0][0], t_end)`` the source is zero.
    """
    table: tuple = ((0.0, 0.0),)
    t_end: float = np.inf
    u_infinity: object = None

    def __post_init__(self):
        table = tuple((float(t), v) for t, v in self.table)
        if not table:
            raise ValueError("source table is empty")
        starts = [t for t, _ in table]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("source table start times must be strictly increasing")
        if self.t_end <= starts[-1]:
            raise ValueError("source t_end must come after the last table entry")
        object.__setattr__(self, "table", table)

    @classmethod
    def constant(cls, value=0.0, u_infinity=None) -> "Source":
        return cls(((0.0, value),), np.inf, value if u_infinity is None else u_infinity)

    def segments(self):
        ends = [t for t, _ in self.table[1:]] + [self.t_end]
        for (t0, v), t1 in zip(self.table, ends):
            yield t0, t1, v

    def average(self, a: float, b: float, grid: Grid) -> np.ndarray:
        """Exact time average of the zero-extended source over [a, b]."""
        acc = grid.zeros()
        for t0, t1, v in self.segments():
            overlap = min(b, t1) - max(a, t0)
            if overlap > 0:
                acc = acc + overlap * np.broadcast_to(np.asarray(v, dtype=float), grid.shape)
        return acc / (b - a)

    def at(self, t: float, grid: Grid) -> np.ndarray:
        for t0, t1, v in self.segments():
            if t0 <= t < t1:
                return np.broadcast_to(np.asarray(v, dtype=float), grid.shape).copy()
        return grid.zeros()

    def limit(self, grid: Grid) -> np.ndarray:
        if self.u_infinity is None:
            raise ValueError("source has no u_infinity")
        return np.broadcast_to(np.asarray(self.u_infinity, dtype=float), grid.shape).copy()

    def settles(self) -> bool:
        """Whether u - u_infinity vanishes after finite time (the settling assumption)."""
        if self.u_infinity is None:
            return False
        target = np.asarray(self.u_infinity, dtype=float)
        if np.isfinite(self.t_end):
            return bool(np.all(target == 0.0))
        return bool(np.all(np.asarray(self.table[-1][1], dtype=float) == target))


# -- model ----------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    c: float = 1.0
    nu: float = 0.0
    delta_star: float = 0.1
    gamma: Potential = field(default_factory=Potential)
    g: Func2 = field(default_factory=quadratic_difference)
    alpha0: Func2 = field(default_factory=constant)
    alpha: Func2 = field(default_factory=offset_eta_squared)
    beta: Func2 = field(default_factory=constant)
    source: Source = field(default_factory=lambda: Source.constant(0.0))
    relaxed: bool = False

    def with_(self, **changes) -> "ModelSpec":
        from dataclasses import replace
        return replace(self, **changes)

    def sample_source(self, i: int, h: float, grid: Grid) -> np.ndarray:
        if h <= 0:
            raise ValueError("h must be positive")
        if i < 1:
            raise ValueError("step index starts at 1")
        return self.source.average((i - 1) * h, i * h, grid)


def default_model(**changes) -> ModelSpec:
    return ModelSpec(**changes)


# -- sampled norms --------------------------------------------------------

def _sample(n: int, lo: float = 0.0, hi: float = 1.0):
    s = np.linspace(lo, hi, n)
    return np.meshgrid(s, s, indexing="ij")


def sup_norms(f: Func2, n: int = 64) -> dict:
    """Sampled sup norms of f and its derivatives on [0,1]^2 (approximations from below)."""
    w, e = _sample(n)
    c0 = float(np.max(np.abs(f(w, e))))
    c1 = max(float(np.max(np.abs(d))) for d in f.gradient(w, e))
    c2 = max(float(np.max(np.abs(d))) for d in f.hessian(w, e))
    return {"C0": c0, "C1": max(c0, c1), "C2": max(c0, c1, c2)}


def g_c2_norm(spec: ModelSpec, n: int = 64) -> float:
    return sup_norms(spec.g, n)["C2"]


# -- validation -----------------------------------------------------------

@dataclass
class ValidationReport:
    margins: dict
    tol: float = 1e-12

    @property
    def failures(self) -> list[str]:
        return [k for k, m in self.margins.items() if m < -self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        lines = []
        for k, m in self.margins.items():
            lines.append(f"{'ok  ' if m >= -self.tol else 'FAIL'} {k}: worst margin {m:+.3e}")
        return "\n".join(lines)


_CONVEXITY_STEP = 1e-3
_DIRECTIONS = ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, -1.0))


def _convexity_margin(f: Func2, n: int) -> float:
    # convexity is required on all of R^2; [-1, 2]^2 stands in for it
    w, e = _sample(n, -1.0, 2.0)
    fww, fwe, fee = f.hessian(w, e)
    tr = fww + fee
    det_gap = np.sqrt(np.maximum((fww - fee) ** 2 + 4 * fwe ** 2, 0.0))
    min_eig = 0.5 * (tr - det_gap)
    margin = float(np.min(min_eig))
    d = _CONVEXITY_STEP
    for a, b in _DIRECTIONS:
        mid = 2 * f(w, e) - f(w + d * a, e + d * b) - f(w - d * a, e - d * b)
        # second differences carry ~eps/d^2 of rounding noise
        margin = min(margin, float(np.min(-mid)) / d ** 2 + 1e-6)
    return margin


def validate(spec: ModelSpec, samples_per_axis: int = 64) -> ValidationReport:
    """Check the model assumptions on a tensor sample grid; report worst margins (>= 0 is ok)."""
    if samples_per_axis < 16:
        raise ValueError("samples_per_axis must be at least 16")
    n = samples_per_axis
    w, e = _sample(n)
    ws = np.linspace(0.0, 1.0, n)
    zeros, ones = np.zeros(n), np.ones(n)
    m = {}
    ds = spec.delta_star
    m["A2 delta_star in (0,1)"] = min(ds, 1.0 - ds)
    for name in ("alpha0", "alpha", "beta"):
        m[f"A2 inf {name} >= delta_star"] = float(np.min(getattr(spec, name)(w, e))) - ds
    for name in ("alpha", "beta"):
        f = getattr(spec, name)
        m[f"A2 {name} convex"] = _convexity_margin(f, n)
        m[f"A2 {name}_eta(w,0) <= 0"] = -float(np.max(f.gradient(ws, zeros)[1]))
        m[f"A2 {name}_eta(w,1) >= 0"] = float(np.min(f.gradient(ws, ones)[1]))
    m["A3 gamma smooth part >= 0"] = float(np.min(spec.gamma.smooth(ws)))
    m["A3 gamma convex"] = float(np.min(spec.gamma.d2smooth(ws)))
    if not (spec.relaxed and spec.g.name in RELAXED_ONLY):
        m["A4 g >= 0"] = float(np.min(spec.g(w, e)))
    m["A4 g_eta(w,0) <= 0"] = -float(np.max(spec.g.gradient(ws, zeros)[1]))
    m["A4 g_eta(w,1) >= 0"] = float(np.min(spec.g.gradient(ws, ones)[1]))
    if spec.g.name in RELAXED_ONLY and not spec.relaxed:
        m["relaxed-assumptions flag required for g"] = -1.0
    m["nu >= 0"] = spec.nu
    return ValidationReport(m)


class InvalidModel(ValueError):
    pass


def require_valid(spec: ModelSpec, samples_per_axis: int = 64) -> None:
    report = validate(spec, samples_per_axis)
    if not report.passed:
        raise InvalidModel("model violates assumptions: " + ", ".join(report.failures))


# -- derived constants ----------------------------------------------------

def step_bound(spec: ModelSpec, samples: int = 64) -> float:
    """Largest step with a unique, dissipative implicit step: 1/(2 max(1, |g|_C2))."""
    return 1.0 / (2.0 * max(1.0, g_c2_norm(spec, samples)))


@dataclass(frozen=True)
class DerivedConstants:
    h1_dagger: float
    R_star: float
    A_star: float
    B_star: float
    C_star: float
    nu_star: float
    inputs: dict

    def regime_ok(self, nu: float, sigma: float) -> bool:
        return nu < self.nu_star and sigma < self.nu_star

    def report(self) -> str:
        i = self.inputs
        lines = [
            f"h1_dagger = 1/(2*max(1, |g|_C2)) = 1/(2*max(1, {i['g_C2']:.6g})) = {self.h1_dagger:.6g}",
            "R_star = [(1+|alpha0|_W1inf)(1+|alpha|_C1)(1+|beta|_C)(1+|gamma|_Linf)"
            "(1+|g|_W2inf)(1+|theta0|_Linf)(1+|Omega|)]^2 / delta^4",
            f"       = [(1+{i['alpha0_W1']:.6g})(1+{i['alpha_C1']:.6g})(1+{i['beta_C0']:.6g})"
            f"(1+{i['gamma_sup']:.6g})(1+{i['g_C2']:.6g})(1+{i['theta0_sup']:.6g})"
            f"(1+{i['measure']:.6g})]^2 / {i['delta_star']:.6g}^4 = {self.R_star:.6e}",
            f"A_star = 2 |alpha0|_C max(|alpha|_C, |beta|_C) / delta = 2*{i['alpha0_C0']:.6g}"
            f"*max({i['alpha_C0']:.6g}, {i['beta_C0']:.6g})/{i['delta_star']:.6g} = {self.A_star:.6g}",
            f"B_star = min(1/2, delta/|alpha|_C, delta/|beta|_C) = {self.B_star:.6g}",
            f"C_star = 4e4 R_star^5 = {self.C_star:.6e}",
            f"nu_star = 0.99 * min(1/(128 |alpha0|_C A_star R_star), 1/2)^(1/2) = {self.nu_star:.6e}",
            f"check A_star <= 2 delta sqrt(R_star): {self.A_star:.6g} <= "
            f"{2 * i['delta_star'] * np.sqrt(self.R_star):.6g} -> "
            f"{'ok' if self.A_star <= 2 * i['delta_star'] * np.sqrt(self.R_star) else 'VIOLATED'}",
        ]
        return "\n".join(lines)


def derived_constants(spec: ModelSpec, theta0_sup: float, domain_measure: float,
                      samples: int = 64) -> DerivedConstants:
    require_valid(spec, max(16, samples // 2))
    a0 = sup_norms(spec.alpha0, samples)
    a = sup_norms(spec.alpha, samples)
    b = sup_norms(spec.beta, samples)
    gn = sup_norms(spec.g, samples)
    ds = spec.delta_star
    inputs = {
        "alpha0_C0": a0["C0"], "alpha0_W1": a0["C1"], "alpha_C0": a["C0"], "alpha_C1": a["C1"],
        "beta_C0": b["C0"], "gamma_sup": spec.gamma.sup(), "g_C2": gn["C2"],
        "theta0_sup": float(theta0_sup), "measure": float(domain_measure), "delta_star": ds,
    }
    prod = ((1 + a0["C1"]) * (1 + a["C1"]) * (1 + b["C0"]) * (1 + spec.gamma.sup())
            * (1 + gn["C2"]) * (1 + theta0_sup) * (1 + domain_measure))
    R = prod ** 2 / ds ** 4
    A = 2.0 * a0["C0"] * max(a["C0"], b["C0"]) / ds
    B = min(0.5, ds / a["C0"], ds / b["C0"])
    C = 4e4 * R ** 5
    nu_star = 0.99 * np.sqrt(min(1.0 / (128.0 * a0["C0"] * A * R), 0.5))
    return DerivedConstants(1.0 / (2.0 * max(1.0, gn["C2"])), R, A, B, C, float(nu_star), inputs)

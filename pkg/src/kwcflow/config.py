"""Run configuration: a line-based ``section.key = value`` format.

Blank lines and ``#`` comments are ignored. Model functions are chosen by
name and parameterized with a further dotted key, e.g.::

    model.alpha = offset_eta_squared
    model.alpha.offset = 0.1
    time.h = auto          # 0.9 * h1_dagger

Unknown keys, duplicate keys and malformed lines are errors that cite the
line number. Validation errors name the violated model assumption.
"""
from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fileio
from .grid import Grid
from .model import (FUNCTIONS, DerivedConstants, ModelSpec, Potential, Source, build_function,
                    derived_constants, step_bound, validate)
from .regnorm import FAMILIES, make_norm
from .stepper import InitialData

AUTO_H_FACTOR = 0.9
PRESETS = ("ramp", "step", "random", "two-grain")


class ConfigError(ValueError):
    pass


@dataclass
class GridBlock:
    shape: tuple = (32,)
    spacing: tuple | None = None   # None: unit box

    def build(self) -> Grid:
        if self.spacing is None:
            return Grid.unit(self.shape)
        return Grid(self.shape, self.spacing)


@dataclass
class ModelBlock:
    c: float = 1.0
    nu: float = 0.0
    delta_star: float = 0.1
    gamma_quadratic: float = 0.0
    relaxed: bool = False
    functions: dict = field(default_factory=lambda: {
        "g": ("quadratic_difference", {}), "alpha0": ("constant", {}),
        "alpha": ("offset_eta_squared", {}), "beta": ("constant", {})})


@dataclass
class NormBlock:
    family: str = "hyperbola"
    sigma: float = 0.1
    p: float | None = None


@dataclass
class TimeBlock:
    h: float | str = "auto"
    steps: int = 200


@dataclass
class InitialBlock:
    preset: str = "ramp"
    amplitude: float = math.pi
    seed: int = 0
    snapshot: str | None = None


@dataclass
class SourceBlock:
    kind: str = "constant"
    value: float = 0.0
    table: tuple = ()
    t_end: float = math.inf
    u_infinity: float | None = None


@dataclass
class ToleranceBlock:
    v: float = 1e-9
    theta: float = 1e-11
    slack: float | None = None   # None: 1e-7 (1 + |F_0|)
    spread: float = 1e-3
    residual: float = 1e-5


@dataclass
class AuditBlock:
    dissipation: bool = True
    lyapunov: bool = True
    omega: bool = False
    apriori: bool = False
    u_dagger: tuple = ("zero",)


@dataclass
class SolverBlock:
    v: str = "newton"
    theta: str = "newton"
    linear: str = "direct"


@dataclass
class OutputBlock:
    snapshot_every: int = 10
    pgm: bool = True


@dataclass
class SweepBlock:
    sigmas: tuple = (0.5, 0.1, 0.02, 0.004)
    h_values: tuple = (0.1, 0.05)
    horizon: float = 2.0


@dataclass
class RunConfig:
    grid: GridBlock = field(default_factory=GridBlock)
    model: ModelBlock = field(default_factory=ModelBlock)
    norm: NormBlock = field(default_factory=NormBlock)
    time: TimeBlock = field(default_factory=TimeBlock)
    initial: InitialBlock = field(default_factory=InitialBlock)
    source: SourceBlock = field(default_factory=SourceBlock)
    tolerance: ToleranceBlock = field(default_factory=ToleranceBlock)
    audit: AuditBlock = field(default_factory=AuditBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    text: str = ""
    base_dir: Path = field(default_factory=Path.cwd)

    # -- resolved objects ------------------------------------------------

    def build_grid(self) -> Grid:
        return self.grid.build()

    def build_source(self) -> Source:
        s = self.source
        if s.kind == "constant":
            return Source.constant(s.value, s.value if s.u_infinity is None else s.u_infinity)
        return Source(s.table, s.t_end, s.u_infinity)

    def build_spec(self) -> ModelSpec:
        m = self.model
        funcs = {role: build_function(name, **params) for role, (name, params) in m.functions.items()}
        return ModelSpec(c=m.c, nu=m.nu, delta_star=m.delta_star,
                         gamma=Potential(m.gamma_quadratic), source=self.build_source(),
                         relaxed=m.relaxed, **funcs)

    def build_norm(self):
        return make_norm(self.norm.family, self.norm.sigma, self.norm.p)

    def resolved_h(self, spec: ModelSpec | None = None) -> float:
        if self.time.h == "auto":
            return AUTO_H_FACTOR * step_bound(spec or self.build_spec())
        return float(self.time.h)

    def initial_data(self, grid: Grid | None = None) -> InitialData:
        grid = grid or self.build_grid()
        if self.initial.snapshot:
            path = Path(self.initial.snapshot)
            if not path.is_absolute():
                path = self.base_dir / path
            g, v, theta = fileio.read_state(path)
            if g.shape != grid.shape:
                raise ConfigError(f"snapshot grid {g.shape} does not match config grid {grid.shape}")
            return InitialData(v, theta)
        return preset_initial(grid, self.initial.preset, self.initial.amplitude, self.initial.seed)

    def constants(self) -> DerivedConstants:
        grid = self.build_grid()
        init = self.initial_data(grid)
        return derived_constants(self.build_spec(), init.theta0_sup, grid.measure)


def preset_initial(grid: Grid, preset: str = "ramp", amplitude: float = math.pi,
                   seed: int = 0) -> InitialData:
    """Named initial states. The first axis carries the orientation profile."""
    X = grid.centers()
    x = X[0]
    y = X[1] if grid.dim == 2 else X[0]
    if preset == "ramp":
        w0 = 0.5 + 0.3 * np.cos(np.pi * x)
        eta0 = 0.5 + 0.2 * np.sin(2 * np.pi * y)
        theta0 = amplitude * x
    elif preset == "step":
        w0 = 0.5 + 0.3 * np.cos(np.pi * x)
        eta0 = 0.5 + 0.2 * np.sin(2 * np.pi * y)
        theta0 = np.where(x < 0.5, 0.0, amplitude)
    elif preset == "random":
        rng = np.random.default_rng(seed)
        w0 = rng.uniform(0.1, 0.9, grid.shape)
        eta0 = rng.uniform(0.1, 0.9, grid.shape)
        theta0 = rng.uniform(-amplitude, amplitude, grid.shape)
    elif preset == "two-grain":
        # ordered grains with a disordered boundary layer around x = 1/2
        eta0 = 1.0 - 0.8 * np.exp(-((x - 0.5) / 0.1) ** 2)
        w0 = np.full(grid.shape, 0.8)
        theta0 = np.where(x < 0.5, -0.5 * amplitude, 0.5 * amplitude)
    else:
        raise ConfigError(f"unknown initial preset {preset!r}; choose from {PRESETS}")
    return InitialData(np.stack([w0, eta0]), theta0)


# -- parsing ----------------------------------------------------------------

def _bool(s):
    t = s.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _float(s):
    t = s.strip().lower()
    if t in ("inf", "infinity"):
        return math.inf
    return float(t)


def _floats(s):
    return tuple(_float(p) for p in s.split(",") if p.strip())


def _ints(s):
    return tuple(int(p) for p in s.split(",") if p.strip())


def _opt_float(s):
    return None if s.strip().lower() in ("none", "auto", "") else _float(s)


def _h(s):
    return "auto" if s.strip().lower() == "auto" else _float(s)


def _table(s):
    """``t0:v0, t1:v1, ...``"""
    out = []
    for part in s.split(","):
        if not part.strip():
            continue
        t, _, v = part.partition(":")
        if not _:
            raise ValueError(f"table entry {part.strip()!r} is not 't:value'")
        out.append((_float(t), _float(v)))
    return tuple(out)


def _names(s):
    return tuple(p.strip() for p in s.split(",") if p.strip())


SCALARS = {
    "grid.shape": ("grid", "shape", _ints),
    "grid.spacing": ("grid", "spacing", lambda s: None if s.strip() == "auto" else _floats(s)),
    "model.c": ("model", "c", _float),
    "model.nu": ("model", "nu", _float),
    "model.delta_star": ("model", "delta_star", _float),
    "model.gamma.quadratic": ("model", "gamma_quadratic", _float),
    "model.relaxed": ("model", "relaxed", _bool),
    "norm.family": ("norm", "family", str.strip),
    "norm.sigma": ("norm", "sigma", _float),
    "norm.p": ("norm", "p", _opt_float),
    "time.h": ("time", "h", _h),
    "time.steps": ("time", "steps", int),
    "initial.preset": ("initial", "preset", str.strip),
    "initial.amplitude": ("initial", "amplitude", _float),
    "initial.seed": ("initial", "seed", int),
    "initial.snapshot": ("initial", "snapshot", str.strip),
    "source.kind": ("source", "kind", str.strip),
    "source.value": ("source", "value", _float),
    "source.table": ("source", "table", _table),
    "source.t_end": ("source", "t_end", _float),
    "source.u_infinity": ("source", "u_infinity", _opt_float),
    "tolerance.v": ("tolerance", "v", _float),
    "tolerance.theta": ("tolerance", "theta", _float),
    "tolerance.slack": ("tolerance", "slack", _opt_float),
    "tolerance.spread": ("tolerance", "spread", _float),
    "tolerance.residual": ("tolerance", "residual", _float),
    "audit.dissipation": ("audit", "dissipation", _bool),
    "audit.lyapunov": ("audit", "lyapunov", _bool),
    "audit.omega": ("audit", "omega", _bool),
    "audit.apriori": ("audit", "apriori", _bool),
    "audit.u_dagger": ("audit", "u_dagger", _names),
    "solver.v": ("solver", "v", str.strip),
    "solver.theta": ("solver", "theta", str.strip),
    "solver.linear": ("solver", "linear", str.strip),
    "output.snapshot_every": ("output", "snapshot_every", int),
    "output.pgm": ("output", "pgm", _bool),
    "sweep.sigmas": ("sweep", "sigmas", _floats),
    "sweep.h_values": ("sweep", "h_values", _floats),
    "sweep.horizon": ("sweep", "horizon", _float),
}
ROLES = ("g", "alpha0", "alpha", "beta")


def parse_text(text: str, base_dir=None, validate_model: bool = True) -> RunConfig:
    cfg = RunConfig(text=text, base_dir=Path(base_dir) if base_dir else Path.cwd())
    seen = {}
    role_names, role_params = {}, {r: {} for r in ROLES}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        parts = key.split(".")
        try:
            if key in SCALARS:
                block, attr, conv = SCALARS[key]
                setattr(getattr(cfg, block), attr, conv(value))
            elif len(parts) == 2 and parts[0] == "model" and parts[1] in ROLES:
                if value not in FUNCTIONS:
                    raise ValueError(f"unknown function {value!r}; known: {', '.join(sorted(FUNCTIONS))}")
                role_names[parts[1]] = (value, lineno)
            elif len(parts) == 3 and parts[0] == "model" and parts[1] in ROLES:
                role_params[parts[1]][parts[2]] = (_float(value), lineno)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None

    # attach parameters to functions, checking names against the factory signature
    for role in ROLES:
        name = role_names.get(role, (cfg.model.functions[role][0], None))[0]
        sig = inspect.signature(FUNCTIONS[name])
        params = {}
        for pname, (val, lineno) in role_params[role].items():
            if pname not in sig.parameters:
                allowed = ", ".join(sig.parameters) or "none"
                raise ConfigError(f"line {lineno}: function {name!r} has no parameter {pname!r} "
                                  f"(parameters: {allowed})")
            params[pname] = val
        cfg.model.functions[role] = (name, params)
    _check(cfg, validate_model)
    return cfg


def parse_config(path, validate_model: bool = True) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from None
    return parse_text(text, path.parent, validate_model)


def _check(cfg: RunConfig, validate_model: bool) -> None:
    g = cfg.grid
    if len(g.shape) not in (1, 2):
        raise ConfigError("grid.shape must have 1 or 2 entries")
    if g.spacing is not None and len(g.spacing) != len(g.shape):
        raise ConfigError("grid.spacing must have one entry per axis")
    try:
        cfg.build_grid()
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None
    if cfg.norm.family not in FAMILIES:
        raise ConfigError(f"norm.family must be one of {FAMILIES}, got {cfg.norm.family!r}")
    if not (0.0 < cfg.norm.sigma < 1.0):
        raise ConfigError(f"norm.sigma must lie in (0, 1), got {cfg.norm.sigma}")
    if cfg.time.steps < 0:
        raise ConfigError("time.steps must be >= 0")
    if cfg.initial.preset not in PRESETS and not cfg.initial.snapshot:
        raise ConfigError(f"initial.preset must be one of {PRESETS}, got {cfg.initial.preset!r}")
    if cfg.source.kind not in ("constant", "table"):
        raise ConfigError("source.kind must be 'constant' or 'table'")
    if cfg.source.kind == "table" and not cfg.source.table:
        raise ConfigError("source.kind = table needs source.table = 't0:v0, t1:v1, ...'")
    if cfg.solver.v not in ("newton", "spg") or cfg.solver.theta not in ("newton", "picard") \
            or cfg.solver.linear not in ("direct", "cg"):
        raise ConfigError("solver: v in {newton, spg}, theta in {newton, picard}, linear in {direct, cg}")
    for name in cfg.audit.u_dagger:
        if name not in ("zero", "u_infinity", "random"):
            raise ConfigError(f"audit.u_dagger entries must be zero, u_infinity or random; got {name!r}")
    if cfg.output.snapshot_every < 0:
        raise ConfigError("output.snapshot_every must be >= 0")
    try:
        source = cfg.build_source()
    except ValueError as exc:
        raise ConfigError(f"source: {exc}") from None
    if cfg.audit.omega and not source.settles():
        raise ConfigError("A6: the omega-limit audit needs a source that eventually equals "
                          "u_infinity (u - u_infinity must be square integrable in time)")
    if not validate_model:
        return
    spec = cfg.build_spec()
    report = validate(spec)
    if not report.passed:
        worst = report.failures[0]
        label, _, what = worst.partition(" ")
        raise ConfigError(f"{label}: {what} violated (worst margin {report.margins[worst]:+.3e})")
    h1 = step_bound(spec)
    h = cfg.resolved_h(spec)
    if not (0 < h <= h1 * (1 + 1e-12)):
        raise ConfigError(f"time.h = {h} exceeds h1_dagger = {h1:.6g} (unique solvability regime)")
    try:
        cfg.initial_data().check(cfg.build_grid())
    except fileio.SnapshotError:
        raise
    except ValueError as exc:
        raise ConfigError(f"initial data: {exc}") from None


def with_overrides(cfg: RunConfig, **blocks) -> RunConfig:
    """Copy with some block fields replaced, e.g. ``with_overrides(cfg, norm={'sigma': 0.02})``."""
    out = replace(cfg)
    for block, changes in blocks.items():
        setattr(out, block, replace(getattr(cfg, block), **changes))
    return out


def dump(cfg: RunConfig) -> str:
    """Resolved config as text that parses back to the same settings."""
    lines = []

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            if v and isinstance(v[0], tuple):
                return ", ".join(f"{t!r}:{x!r}" for t, x in v)
            return ", ".join(str(x) for x in v)
        return "none" if v is None else str(v)

    for key, (block, attr, _) in SCALARS.items():
        val = getattr(getattr(cfg, block), attr)
        if key == "grid.spacing" and val is None:
            val = "auto"
        if key == "initial.snapshot" and val is None:
            continue
        if key == "source.table" and not val:
            continue
        lines.append(f"{key} = {fmt(val)}")
    for role, (name, params) in cfg.model.functions.items():
        lines.append(f"model.{role} = {name}")
        lines += [f"model.{role}.{k} = {v!r}" for k, v in params.items()]
    return "\n".join(lines) + "\n"

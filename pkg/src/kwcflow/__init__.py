"""Implicit time-discrete scheme for a coupled Allen-Cahn / Kobayashi-Warren-Carter
grain-boundary system, with audits of its dissipation structure."""
from .grid import Grid
from .regnorm import EXACT, RegularizedNorm, make_norm, verify_axioms
from .model import ModelSpec, Source, default_model, derived_constants, step_bound, validate
from .energy import free_energy, energy_gradient, phi, weighted_tv
from .stepper import InitialData, Trajectory, interpolate, run, step, theta_step, v_step

__version__ = "0.1.0"

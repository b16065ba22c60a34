import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kwcflow.energy import (energy_gradient, free_energy, gibbs_energy, lyapunov, phi,
                            signed_weighted_tv, total_variation, weighted_tv)
from kwcflow.grid import Grid
from kwcflow.model import constant, default_model, offset_w_squared
from kwcflow.oracle import fd_gradient
from kwcflow.regnorm import EXACT, RegularizedNorm

ONES = dict(alpha=constant(1.0), beta=constant(1.0))


def test_phi_examples():
    g = Grid((2,), (1.0,))
    spec = default_model(**ONES)
    v = np.full((2, 2), 0.5)
    th = np.array([0.0, 1.0])
    assert phi(g, v, np.full(2, 3.0), spec, RegularizedNorm("tanh", 0.2), nu=0.3) == 0.0
    assert phi(g, v, th, spec, EXACT) == pytest.approx(1.0)
    n = RegularizedNorm("hyperbola", 0.999999999999)
    assert phi(g, v, th, spec, n) == pytest.approx(math.sqrt(2) - 1, rel=1e-9)


def test_free_energy_examples():
    g = Grid.unit((16,))
    spec = default_model()
    ones = np.ones((2, 16))
    assert free_energy(g, ones, np.full(16, 0.4), spec).total == 0.0
    # v = (0.5, 0.5), theta a ramp of slope 1 on the unit interval (last cell owns no face)
    x = g.centers()[0]
    br = free_energy(g, np.full((2, 16), 0.5), x, spec)
    assert br.total == pytest.approx(0.35 * 15 / 16)
    assert br.dirichlet_v == 0 and br.interaction_g == 0 and br.theta_dirichlet == 0


def test_free_energy_outside_box_flagged():
    g = Grid.unit((4,))
    v = np.full((2, 4), 0.5)
    v[0, 1] = 1.2
    br = free_energy(g, v, g.zeros(), default_model())
    assert not br.admissible and br.total == math.inf


def test_gibbs_examples():
    g = Grid.unit((8,))
    rng = np.random.default_rng(1)
    v, th = rng.uniform(0, 1, (2, 8)), rng.normal(size=8)
    spec = default_model()
    F = free_energy(g, v, th, spec).total
    assert gibbs_energy(g, rng.normal(size=8), v, th, default_model(c=0.0)) == pytest.approx(F)
    assert gibbs_energy(g, g.zeros(), v, th, spec) == pytest.approx(F)
    ones = np.ones((2, 8))
    F1 = free_energy(g, ones, th, spec).total
    assert gibbs_energy(g, np.ones(8), ones, th, spec) == pytest.approx(F1 + 1.0)


def test_weighted_tv_examples(rng):
    g = Grid.unit((5, 6))
    th = rng.normal(size=g.shape)
    tv = total_variation(g, th)
    assert weighted_tv(g, np.full(g.shape, 2.5), th) == pytest.approx(2.5 * tv)
    assert weighted_tv(g, rng.uniform(0, 1, g.shape), np.full(g.shape, 1.0)) == 0.0
    with pytest.raises(ValueError):
        weighted_tv(g, -np.ones(g.shape), th)


def test_weighted_tv_localizes_on_step():
    g = Grid((6,), (1.0,))
    th = np.array([0, 0, 0, 1, 1, 1.0])
    rho = np.zeros(6)
    rho[2] = 1.0          # the cell owning the jump face
    assert weighted_tv(g, rho, th) == pytest.approx(1.0)
    rho2 = np.ones(6)
    rho2[2] = 0.0
    assert weighted_tv(g, rho2, th) == 0.0


def test_signed_weighted_tv(rng):
    g = Grid.unit((7,))
    th = rng.normal(size=7)
    rho = rng.uniform(0, 2, 7)
    assert signed_weighted_tv(g, rho, th) == pytest.approx(weighted_tv(g, rho, th))
    r1, r2 = rng.normal(size=7), rng.normal(size=7)
    n = RegularizedNorm("arctan", 0.1)
    assert signed_weighted_tv(g, -r1, th, n) == pytest.approx(-signed_weighted_tv(g, r1, th, n))
    lin = signed_weighted_tv(g, 2 * r1 - 3 * r2, th, n)
    assert lin == pytest.approx(2 * signed_weighted_tv(g, r1, th, n) - 3 * signed_weighted_tv(g, r2, th, n),
                                rel=1e-12, abs=1e-12)


def _fd_check(grid, spec, norm, seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.2, 0.8, (2,) + grid.shape)
    th = rng.normal(size=grid.shape)
    gv, gt = energy_gradient(grid, v, th, spec, norm)
    m = grid.cell_measure
    fv = fd_gradient(lambda x: free_energy(grid, x, th, spec, norm).total, v, 1e-6) / m
    ft = fd_gradient(lambda x: free_energy(grid, v, x, spec, norm).total, th, 1e-6) / m
    for a, b in ((gv, fv), (gt, ft)):
        assert np.max(np.abs(a - b)) <= 1e-6 * max(1.0, np.max(np.abs(b)))


@pytest.mark.parametrize("family", ["hyperbola", "p_growth", "tanh", "arctan"])
@pytest.mark.parametrize("nu", [0.0, 0.2])
def test_energy_gradient_fd(family, nu):
    spec = default_model(nu=nu, beta=offset_w_squared(0.5))
    _fd_check(Grid.unit((6,)), spec, RegularizedNorm(family, 0.3), 7)
    _fd_check(Grid.unit((3, 4)), spec, RegularizedNorm(family, 0.3), 8)


def test_energy_gradient_trivial():
    g = Grid.unit((5,))
    spec = default_model(nu=0.3)
    v = np.full((2, 5), 0.4)
    gv, gt = energy_gradient(g, v, np.full(5, 1.3), spec, RegularizedNorm("hyperbola", 0.1))
    assert np.allclose(gv, 0.0) and np.allclose(gt, 0.0)
    rng = np.random.default_rng(0)
    _, gt = energy_gradient(g, rng.uniform(0, 1, (2, 5)), np.full(5, -2.0), spec,
                            RegularizedNorm("p_growth", 0.1))
    assert np.allclose(gt, 0.0)
    with pytest.raises(NotImplementedError):
        energy_gradient(g, v, g.zeros(), spec, EXACT)


fields = st.integers(0, 2**32 - 1)


@given(fields, st.sampled_from(["hyperbola", "yosida", "tanh", "arctan", "p_growth"]),
       st.floats(0.0, 0.5))
def test_phi_convex_in_theta(seed, family, nu):
    rng = np.random.default_rng(seed)
    g = Grid.unit((4, 3))
    spec = default_model(nu=nu)
    n = RegularizedNorm(family, 0.1)
    v = rng.uniform(0, 1, (2,) + g.shape)
    a, b = rng.normal(size=(2,) + g.shape) * 3
    mid = phi(g, v, 0.5 * (a + b), spec, n)
    assert mid <= 0.5 * (phi(g, v, a, spec, n) + phi(g, v, b, spec, n)) + 1e-12


@given(fields)
def test_free_energy_nonnegative(seed):
    rng = np.random.default_rng(seed)
    g = Grid.unit((6,))
    v = rng.uniform(0, 1, (2, 6))
    th = rng.normal(size=6) * 5
    assert free_energy(g, v, th, default_model(nu=0.1), RegularizedNorm("tanh", 0.05)).total >= 0


@given(fields)
def test_weighted_tv_bounds(seed):
    rng = np.random.default_rng(seed)
    g = Grid.unit((4, 4))
    th = rng.normal(size=g.shape)
    rho = rng.uniform(0.1, 3.0, g.shape)
    tv = total_variation(g, th)
    val = weighted_tv(g, rho, th)
    assert rho.min() * tv * (1 - 1e-12) <= val <= rho.max() * tv * (1 + 1e-12)
    # the weighted TV dominates delta_star times TV for admissible v
    v = rng.uniform(0, 1, (2,) + g.shape)
    spec = default_model()
    assert weighted_tv(g, spec.alpha(v[0], v[1]), th) >= spec.delta_star * tv * (1 - 1e-12)


def test_sigma_consistency_monotone():
    g = Grid.unit((32,))
    spec = default_model()
    v = np.full((2, 32), 0.5)
    th = math.pi * g.centers()[0]
    exact = phi(g, v, th, spec, EXACT)
    dev = [abs(phi(g, v, th, spec, RegularizedNorm("hyperbola", s)) - exact)
           for s in (0.5, 0.1, 0.02, 0.004)]
    assert all(b < a for a, b in zip(dev, dev[1:]))
    amax = float(np.max(spec.alpha(v[0], v[1])))
    tv = total_variation(g, th)
    for s, d in zip((0.5, 0.1, 0.02, 0.004), dev):
        w = RegularizedNorm("hyperbola", s).witnesses()
        assert d <= amax * (w.r0 * g.measure + (1 - w.q0) * tv) + 1e-14


def test_lyapunov_c_zero_is_free_energy(traj_1d):
    # default source is zero, so J with u_dagger = 0 equals F
    J = lyapunov(traj_1d, 0.0)
    assert np.allclose(J, traj_1d.energies())
    assert np.all(np.diff(J) <= 1e-10)

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kwcflow.grid import Grid
from kwcflow.model import (InvalidModel, Source, build_function, constant, cubic_eta,
                           default_model, derived_constants, quadratic_difference,
                           relaxed_difference, step_bound, validate, zero)


def test_default_model_valid():
    rep = validate(default_model(), 32)
    assert rep.passed, rep.summary()


def test_nonconvex_beta_fails():
    rep = validate(default_model(beta=cubic_eta(1.0)), 32)
    assert not rep.passed
    assert "A2 beta convex" in rep.failures


def test_negative_g_fails():
    rep = validate(default_model(g=constant(-1.0)), 32)
    assert "A4 g >= 0" in rep.failures


def test_small_alpha_fails_delta_star():
    rep = validate(default_model(alpha0=constant(0.05)), 32)
    assert "A2 inf alpha0 >= delta_star" in rep.failures


def test_relaxed_g_needs_flag():
    g = relaxed_difference(1.0)
    assert not validate(default_model(g=g), 32).passed
    assert validate(default_model(g=g, relaxed=True), 32).passed


def test_validate_sample_floor():
    with pytest.raises(ValueError):
        validate(default_model(), 8)


def test_validation_monotone_under_refinement():
    # a fail at a coarse sample never turns into a pass when refined
    spec = default_model(beta=cubic_eta(1.0))
    results = [validate(spec, n).passed for n in (16, 32, 64)]
    assert results == [False, False, False]


@pytest.mark.parametrize("g,expected", [(quadratic_difference(1.0), 0.5), (zero(), 0.5),
                                        (quadratic_difference(4.0), 0.125)])
def test_step_bound_examples(g, expected):
    assert step_bound(default_model(g=g)) == pytest.approx(expected)


def test_derived_constants_defaults():
    dc = derived_constants(default_model(), math.pi, 1.0)
    assert dc.h1_dagger == pytest.approx(0.5)
    assert dc.A_star == pytest.approx(22.0)
    assert dc.B_star == pytest.approx(1 / 11)
    # independent hand calculation of the product formula with the max convention
    prod = (1 + 1) * (1 + 2) * (1 + 1) * (1 + 0) * (1 + 1) * (1 + math.pi) * (1 + 1)
    R = prod ** 2 / 0.1 ** 4
    assert dc.R_star == pytest.approx(R, rel=1e-3)
    assert dc.C_star == pytest.approx(4e4 * dc.R_star ** 5)
    assert dc.A_star <= 2 * 0.1 * math.sqrt(dc.R_star)
    assert dc.nu_star == pytest.approx(0.99 * math.sqrt(min(1 / (128 * 22 * dc.R_star), 0.5)))
    assert "A_star <= 2 delta sqrt(R_star)" in dc.report()


def test_derived_constants_refuses_invalid():
    with pytest.raises(InvalidModel):
        derived_constants(default_model(g=constant(-1.0)), 1.0, 1.0)


def test_witness_regime_below_nu_star():
    from kwcflow.regnorm import FAMILIES, RegularizedNorm
    dc = derived_constants(default_model(), math.pi, 1.0)
    sigma = 0.5 * dc.nu_star
    for fam in FAMILIES:
        w = RegularizedNorm(fam, sigma).witnesses()
        assert 0.75 <= w.q0 <= 1 <= w.q1 <= 1.25 and w.r0 <= 0.25 and w.r1 <= 0.25


def test_source_examples():
    grid = Grid.unit((4,))
    spec = default_model(source=Source.constant(0.3))
    assert np.allclose(spec.sample_source(5, 0.2, grid), 0.3)
    supported = default_model(source=Source(((0.0, 1.0),), 1.0, 0.0))
    assert np.all(supported.sample_source(3, 0.5, grid) == 0.0)
    table = default_model(source=Source(((0.0, 1.0), (0.5, 0.0)), 1.0, 0.0))
    assert np.allclose(table.sample_source(1, 1.0, grid), 0.5)


def test_source_validation():
    with pytest.raises(ValueError):
        Source(((1.0, 0.0), (0.5, 1.0)))
    with pytest.raises(ValueError):
        Source(((0.0, 1.0),), 0.0)
    assert Source(((0.0, 1.0), (1.0, 0.3)), math.inf, 0.3).settles()
    assert not Source(((0.0, 1.0),), math.inf, 0.3).settles()
    with pytest.raises(ValueError):
        Source(((0.0, 1.0),), math.inf).limit(Grid.unit((2,)))


@given(st.lists(st.tuples(st.floats(0.01, 1.0), st.floats(-2, 2)), min_size=1, max_size=5),
       st.floats(0.01, 0.7), st.integers(1, 20))
def test_source_average_is_exact(pieces, h, i):
    t, table = 0.0, []
    for dt, val in pieces:
        table.append((t, val))
        t += dt
    src = Source(tuple(table), t, None)
    grid = Grid.unit((2,))
    a, b = (i - 1) * h, i * h
    # reference: integrate the step function on a fine midpoint rule
    ts = np.linspace(a, b, 20001)
    mids = 0.5 * (ts[1:] + ts[:-1])
    ref = np.mean([src.at(x, grid)[0] for x in mids[::50]])
    exact = 0.0
    for t0, t1, v in src.segments():
        exact += max(0.0, min(b, t1) - max(a, t0)) * v
    assert src.average(a, b, grid)[0] == pytest.approx(exact / h, abs=1e-12)
    assert src.average(a, b, grid)[0] == pytest.approx(ref, abs=0.05 * max(1.0, abs(ref)) + 0.05)


@given(st.floats(0.0, 10.0))
def test_step_bound_at_most_half(scale):
    assert step_bound(default_model(g=quadratic_difference(scale)), 16) <= 0.5


def test_build_function_unknown():
    with pytest.raises(ValueError):
        build_function("nope")
    assert build_function("constant", value=2.0)(0.3, 0.4) == 2.0

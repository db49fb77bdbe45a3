import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.optimize import brentq

from cnls.grid import Grid, State
from cnls.model import (CappedQuadratic, Constant, DoubleWell, FrozenParams, ModelParams, ball_thresholds,
                        energy_eps, energy_frozen, global_thresholds, h_func, local_thresholds, nehari_value,
                        potential_from_dict, potential_to_dict, residual, theta_project)

from .conftest import sech_soliton

pos = st.floats(0.05, 20.0, allow_nan=False)


def soliton_state(g, scale=1.0, kappa=1.0):
    f = g.sample(lambda x: sech_soliton(x, kappa)).values * scale
    return State.from_arrays(g, f, np.zeros(g.shape))


# --- potentials --------------------------------------------------------------


def test_potential_examples():
    assert Constant(2.5)(np.array([3.0, -1.0])) == 2.5
    q = CappedQuadratic(1.0, 1.0, (0.0,), cap=9.0)
    assert q(np.array([0.0])) == 1.0
    assert q(np.array([10.0])) == 10.0
    assert np.all(Constant(1.0).shifted(0.5)(np.zeros((4, 2))) == 1.5)


def test_double_well_has_equal_depth_minima():
    w = DoubleWell(1.0, 2.0, ((-1.0, 0.0), (1.0, 0.0)), 0.4, cap=3.0)
    assert w(np.array([-1.0, 0.0])) == w(np.array([1.0, 0.0])) == pytest.approx(w.inf())
    assert w(np.array([0.0, 5.0])) == pytest.approx(w.sup())
    with pytest.raises(ValueError):
        DoubleWell(1.0, 5.0, ((0.0,),), 1.0, cap=3.0)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 2), st.floats(0.5, 9))
def test_gradients_match_finite_differences(x, y, curv, cap):
    z = np.array([x, y])
    pots = [CappedQuadratic(1.0, curv, (0.3, -0.2), cap=cap),
            DoubleWell(0.5, 2.0, ((-1.0, 0.0), (1.2, 0.5)), 0.7, cap=3.0),
            CappedQuadratic(1.0, curv, (0.3, -0.2), cap=cap).shifted(0.7)]
    for p in pots:
        r = math.dist(z, getattr(p, "center", getattr(getattr(p, "inner", None), "center", (0, 0))))
        # skip the kink of the cap
        assume(abs(curv * r * r - cap) > 1e-3)
        g = p.gradient(z)
        for j in range(2):
            e = np.zeros(2)
            e[j] = 1e-6
            fd = (p(z + e) - p(z - e)) / 2e-6
            assert fd == pytest.approx(g[j], abs=1e-5)


@pytest.mark.parametrize("p", [Constant(1.5), CappedQuadratic(1.0, 0.5, (0.1, 0.2), 4.0),
                               DoubleWell(1.0, 1.0, ((0.0, 1.0), (0.0, -1.0)), 0.5, 2.0),
                               CappedQuadratic(1.0, 0.5, (0.0,), 4.0).shifted(0.25)])
def test_potential_dict_roundtrip(p):
    assert potential_from_dict(potential_to_dict(p)) == p


def test_unknown_potential_type():
    with pytest.raises(ValueError, match="unknown potential type"):
        potential_from_dict({"type": "sextic"})


def test_model_params_validation():
    V, W = Constant(1.0), Constant(2.0)
    ModelParams(V, W, 1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        ModelParams(V, W, 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        ModelParams(V, W, 1.0, 0.5, 1.5)
    with pytest.raises(ValueError):
        ModelParams(V, W, -0.1, 0.5, 1.0)
    with pytest.raises(ValueError):
        FrozenParams(0.0, 1.0, 1.0)


# --- functionals -------------------------------------------------------------


def test_energy_examples(fine_line):
    p = FrozenParams(1.0, 1.0, 3.0)
    assert energy_frozen(State(fine_line.zeros(), fine_line.zeros()), p) == 0.0
    assert energy_frozen(soliton_state(fine_line), p) == pytest.approx(4 / 3, abs=1e-5)


@pytest.mark.parametrize("kappa", [0.5, 2.0, 4.0])
def test_energy_scaling_oracle(fine_line, kappa):
    s = soliton_state(fine_line, kappa=kappa)
    e = energy_frozen(s, FrozenParams(kappa, 1.0, 0.0))
    assert e == pytest.approx(kappa**1.5 * 4 / 3, rel=1e-4)


def test_energy_eps_matches_frozen_for_constant_potentials(line, rng):
    a = rng.random(line.shape)
    c = rng.random(line.shape)
    a[[0, -1]] = c[[0, -1]] = 0.0
    s = State.from_arrays(line, a, c)
    mp = ModelParams(Constant(1.3), Constant(0.7), 0.9, 1.0, 0.7)
    assert energy_eps(s, mp) == pytest.approx(energy_frozen(s, FrozenParams(1.3, 0.7, 0.9)), rel=1e-14)


def test_nehari_examples(fine_line):
    p = FrozenParams(1.0, 1.0, 1.0)
    assert nehari_value(soliton_state(fine_line, 2.0), p) == pytest.approx(-64.0, abs=1e-4)
    with pytest.raises(ValueError):
        nehari_value(State(fine_line.zeros(), fine_line.zeros()), p)


def test_theta_examples(fine_line):
    p = FrozenParams(1.0, 1.0, 1.0)
    theta, proj = theta_project(soliton_state(fine_line, 2.0), p)
    assert theta == pytest.approx(0.5, abs=1e-6)
    theta2, _ = theta_project(proj, p)
    assert theta2 == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        theta_project(State(fine_line.zeros(), fine_line.zeros()), p)


@given(st.integers(0, 2**31), st.floats(0.2, 4), st.floats(0.2, 4), st.floats(0, 4))
def test_projection_is_the_fibre_maximum(seed, k1, k2, b):
    g = Grid(1, 6.0, 33)
    rng = np.random.default_rng(seed)
    a, c = rng.random(g.shape), rng.random(g.shape)
    a[[0, -1]] = c[[0, -1]] = 0.0
    s = State.from_arrays(g, a, c)
    p = FrozenParams(k1, k2, b)
    theta, proj = theta_project(s, p)
    e_proj = energy_frozen(proj, p)
    ts = np.linspace(0, 3 * theta, 601)
    scan = max(energy_frozen(s.scaled(t), p) for t in ts)
    assert scan <= e_proj * (1 + 1e-6)
    assert e_proj <= scan * (1 + 1e-6) + 1e-12
    assert abs(nehari_value(proj, p)) <= 1e-10 * max(1.0, abs(e_proj) * 4)


def test_residual_examples(fine_line):
    mp = ModelParams(Constant(1.0), Constant(1.0), 0.7, 1.0, 1.0)
    zero = residual(State(fine_line.zeros(), fine_line.zeros()), mp)
    assert zero.u.sup() == 0.0 and zero.v.sup() == 0.0
    r = residual(soliton_state(fine_line), mp)
    # consistency error of the stencil is h^2 |U''''| / 12 with |U''''| <= 10
    assert r.u.sup() <= fine_line.spacing**2
    assert r.v.sup() == 0.0


def test_residual_with_frozen_params_agrees(line, rng):
    a = rng.random(line.shape)
    a[[0, -1]] = 0.0
    s = State.from_arrays(line, a, a[::-1].copy())
    r1 = residual(s, FrozenParams(1.2, 0.8, 2.0))
    r2 = residual(s, ModelParams(Constant(1.2), Constant(0.8), 2.0, 1.0, 0.8))
    assert np.array_equal(r1.u.values, r2.u.values)


# --- thresholds --------------------------------------------------------------


def test_h_examples():
    assert h_func(1.0) == 1.0
    assert h_func(4.0) == 4.75
    assert h_func(0.25) == pytest.approx(0.765625, abs=1e-15)
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            h_func(bad)


def test_local_threshold_examples():
    t = local_thresholds(1.0, 1.0)
    assert (t.b_z, t.b0, t.b1) == (1.0, 1.0, 1.0)
    t = local_thresholds(1.0, 16.0)
    assert (t.b_z, t.b0) == (2.0, 2.0)
    assert t.b1 == pytest.approx(4.75, abs=1e-12)
    assert local_thresholds(16.0, 1.0) == t


def test_global_threshold_examples():
    assert global_thresholds(1.0, 1.0, 1.0) == (1.0, 1.0, 1.0)
    assert global_thresholds(1.0, 16.0, 16.0) == (0.5, 2.0, 4.75)
    assert global_thresholds(1.0, 16.0, 1.0) == (1.0, 2.0, 4.75)
    with pytest.raises(ValueError):
        global_thresholds(2.0, 1.0, 4.0)


def test_h_branches_agree_at_crossings():
    def gap(s):
        return s / 32 * (7 + 1 / s**2) ** 2 - 1 - (s * s + 3) / 4

    grid = np.logspace(-2, 2, 4001)
    vals = gap(grid)
    roots = [brentq(gap, a, b, xtol=1e-15) for a, b, fa, fb in zip(grid, grid[1:], vals, vals[1:])
             if np.sign(fa) != np.sign(fb)]
    assert any(abs(s - 1) < 1e-9 for s in roots)
    for s in roots:
        a = s / 32 * (7 + 1 / s**2) ** 2 - 1
        b = (s * s + 3) / 4
        assert a == pytest.approx(b, abs=1e-12)
        assert h_func(s) == pytest.approx(b, abs=1e-12)


@given(pos, pos)
def test_local_thresholds_swap_invariant(k1, k2):
    assert local_thresholds(k1, k2) == local_thresholds(k2, k1)


@given(pos, pos)
def test_b0_at_least_one(k1, k2):
    t = local_thresholds(k1, k2)
    assert t.b0 >= 1.0
    assert t.b_z == t.b0
    if k1 == k2:
        assert t.b0 == 1.0
    elif abs(k1 / k2 - 1) > 1e-12:
        assert t.b0 > 1.0


def test_regime_bands():
    t = local_thresholds(1.0, 16.0)
    assert t.regime(1.0) == "Scalar"
    assert t.regime(3.0) == "Indeterminate"
    assert t.regime(5.0) == "Vector"


def test_ball_thresholds_use_minima_over_ball():
    g = Grid(2, 2.0, 41)
    V = CappedQuadratic(1.0, 1.0, (0.0, 0.0), cap=9.0)
    W = Constant(4.0)
    t = ball_thresholds(V, W, (1.0, 0.0), 1.2, g)
    assert t.b_z == pytest.approx((4.0 / 2.0) ** 0.25)
    assert t.b0 == pytest.approx(4.0**0.25)
    flat = ball_thresholds(Constant(1.0), Constant(1.0), (0.0, 0.0), 0.5, g)
    assert (flat.b0, flat.b1) == (1.0, 1.0)

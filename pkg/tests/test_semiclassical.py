import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnls.grid import Grid, State
from cnls.ground_state import SeedSpec, solve_seed, system_ground_state
from cnls.model import CappedQuadratic, Constant, FrozenParams, ModelParams, energy_eps
from cnls.semiclassical import (ConcentrationRow, EpsSchedule, balance_residual, check_schedule, continuation,
                                decay_fit, dichotomy_verdict, initial_guess, matched_reference_grid,
                                profile_distance, profile_reference_point, resolution_floor, solve_seps)
from cnls.system import ConvergenceError

# --- schedules ---------------------------------------------------------------


def test_schedule_validation():
    assert EpsSchedule((0.5, 0.4, 0.1)).smallest == 0.1
    for bad in ((), (0.5, 0.5), (0.4, 0.5), (1.5, 0.5), (0.5, -0.1)):
        with pytest.raises(ValueError):
            EpsSchedule(bad)


@given(st.floats(0.1, 1.0), st.floats(0.01, 1.0), st.floats(0.3, 0.95))
def test_geometric_schedule(start, frac, ratio):
    stop = start * frac
    s = EpsSchedule.geometric(start, stop, ratio)
    assert s.values[0] == start and s.smallest == stop
    assert all(b < a for a, b in zip(s.values, s.values[1:]))
    inner = s.values[:-1]
    assert all(b == pytest.approx(a * ratio) for a, b in zip(inner, inner[1:]))


def test_resolution_floor():
    g = Grid(1, 2.0, 101)
    p = ModelParams(Constant(1.0), Constant(4.0), 0.0, 0.5, 1.0)
    assert resolution_floor(p, g) == pytest.approx(4 * g.spacing * 2.0)
    with pytest.raises(ValueError, match="resolution floor"):
        check_schedule(p, EpsSchedule((0.5, 0.1)), g)
    check_schedule(p, EpsSchedule((0.5, 0.33)), g)


def test_matched_reference_grid_aligns_nodes():
    g = Grid(3, 0.6, 64)
    eps = 0.1
    ref = matched_reference_grid(g, eps)
    assert ref.n % 2 == 1
    assert ref.spacing == pytest.approx(g.spacing / eps, rel=1e-14)
    assert ref.axis[ref.n // 2] == 0.0


# --- initial guess and the frozen solve --------------------------------------


@pytest.fixture(scope="module")
def limit_1d():
    return system_ground_state(FrozenParams(1.0, 1.5, 0.0), Grid(1, 20.0, 2049))


def test_initial_guess_examples(limit_1d):
    g = Grid(1, 2.0, 1601)
    z, eps, r_cut = 0.25, 0.05, 1.0
    s = initial_guess([z], eps, limit_1d, r_cut, g)
    x = g.axis
    assert not np.any(s.u.values[np.abs(x - z) >= r_cut])
    node = int(np.argmin(np.abs(x - z)))
    assert x[node] == pytest.approx(z, abs=1e-12)
    assert s.u.values[node] == pytest.approx(limit_1d.sup_u, rel=1e-9)
    V = CappedQuadratic(1.0, 1.0, (z,), cap=2.0)
    p = ModelParams(V, V.shifted(0.5), 0.0, eps, 1.0)
    sigma = limit_1d.energy
    assert energy_eps(s, p) / eps == pytest.approx(sigma, rel=0.05)
    with pytest.raises(ValueError, match="cutoff"):
        initial_guess([z], eps, limit_1d, 1.9, g)


def test_frozen_state_is_a_fixed_point():
    g = Grid(1, 16.0, 1025)
    gs = system_ground_state(FrozenParams(1.0, 1.0, 2.0), g)
    p = ModelParams(Constant(1.0), Constant(1.0), 2.0, 1.0, 1.0)
    s, info = solve_seps(p, gs.state, return_info=True)
    assert info.converged and info.iterations <= 2
    assert np.max(np.abs(s.u.values - gs.state.u.values)) <= 1e-6


def test_zero_initial_state_is_rejected():
    g = Grid(1, 4.0, 65)
    p = ModelParams(Constant(1.0), Constant(1.0), 0.0, 0.5, 1.0)
    with pytest.raises(ValueError, match="zero"):
        solve_seps(p, State(g.zeros(), g.zeros()))


def test_warm_start_converges_along_a_step(limit_1d):
    g = Grid(1, 2.0, 401)
    V = CappedQuadratic(1.0, 1.0, (0.0,), cap=2.0)
    p = ModelParams(V, V.shifted(0.5), 0.0, 0.3, 1.0)
    s = solve_seps(p, initial_guess([0.0], 0.3, limit_1d, 1.9, g), relax=True)
    nxt = ModelParams(V, V.shifted(0.5), 0.0, 0.24, 1.0)
    s2, info = solve_seps(nxt, s, return_info=True)
    assert info.converged


def test_iteration_cap_is_an_error(limit_1d):
    g = Grid(1, 2.0, 401)
    V = CappedQuadratic(1.0, 1.0, (0.0,), cap=2.0)
    p = ModelParams(V, V.shifted(0.5), 0.0, 0.3, 1.0)
    init = initial_guess([0.0], 0.5, limit_1d, 1.9, g)
    with pytest.raises(ConvergenceError):
        solve_seps(p, init, newton_maxiter=1)


# --- decay fit ---------------------------------------------------------------


def synthetic(g, mu1, mu2, eps, noise=0.0, seed=0):
    r = g.radius()
    vals = mu1 * np.exp(-mu2 * r / eps)
    if noise:
        vals *= 1 + noise * np.random.default_rng(seed).uniform(-1, 1, g.shape)
    vals[g.boundary_mask()] = 0.0
    return State.from_arrays(g, vals, np.zeros(g.shape))


@settings(max_examples=20)
@given(st.integers(1, 3), st.floats(0.5, 5.0), st.floats(0.5, 2.0), st.floats(0.2, 1.0))
def test_decay_fit_recovers_synthetic(d, mu1, mu2, eps):
    g = Grid(d, 4.0, {1: 401, 2: 81, 3: 33}[d])
    a, b = decay_fit(synthetic(g, mu1, mu2, eps), np.zeros(d), eps, 0.5, 3.0)
    assert a == pytest.approx(mu1, rel=1e-2)
    assert b == pytest.approx(mu2, rel=1e-2)


@pytest.mark.parametrize("seed", range(5))
def test_decay_fit_with_noise(seed):
    g = Grid(2, 4.0, 81)
    a, b = decay_fit(synthetic(g, 2.0, 1.3, 0.5, noise=0.005, seed=seed), np.zeros(2), 0.5, 0.5, 3.0)
    assert a == pytest.approx(2.0, rel=5e-2)
    assert b == pytest.approx(1.3, rel=5e-2)


def test_decay_fit_errors():
    g = Grid(1, 4.0, 101)
    with pytest.raises(ValueError, match="usable nodes"):
        decay_fit(State(g.zeros(), g.zeros()), [0.0], 0.5, 0.5, 3.0)
    with pytest.raises(ValueError):
        decay_fit(synthetic(g, 1, 1, 1), [0.0], 0.5, 2.0, 1.0)


# --- balance identity --------------------------------------------------------


def test_balance_of_constant_potentials_is_zero(limit_1d):
    p = ModelParams(Constant(1.0), Constant(1.5), 0.0, 0.2, 1.0)
    out = balance_residual(limit_1d.state, p, [0.3], 0.2, rescaled=True)
    assert np.array_equal(out, [0.0])


def test_balance_at_the_minimum_is_small(limit_1d):
    V = CappedQuadratic(1.0, 1.0, (0.0,), cap=4.0)
    p = ModelParams(V, V.shifted(0.5), 0.0, 0.1, 1.0)
    assert np.linalg.norm(balance_residual(limit_1d.state, p, [0.0], 0.1, rescaled=True)) <= 1e-10


def test_balance_pinned_off_minimum():
    V = CappedQuadratic(1.0, 1.0, (0.0, 0.0), cap=9.0)
    z = np.array([0.6, -0.3])
    p = ModelParams(V, V.shifted(0.5), 0.0, 0.1, 1.0)
    gs = solve_seed(FrozenParams(float(V(z)), float(V(z)) + 0.5, 0.0), Grid(2, 8.0, 65), SeedSpec("scalar_u"))
    assert np.linalg.norm(V.gradient(z)) > 0.5
    assert np.linalg.norm(balance_residual(gs.state, p, z, 0.1, rescaled=True)) > 0.2


def test_balance_original_frame_matches_rescaled(limit_1d):
    # placing the profile in the x frame by interpolation reproduces the y-frame value
    V = CappedQuadratic(1.0, 1.0, (0.1,), cap=4.0)
    p = ModelParams(V, V.shifted(0.5), 0.0, 0.1, 1.0)
    g = Grid(1, 1.5, 3001)
    s = initial_guess([0.3], 0.1, limit_1d, 1.2, g)
    a = balance_residual(s, p, [0.3], 0.1)
    b = balance_residual(limit_1d.state, p, [0.3], 0.1, rescaled=True)
    assert a == pytest.approx(b, rel=1e-3)


# --- profile distance and verdicts -------------------------------------------


def test_profile_distance_is_swap_invariant(limit_1d):
    g = Grid(1, 2.0, 801)
    s = initial_guess([0.0], 0.1, limit_1d, 1.9, g)
    swapped = State(s.v, s.u)
    assert profile_distance(s, [0.0], 0.1, limit_1d) <= 1e-4
    assert profile_distance(swapped, [0.0], 0.1, limit_1d) <= 1e-4
    assert profile_distance(s, [0.05], 0.1, limit_1d) > 0.1


def row(u, v):
    return ConcentrationRow(eps=0.1, x_eps=np.zeros(1), gap=1.0, u_at_max=u, v_at_max=v, mu1=1, mu2=1,
                            energy_ratio=1, balance=np.zeros(1), profile_distance=0, classification="",
                            status="")


def test_dichotomy_verdict_cases():
    assert dichotomy_verdict([row(2, 0.01), row(2, 0.0)], 1.0, 0.5, 1.0, 1.0) == "ScalarLimit"
    assert dichotomy_verdict([row(1, 1), row(1, 0.9)], 1.0, 2.0, 1.0, 1.0) == "VectorLimit"
    assert dichotomy_verdict([row(1, 0.1), row(1, 0.15)], 1.0, 2.0, 1.0, 1.0) == "Inconclusive"
    assert dichotomy_verdict([row(1, 0.0), row(1, 1.0)], 1.0, 2.0, 1.0, 1.0) == "Inconclusive"
    assert dichotomy_verdict([row(1, 0.0)], 1.0, 0.5, 1.0, 1.0) == "Inconclusive"
    assert dichotomy_verdict([row(1, 0.0), row(1, 0.0)], 1.0, 3.0, 1.0, 16.0) == "Indeterminate"


def test_profile_reference_point_picks_the_deeper_well():
    g = Grid(1, 2.0, 41)
    V = CappedQuadratic(1.0, 1.0, (0.5,), cap=2.0)
    W = CappedQuadratic(0.8, 1.0, (-0.5,), cap=2.0)
    p = ModelParams(V, W, 0.0, 0.3, 0.8)
    assert profile_reference_point(p, g)[0] == pytest.approx(-0.5)


# --- continuation ------------------------------------------------------------


@pytest.fixture(scope="module")
def run_1d():
    g = Grid(1, 3.0, 601)
    z0 = g.axis[345]
    V = CappedQuadratic(1.0, 1.0, (z0,), cap=2.0)
    p = ModelParams(V, V.shifted(0.5), 0.0, 0.5, 1.0)
    sched = EpsSchedule.geometric(0.5, 0.1)
    return g, z0, continuation(p, [z0], sched, g)


def test_continuation_concentrates_at_the_well(run_1d):
    g, z0, rep = run_1d
    assert rep.complete and rep.verdict == "ScalarLimit"
    dist = [abs(r.x_eps[0] - z0) for r in rep.rows]
    # once centred, the peak only moves at the level of the solver tolerance
    assert all(b <= a + 1e-9 for a, b in zip(dist, dist[1:]))
    assert dist[-1] <= 2 * g.spacing
    assert all(r.gap > 0 for r in rep.rows)
    assert rep.rows[-1].energy_ratio <= 1.1
    assert np.linalg.norm(rep.rows[-1].balance) <= 0.05
    assert all(r.mu2 > 0 for r in rep.rows)


def test_continuation_profile_converges(run_1d):
    _, _, rep = run_1d
    pd = [r.profile_distance for r in rep.rows]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(pd, pd[1:]))
    assert pd[-1] <= 0.05 * rep.rows[-1].peak


def test_continuation_csv_layout(run_1d):
    _, _, rep = run_1d
    assert rep.header(1) == ["eps", "x_eps_1", "gap", "u_at_max", "v_at_max", "mu1", "mu2", "energy_ratio",
                             "balance_norm", "profile_distance", "verdict"]
    rows = list(rep.csv_rows())
    assert len(rows) == len(rep.schedule) and all(len(r) == 11 for r in rows)


def test_continuation_rejects_eps_below_floor():
    g = Grid(1, 3.0, 101)
    V = CappedQuadratic(1.0, 1.0, (0.0,), cap=2.0)
    p = ModelParams(V, V.shifted(0.5), 0.0, 0.5, 1.0)
    with pytest.raises(ValueError, match="resolution floor"):
        continuation(p, [0.0], EpsSchedule((0.5, 0.05)), g)


@pytest.mark.slow
@pytest.mark.parametrize("b, verdict", [(0.5, "ScalarLimit"), (2.0, "VectorLimit")])
def test_dichotomy_for_equal_wells_3d(b, verdict):
    g = Grid(3, 0.6, 32)
    c = g.axis[16]
    V = CappedQuadratic(1.0, 1.0, (c, c, c), cap=0.2)
    p = ModelParams(V, V, b, 0.5, 1.0)
    sched = EpsSchedule.geometric(0.5, 1.001 * resolution_floor(p, g))
    rep = continuation(p, [c, c, c], sched, g)
    assert rep.complete and rep.verdict == verdict
    last = rep.rows[-1]
    if verdict == "VectorLimit":
        assert min(last.u_at_max, last.v_at_max) >= 0.2 * math.sqrt(p.alpha)
    else:
        assert min(last.u_at_max, last.v_at_max) < 0.05 * last.peak


def test_failure_refines_then_stops_with_a_partial_report(monkeypatch):
    import cnls.semiclassical as sc

    real = sc.solve_seps
    seen = []

    def flaky(p, init, **kw):
        seen.append(p.eps)
        if p.eps < 0.45:
            raise ConvergenceError("forced")
        return real(p, init, **kw)

    monkeypatch.setattr(sc, "solve_seps", flaky)
    g = Grid(1, 3.0, 601)
    V = CappedQuadratic(1.0, 1.0, (0.0,), cap=2.0)
    p = ModelParams(V, V.shifted(0.5), 0.0, 0.5, 1.0)
    rep = continuation(p, [0.0], EpsSchedule((0.5, 0.3, 0.2)), g, max_refine=2)
    assert not rep.complete and "forced" in rep.failure
    assert [r.eps for r in rep.rows] == [0.5]
    tried = sorted({e for e in seen if e < 0.5}, reverse=True)
    assert tried[0] == pytest.approx(math.sqrt(0.5 * math.sqrt(0.5 * 0.3)))
    assert 0.3 in tried

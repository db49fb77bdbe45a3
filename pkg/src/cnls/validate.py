"""Quick invariant suite behind ``cnls validate``."""

from __future__ import annotations

import json
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Grid, State, read_field, write_field
from .ground_state import (Classification, SeedSpec, SolverOptions, explore_basins, pohozaev_residual,
                           seed_state, system_ground_state)
from .model import FrozenParams, energy_frozen, h_func, local_thresholds, theta_project
from .semiclassical import decay_fit
from .sigma import ReducedCache, SigmaSample, clarke_critical_test, sigma_reduced


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def row(self):
        return [self.name, "pass" if self.passed else "fail", self.detail]


def _thresholds(grid, opts):
    t1 = local_thresholds(1.0, 1.0)
    t2 = local_thresholds(1.0, 16.0)
    ok = (abs(h_func(1.0) - 1) <= 1e-12 and abs(h_func(4.0) - 4.75) <= 1e-12
          and all(abs(a - 1) <= 1e-12 for a in (t1.b_z, t1.b0, t1.b1))
          and all(abs(a - c) <= 1e-12 for a, c in zip((t2.b_z, t2.b0, t2.b1), (2.0, 2.0, 4.75))))
    return ok, f"h(1)={h_func(1.0)!r} h(4)={h_func(4.0)!r} (1,16)->({t2.b_z!r}, {t2.b0!r}, {t2.b1!r})"


def _nehari_and_bound(grid, opts):
    p = FrozenParams(1.0, 1.5, 1.2)
    basins, _ = explore_basins(p, grid, opts=opts)
    gs = basins[0]
    bound = min(energy_frozen(theta_project(seed_state(s, p, grid), p)[1], p)
                for s in (SeedSpec("scalar_u"), SeedSpec("scalar_v"), SeedSpec("symmetric_vector")))
    ok = gs.nehari_residual <= 1e-8 * gs.energy and gs.energy <= bound * (1 + 1e-12)
    return ok, f"energy={gs.energy!r} nehari={gs.nehari_residual:.3e} seed bound={bound!r}"


def _descent(grid, opts):
    p = FrozenParams(1.0, 1.0, 2.0)
    from .system import CubicSystem

    s0 = seed_state(SeedSpec("asymmetric_vector"), p, grid)
    _, _, info = CubicSystem(grid, 1.0, 1.0, 2.0).relax(s0.u.values, s0.v.values, step=opts.flow_step)
    e = np.array(info.energies)
    worst = float(np.max(np.diff(e) / np.abs(e[1:]))) if e.size > 1 else 0.0
    return worst <= 1e-12, f"{e.size} flow energies, largest relative increase {worst:.3e}"


def _scaling(grid, opts):
    p = FrozenParams(1.0, 1.3, 2.0)
    k = 2.0
    e1 = system_ground_state(p, grid, opts=opts).energy
    g2 = Grid(grid.dim, grid.half_width / math.sqrt(k), grid.n)
    e2 = system_ground_state(FrozenParams(k * p.kappa1, k * p.kappa2, p.b), g2, opts=opts).energy
    rel = abs(e2 - k ** ((4 - grid.dim) / 2) * e1) / abs(e2)
    return rel <= 1e-4, f"relative deviation {rel:.3e} at kappa=2 (co-scaled grid)"


def _survivor(grid, opts):
    gs = system_ground_state(FrozenParams(1.0, 2.0, 0.3), grid, opts=opts)
    ok = gs.classification is Classification.SCALAR_U
    return ok, f"classification {gs.classification} for kappa1 < kappa2, b=0.3"


def _pohozaev(grid, opts):
    p = FrozenParams(1.0, 1.0, 2.0)
    gs = system_ground_state(p, grid, opts=opts)
    r = pohozaev_residual(gs.state, p)
    rng = np.random.default_rng(0)
    junk = rng.random(grid.shape)
    junk[grid.boundary_mask()] = 0.0
    r_junk = pohozaev_residual(State.from_arrays(grid, junk, junk), p)
    ok = r <= 1e-2 and r_junk > 0.1
    return ok, f"solution {r:.3e}, random state {r_junk:.3e}"


def _swap(grid, opts):
    cache = ReducedCache(grid, opts=opts)
    a = sigma_reduced(FrozenParams(1.0, 1.7, 0.4), cache)
    b = sigma_reduced(FrozenParams(1.7, 1.0, 0.4), cache)
    return a == b, f"{a!r} vs {b!r}"


def _clarke(grid, opts):
    g = np.array([0.3, -0.1, 0.2])[: grid.dim]
    crit = clarke_critical_test(SigmaSample(z=np.zeros(grid.dim), kappa1=1, kappa2=1, sigma=1,
                                            gradient_candidates=[g, -g])).critical
    one = clarke_critical_test(SigmaSample(z=np.zeros(grid.dim), kappa1=1, kappa2=1, sigma=1,
                                           gradient_candidates=[g]))
    ok = crit and not one.critical and abs(one.hull_margin - np.linalg.norm(g)) <= 1e-14
    return ok, f"{{g,-g}} critical={crit}; {{g}} margin={one.hull_margin!r}"


def _decay(grid, opts):
    mu1, mu2, eps = 2.0, 1.3, 0.5
    r = grid.radius()
    vals = mu1 * np.exp(-mu2 * r / eps)
    vals[grid.boundary_mask()] = 0.0
    s = State.from_arrays(grid, vals, np.zeros(grid.shape))
    a, b = decay_fit(s, np.zeros(grid.dim), eps, 0.2 * grid.half_width, 0.8 * grid.half_width)
    ok = abs(a / mu1 - 1) <= 1e-2 and abs(b / mu2 - 1) <= 1e-2
    return ok, f"recovered ({a!r}, {b!r}) from ({mu1}, {mu2})"


def _binary(grid, opts):
    s = seed_state(SeedSpec("scalar_u"), FrozenParams(1.0, 1.0, 0.0), grid)
    with tempfile.TemporaryDirectory() as tmp:
        f = read_field(write_field(Path(tmp) / "u.bin", s.u))
    ok = f.grid == grid and np.array_equal(f.values, s.u.values)
    return ok, "field binary round trip"


def _config(grid, opts):
    from .config import parse_config

    text = json.dumps({"command": "ground-state", "grid": grid.to_dict(),
                       "params": {"kappa1": 1.0, "kappa2": 2.0, "b": 0.5}})
    a = parse_config(text)
    b = parse_config(json.dumps(a.to_dict()))
    return a == b and a.to_dict() == b.to_dict(), "parse -> echo -> parse"


CHECKS = {
    "threshold_arithmetic": _thresholds,
    "nehari_and_seed_bound": _nehari_and_bound,
    "flow_descent": _descent,
    "scaling_law": _scaling,
    "scalar_survivor": _survivor,
    "pohozaev_identity": _pohozaev,
    "sigma_swap_symmetry": _swap,
    "clarke_toy_cases": _clarke,
    "decay_fit_synthetic": _decay,
    "field_binary_roundtrip": _binary,
    "config_roundtrip": _config,
}


def run_validation(grid: Grid, opts: SolverOptions | None = None, executor=None) -> list[Check]:
    opts = opts or SolverOptions()

    def one(item):
        name, fn = item
        try:
            ok, detail = fn(grid, opts)
        except Exception as exc:  # a crash is a failed property, not a crashed suite
            return Check(name, False, f"{type(exc).__name__}: {exc}")
        return Check(name, bool(ok), detail)

    items = list(CHECKS.items())
    return list(executor.map(one, items)) if executor is not None else [one(i) for i in items]

"""Least-energy solutions of the constant-coefficient system and their classification."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.special import kve

from .grid import Field, Grid, State, grad_sq_array, quad, write_field
from .model import FrozenParams, energy_frozen, nehari_value, residual
from .system import CollapseError, ConvergenceError, CubicSystem


class Classification(str, enum.Enum):
    SCALAR_U = "ScalarU"
    SCALAR_V = "ScalarV"
    VECTOR = "Vector"

    @property
    def is_scalar(self) -> bool:
        return self is not Classification.VECTOR

    def __str__(self):
        return self.value


# --- the scalar profile U0 ---------------------------------------------------


class RadialProfile:
    """Positive radial solution of ``-Lap U + U = U^3`` in dimension d.

    Found by shooting on ``U(0)`` with bisection; beyond the radius where the
    two bracketing trajectories separate, the linear tail
    ``A r^{-(d-2)/2} K_{(d-2)/2}(r)`` is matched continuously.
    """

    def __init__(self, dim: int, r_max: float = 40.0, tol: float = 1e-15):
        self.dim = dim
        lo, hi = 1.0 + 1e-9, 12.0
        if not (self._shoot(lo)[0] == "low" and self._shoot(hi)[0] == "high"):
            raise ConvergenceError("could not bracket the shooting parameter for U0")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi) or hi - lo <= tol * hi:
                break
            if self._shoot(mid)[0] == "low":
                lo = mid
            else:
                hi = mid
        self.peak = 0.5 * (lo + hi)
        sol_lo = self._shoot(lo)[1]
        sol_hi = self._shoot(hi)[1]
        r_end = min(sol_lo.t[-1], sol_hi.t[-1])
        rs = np.linspace(0.0, r_end, int(r_end / 1e-3) + 1)
        ul = sol_lo.sol(np.maximum(rs, self._r0))[0]
        uh = sol_hi.sol(np.maximum(rs, self._r0))[0]
        mid_u = 0.5 * (ul + uh)
        bad = np.nonzero((np.abs(ul - uh) > 1e-6 * np.abs(mid_u)) | (mid_u <= 0))[0]
        k_match = bad[0] - 1 if bad.size else rs.size - 1
        if k_match < 10:
            raise ConvergenceError("shooting trajectories separate too early")
        self.r_match = float(rs[k_match])
        rs = rs[: k_match + 1]
        self._spline = CubicSpline(rs, mid_u[: k_match + 1], bc_type=((1, 0.0), "not-a-knot"))
        self._nu = (dim - 2) / 2.0
        self._amp = float(mid_u[k_match]) / self._tail_shape(self.r_match)
        self.r_max = r_max

    _r0 = 1e-6

    def _tail_shape(self, r):
        r = np.asarray(r, dtype=float)
        # kve is exponentially scaled: K_nu(r) = kve(nu, r) * exp(-r)
        return r ** (-self._nu) * kve(abs(self._nu), r) * np.exp(-r)

    def _shoot(self, a: float):
        d = self.dim
        r0 = self._r0
        c = (a - a**3) / (2.0 * d)
        y0 = [a + c * r0 * r0, 2.0 * c * r0]

        def rhs(r, y):
            return [y[1], -(d - 1) / r * y[1] + y[0] - y[0] ** 3]

        def crossed(r, y):
            return y[0]

        def turned(r, y):
            return y[1] if r > 10 * r0 else -1.0

        crossed.terminal = True
        crossed.direction = -1
        turned.terminal = True
        turned.direction = 1
        sol = solve_ivp(rhs, (r0, 60.0), y0, method="DOP853", rtol=1e-13, atol=1e-16,
                        events=(crossed, turned), dense_output=True)
        if sol.t_events[0].size:
            return "high", sol
        if sol.t_events[1].size:
            return "low", sol
        # neither event before r=60 only happens at (numerically) exact shooting
        return ("low" if sol.y[1, -1] >= 0 else "high"), sol

    def __call__(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        near = r <= self.r_match
        out[near] = self._spline(r[near])
        far = ~near
        if np.any(far):
            out[far] = self._amp * self._tail_shape(r[far])
        return out


@lru_cache(maxsize=None)
def reference_profile(dim: int) -> RadialProfile:
    return RadialProfile(dim)


@lru_cache(maxsize=64)
def _scalar_values(kappa: float, grid: Grid) -> np.ndarray:
    prof = reference_profile(grid.dim)
    s = math.sqrt(kappa)
    vals = s * prof(s * grid.radius())
    vals[grid.boundary_mask()] = 0.0
    vals.flags.writeable = False
    return vals


def scalar_ground_state(kappa: float, grid: Grid) -> Field:
    """``sqrt(kappa) U0(sqrt(kappa) |x|)`` sampled on the grid, centred at the origin."""
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    return Field(grid, _scalar_values(float(kappa), grid))


# --- seeds and results -------------------------------------------------------

SEED_KINDS = ("scalar_u", "scalar_v", "symmetric_vector", "asymmetric_vector")


@dataclass(frozen=True)
class SeedSpec:
    kind: str
    amplitude: float = 1.0
    ratio: float = 2.0

    def __post_init__(self):
        if self.kind not in SEED_KINDS:
            raise ValueError(f"unknown seed kind {self.kind!r}; expected one of {', '.join(SEED_KINDS)}")
        if not self.amplitude > 0:
            raise ValueError("seed amplitude must be positive")
        if self.kind == "asymmetric_vector" and not self.ratio > 0:
            raise ValueError("asymmetric seed ratio must be positive")

    @property
    def seed_id(self) -> str:
        return f"{self.kind}:{self.ratio:g}" if self.kind == "asymmetric_vector" else self.kind

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "amplitude": self.amplitude}
        if self.kind == "asymmetric_vector":
            d["ratio"] = self.ratio
        return d


DEFAULT_SEEDS = (
    SeedSpec("scalar_u"),
    SeedSpec("scalar_v"),
    SeedSpec("symmetric_vector"),
    SeedSpec("asymmetric_vector", ratio=2.0),
)


@dataclass(frozen=True)
class SolverOptions:
    flow_step: float = 1.0
    flow_rtol: float = 1e-10
    flow_maxiter: int = 20000
    newton_maxiter: int = 30
    newton_inner_rtol: float = 1e-3
    residual_factor: float = 1e-9
    classification_tol: float = 1e-4
    negativity_tol: float = 1e-10

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class GroundState:
    state: State
    energy: float
    nehari_residual: float
    el_residual: float
    classification: Classification
    sup_u: float
    sup_v: float
    seed_id: str
    params: FrozenParams | None = None
    flow_iterations: int = 0
    newton_iterations: int = 0
    energy_trace: list = field(default_factory=list, repr=False)
    candidates: list = field(default_factory=list, repr=False)

    def norms(self) -> tuple[float, float]:
        h = self.state.grid.cell_volume
        return (float(np.sum(self.state.u.values**2)) * h, float(np.sum(self.state.v.values**2)) * h)

    def summary(self) -> dict:
        return {
            "energy": self.energy,
            "nehari_residual": self.nehari_residual,
            "el_residual": self.el_residual,
            "classification": str(self.classification),
            "sup_u": self.sup_u,
            "sup_v": self.sup_v,
            "seed_id": self.seed_id,
        }

    def save(self, directory, stem: str = "ground_state") -> list[Path]:
        directory = Path(directory)
        paths = [write_field(directory / f"{stem}_u.bin", self.state.u),
                 write_field(directory / f"{stem}_v.bin", self.state.v)]
        side = directory / f"{stem}.json"
        side.write_text(json.dumps(self.summary(), indent=2))
        return paths + [side]


def classify_state(s: State, tol: float = 1e-4) -> Classification:
    su, sv = s.u.sup(), s.v.sup()
    top = max(su, sv)
    if top == 0.0:
        raise ValueError("cannot classify the zero state")
    if sv <= tol * top:
        return Classification.SCALAR_U
    if su <= tol * top:
        return Classification.SCALAR_V
    return Classification.VECTOR


def pohozaev_residual(s: State, p: FrozenParams) -> float:
    """Violation of the Pohozaev identity for the autonomous system, relative
    to the size of the energy terms."""
    g = s.grid
    d = g.dim
    h = g.spacing
    u, v = s.u.values, s.v.values
    kin = grad_sq_array(u, h) + grad_sq_array(v, h)
    mass = p.kappa1 * quad(u * u, h) + p.kappa2 * quad(v * v, h)
    u2, v2 = u * u, v * v
    F = 0.25 * quad(u2 * u2 + 2.0 * p.b * u2 * v2 + v2 * v2, h)
    value = 0.5 * (d - 2) * kin + 0.5 * d * mass - d * F
    scale = 0.5 * (kin + mass) + F
    if scale == 0.0:
        return 0.0
    return abs(value) / scale


# --- solving -----------------------------------------------------------------


def seed_state(seed: SeedSpec, p: FrozenParams, grid: Grid) -> State:
    a = seed.amplitude
    phi1 = scalar_ground_state(p.kappa1, grid).values
    phi2 = scalar_ground_state(p.kappa2, grid).values
    zero = np.zeros(grid.shape)
    if seed.kind == "scalar_u":
        u, v = a * phi1, zero
    elif seed.kind == "scalar_v":
        u, v = zero, a * phi2
    else:
        c = a / math.sqrt(1.0 + p.b)
        r = seed.ratio if seed.kind == "asymmetric_vector" else 1.0
        u, v = c * r * phi1, c * phi2
    return State.from_arrays(grid, u, v)


def _finish(system: CubicSystem, u, v, p: FrozenParams, opts: SolverOptions, seed_id: str) -> GroundState:
    lowest = min(float(np.min(u)), float(np.min(v)))
    if lowest < -opts.negativity_tol:
        raise ConvergenceError(f"seed {seed_id}: converged state has negative values down to {lowest:.3e}")
    u = np.maximum(u, 0.0)
    v = np.maximum(v, 0.0)
    if not (np.any(u) or np.any(v)):
        raise CollapseError(f"seed {seed_id} converged to the zero state")
    s = State.from_arrays(system.grid, u, v)
    r = residual(s, p)
    el = max(r.u.sup(), r.v.sup())
    return GroundState(
        state=s,
        energy=energy_frozen(s, p),
        nehari_residual=abs(nehari_value(s, p)),
        el_residual=el,
        classification=classify_state(s, opts.classification_tol),
        sup_u=s.u.sup(),
        sup_v=s.v.sup(),
        seed_id=seed_id,
        params=p,
    )


def solve_seed(p: FrozenParams, grid: Grid, seed: SeedSpec, opts: SolverOptions | None = None) -> GroundState:
    """Relax one seed on the Nehari manifold, then Newton-polish it."""
    opts = opts or SolverOptions()
    system = CubicSystem(grid, p.kappa1, p.kappa2, p.b)
    s0 = seed_state(seed, p, grid)
    u, v, flow = system.relax(s0.u.values, s0.v.values, step=opts.flow_step, rtol=opts.flow_rtol,
                              maxiter=opts.flow_maxiter)
    tol = opts.residual_factor * (p.kappa1 + p.kappa2)
    u, v, newton = system.newton(u, v, tol, maxiter=opts.newton_maxiter, inner_rtol=opts.newton_inner_rtol)
    gs = _finish(system, u, v, p, opts, seed.seed_id)
    gs.flow_iterations = flow.iterations
    gs.newton_iterations = newton.iterations
    gs.energy_trace = flow.energies
    return gs


def _same_basin(a: GroundState, b: GroundState, rtol=1e-6) -> bool:
    scale = max(abs(a.energy), 1e-300)
    top = max(a.sup_u, a.sup_v, b.sup_u, b.sup_v)
    return (abs(a.energy - b.energy) <= rtol * scale
            and abs(a.sup_u - b.sup_u) <= rtol * top
            and abs(a.sup_v - b.sup_v) <= rtol * top)


def _attempt(p, grid, seed, opts):
    try:
        return solve_seed(p, grid, seed, opts)
    except CollapseError:
        raise
    except ConvergenceError as exc:
        return exc


def explore_basins(p: FrozenParams, grid: Grid, seeds=DEFAULT_SEEDS, opts: SolverOptions | None = None,
                   executor=None):
    """Converge every seed; return (distinct basins sorted by energy, failures).

    Seeds may be solved concurrently through ``executor``; results are merged
    in seed order, so the outcome does not depend on scheduling.
    """
    if not seeds:
        raise ValueError("seed list must not be empty")
    if executor is None:
        outcomes = [_attempt(p, grid, s, opts) for s in seeds]
    else:
        outcomes = list(executor.map(lambda s: _attempt(p, grid, s, opts), seeds))
    found: list[GroundState] = []
    failures: dict[str, str] = {}
    for seed, gs in zip(seeds, outcomes):
        if isinstance(gs, ConvergenceError):
            failures[seed.seed_id] = str(gs)
            continue
        if not any(_same_basin(gs, other) for other in found):
            found.append(gs)
    if not found:
        raise ConvergenceError(f"no seed converged for {p}: {failures}")
    # near-ties (equal up to rounding) resolve by seed order
    e0 = min(g.energy for g in found)
    tied = [g for g in found if g.energy - e0 <= 1e-12 * abs(e0)]
    rest = sorted((g for g in found if g not in tied), key=lambda g: g.energy)
    return tied + rest, failures


def system_ground_state(p: FrozenParams, grid: Grid, seeds=DEFAULT_SEEDS,
                        opts: SolverOptions | None = None, executor=None) -> GroundState:
    basins, _ = explore_basins(p, grid, seeds, opts, executor)
    best = basins[0]
    return replace(best, candidates=basins)


def least_energy_set(gs: GroundState, rtol: float = 1e-7) -> list[GroundState]:
    """Basins whose energy ties with the minimum (the sampled ground-state set)."""
    basins = gs.candidates or [gs]
    e0 = basins[0].energy
    return [b for b in basins if b.energy - e0 <= rtol * abs(e0)]

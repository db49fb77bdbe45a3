"""Small-eps solves of the full system by continuation, and the diagnostics
of concentration: location and uniqueness of the peak, decay rate, energy
ratio, the balance identity and convergence of the rescaled profile."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import Grid, State, global_max, quad
from .ground_state import (DEFAULT_SEEDS, GroundState, SolverOptions, classify_state, solve_seed,
                           system_ground_state)
from .model import FrozenParams, ModelParams, energy_eps, local_thresholds
from .system import CollapseError, ConvergenceError, CubicSystem


@dataclass(frozen=True)
class EpsSchedule:
    values: tuple

    def __post_init__(self):
        vals = tuple(float(e) for e in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise ValueError("eps schedule must not be empty")
        if any(not e > 0 for e in vals):
            raise ValueError("eps values must be positive")
        if vals[0] > 1:
            raise ValueError(f"first eps must be <= 1, got {vals[0]}")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("eps schedule must be strictly decreasing")

    @classmethod
    def geometric(cls, start: float, stop: float, ratio: float = 0.8) -> "EpsSchedule":
        """``start * ratio**k`` while above ``stop``, then ``stop`` itself."""
        if not 0 < ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        if not 0 < stop <= start:
            raise ValueError("need 0 < stop <= start")
        if stop == start:
            return cls((start,))
        vals = [start]
        e = start * ratio
        while e > stop * (1 + 1e-12):
            vals.append(e)
            e *= ratio
        vals.append(stop)
        return cls(tuple(vals))

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    @property
    def smallest(self) -> float:
        return self.values[-1]


def resolution_floor(p: ModelParams, g: Grid) -> float:
    """Smallest eps keeping four nodes per decay length of either component."""
    top = max(float(np.max(p.V.on_grid(g))), float(np.max(p.W.on_grid(g))))
    return 4.0 * g.spacing * math.sqrt(top)


def check_schedule(p: ModelParams, sched: EpsSchedule, g: Grid) -> None:
    floor = resolution_floor(p, g)
    if sched.smallest < floor:
        raise ValueError(f"eps={sched.smallest} is below the resolution floor 4*h*sqrt(sup V, W)={floor:.6g}")


# --- building blocks ---------------------------------------------------------


def _smoothstep_cutoff(r: np.ndarray, r_cut: float) -> np.ndarray:
    t = np.clip((r - 0.5 * r_cut) / (0.5 * r_cut), 0.0, 1.0)
    return 1.0 - t * t * (3.0 - 2.0 * t)


def sample_profile(values: np.ndarray, src: Grid, y: np.ndarray) -> np.ndarray:
    """Cubic interpolation of nodal ``values`` at points ``y`` (shape (..., d)); zero outside."""
    idx = (y - src.axis[0]) / src.spacing
    coords = np.moveaxis(idx, -1, 0)
    return ndimage.map_coordinates(values, coords, order=3, mode="constant", cval=0.0, prefilter=True)


def initial_guess(z, eps: float, limit_gs: GroundState, r_cut: float, g: Grid) -> State:
    """``eta(x) * (phi, psi)((x - z) / eps)`` with a C^1 smoothstep cutoff eta."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    z = np.asarray(z, float).reshape(g.dim)
    room = float(np.min(g.half_width - np.abs(z)))
    if not 0 < r_cut <= room:
        raise ValueError(f"cutoff radius {r_cut} exceeds the distance {room:.6g} from z to the box boundary")
    x = np.stack(g.mesh(), axis=-1)
    y = (x - z) / eps
    eta = _smoothstep_cutoff(np.linalg.norm(x - z, axis=-1), r_cut)
    src = limit_gs.state.grid
    u = eta * np.maximum(sample_profile(limit_gs.state.u.values, src, y), 0.0)
    v = eta * np.maximum(sample_profile(limit_gs.state.v.values, src, y), 0.0)
    bnd = g.boundary_mask()
    u[bnd] = 0.0
    v[bnd] = 0.0
    return State.from_arrays(g, u, v)


def solve_seps(p: ModelParams, init: State, relax: bool = False, opts: SolverOptions | None = None,
               newton_maxiter: int = 40, return_info: bool = False):
    """Newton-Krylov on the full residual, optionally after a projected flow.

    Returns the solved State, or ``(State, NewtonInfo)`` with ``return_info``.
    """
    opts = opts or SolverOptions()
    g = init.grid
    if init.is_zero():
        raise ValueError("initial state is identically zero")
    system = CubicSystem(g, p.V.on_grid(g), p.W.on_grid(g), p.b, p.eps)
    u, v = init.u.values, init.v.values
    if relax:
        u, v, _ = system.relax(u, v, step=opts.flow_step, rtol=1e-8, maxiter=opts.flow_maxiter)
    u, v, info = system.newton(u, v, 1e-9 * p.alpha, maxiter=newton_maxiter, inner_rtol=opts.newton_inner_rtol)
    lowest = min(float(np.min(u)), float(np.min(v)))
    if lowest < -opts.negativity_tol:
        raise ConvergenceError(f"solution at eps={p.eps} has negative values down to {lowest:.3e}")
    u, v = np.maximum(u, 0.0), np.maximum(v, 0.0)
    if not (np.any(u) or np.any(v)):
        raise CollapseError(f"solve at eps={p.eps} collapsed to the zero state")
    out = State.from_arrays(g, u, v)
    return (out, info) if return_info else out


def decay_fit(s: State, x_center, eps: float, inner_r: float, outer_r: float) -> tuple[float, float]:
    """Fit ``u + v ~ mu1 * exp(-mu2 |x - x_center| / eps)`` on an annulus."""
    if not 0 <= inner_r < outer_r:
        raise ValueError("annulus needs 0 <= inner_r < outer_r")
    g = s.grid
    r = g.radius(x_center)
    w = s.u.values + s.v.values
    mask = (r >= inner_r) & (r <= outer_r) & (w > 1e-12) & ~g.boundary_mask()
    if int(mask.sum()) < 10:
        raise ValueError(f"only {int(mask.sum())} usable nodes in the annulus [{inner_r}, {outer_r}]; need 10")
    slope, intercept = np.polyfit(r[mask] / eps, np.log(w[mask]), 1)
    return float(math.exp(intercept)), float(-slope)


def balance_residual(s: State, p: ModelParams, z, eps: float, rescaled: bool = False) -> np.ndarray:
    """Normalised ``int (dV(z + eps y) phi^2 + dW(z + eps y) psi^2) dy``.

    With ``rescaled=False`` the state lives in the original frame, and the
    change of variables ``x = z + eps y`` cancels against the normalisation.
    With ``rescaled=True`` the state is a profile in ``y``.
    """
    g = s.grid
    z = np.asarray(z, float).reshape(g.dim)
    x = g.points()
    if rescaled:
        x = z + eps * x
    gv = p.V.gradient(x).reshape(g.shape + (g.dim,))
    gw = p.W.gradient(x).reshape(g.shape + (g.dim,))
    u2, v2 = s.u.values ** 2, s.v.values ** 2
    h = g.spacing
    mass = quad(u2 + v2, h)
    if mass == 0.0:
        raise ValueError("balance residual of the zero state")
    raw = np.array([quad(gv[..., j] * u2 + gw[..., j] * v2, h) for j in range(g.dim)])
    if not (np.any(gv) or np.any(gw)):
        return np.zeros(g.dim)
    floor = (quad(np.linalg.norm(gv, axis=-1) * u2, h) + quad(np.linalg.norm(gw, axis=-1) * v2, h)) / mass
    scale = max(float(np.linalg.norm(p.V.gradient(z))), float(np.linalg.norm(p.W.gradient(z))), floor)
    return raw / (mass * scale)


def profile_distance(s: State, x_center, eps: float, ref: GroundState) -> float:
    """Max-norm distance between ``s`` and ``ref`` placed at ``x_center`` at scale eps.

    Both component orders are tried; the smaller distance is returned.
    """
    g = s.grid
    y = (np.stack(g.mesh(), axis=-1) - np.asarray(x_center, float)) / eps
    src = ref.state.grid
    phi = sample_profile(ref.state.u.values, src, y)
    psi = sample_profile(ref.state.v.values, src, y)
    u, v = s.u.values, s.v.values
    direct = max(np.max(np.abs(u - phi)), np.max(np.abs(v - psi)))
    swapped = max(np.max(np.abs(u - psi)), np.max(np.abs(v - phi)))
    return float(min(direct, swapped))


# --- continuation ------------------------------------------------------------

VANISH_FRACTION = 0.05
SURVIVE_FACTOR = 0.2


@dataclass
class ConcentrationRow:
    eps: float
    x_eps: np.ndarray
    gap: float
    u_at_max: float
    v_at_max: float
    mu1: float
    mu2: float
    energy_ratio: float
    balance: np.ndarray
    profile_distance: float
    classification: str
    status: str
    others: tuple = ()

    @property
    def balance_norm(self) -> float:
        return float(np.linalg.norm(self.balance))

    @property
    def peak(self) -> float:
        return self.u_at_max + self.v_at_max


@dataclass
class ConcentrationReport:
    rows: list = field(default_factory=list)
    z_ref: np.ndarray | None = None
    z_profile: np.ndarray | None = None
    sigma_ref: float = float("nan")
    verdict: str = "Inconclusive"
    failure: str | None = None
    schedule: tuple = ()
    final_state: State | None = field(default=None, repr=False)

    @property
    def complete(self) -> bool:
        return self.failure is None

    def header(self, dim: int) -> list[str]:
        return (["eps"] + [f"x_eps_{i + 1}" for i in range(dim)]
                + ["gap", "u_at_max", "v_at_max", "mu1", "mu2", "energy_ratio", "balance_norm",
                   "profile_distance", "verdict"])

    def csv_rows(self):
        for r in self.rows:
            yield [r.eps, *(float(c) for c in r.x_eps), r.gap, r.u_at_max, r.v_at_max, r.mu1, r.mu2,
                   r.energy_ratio, r.balance_norm, r.profile_distance, r.status]


def _row_status(u_max: float, v_max: float, alpha: float) -> str:
    top = max(u_max, v_max)
    if min(u_max, v_max) < VANISH_FRACTION * top:
        return "ScalarLimit"
    if min(u_max, v_max) >= SURVIVE_FACTOR * math.sqrt(alpha):
        return "VectorLimit"
    return "Inconclusive"


def dichotomy_verdict(rows, alpha: float, b: float, kappa1: float, kappa2: float) -> str:
    th = local_thresholds(kappa1, kappa2)
    if th.b0 < b < th.b1:
        return "Indeterminate"
    if len(rows) < 2:
        return "Inconclusive"
    last = [_row_status(r.u_at_max, r.v_at_max, alpha) for r in rows[-2:]]
    return last[0] if last[0] == last[1] else "Inconclusive"


def profile_reference_point(p: ModelParams, g: Grid, cache=None) -> np.ndarray:
    """Grid node minimising Sigma; with b = 0 the minimiser of min(V, W)."""
    pts = g.points()
    if p.b == 0 or cache is None:
        return pts[int(np.argmin(np.minimum(p.V(pts), p.W(pts))))]
    from .sigma import sigma_nodes

    return pts[int(np.argmin(sigma_nodes(p.V(pts), p.W(pts), p.b, cache)))]


def matched_reference_grid(g: Grid, eps: float) -> Grid:
    """Profile grid whose spacing is ``h / eps`` and which has a node at the origin,
    so that at this eps the run nodes map onto reference nodes."""
    n = g.n if g.n % 2 else g.n + 1
    return Grid(g.dim, 0.5 * (n - 1) * g.spacing / eps, n)


def _decay_window(eps: float, g: Grid, centre) -> tuple[float, float]:
    room = float(np.min(g.half_width - np.abs(np.asarray(centre, float))))
    outer = min(5.0 * eps, room - g.spacing)
    return min(2.0 * eps, 0.5 * outer), outer


def continuation(p: ModelParams, z_ref, sched: EpsSchedule, g: Grid, ref_grid: Grid | None = None,
                 opts: SolverOptions | None = None, cache=None, r_cut: float | None = None,
                 max_refine: int = 4, matched_profiles: bool = True, seeds=DEFAULT_SEEDS,
                 progress=None) -> ConcentrationReport:
    """Warm-started solves along the schedule with per-eps diagnostics.

    The limit profile is the frozen ground state at the Sigma minimiser,
    computed on ``ref_grid`` (default: ``matched_reference_grid`` at the
    smallest eps). With ``matched_profiles`` the profile distance at each eps
    is taken against the same frozen state re-solved on the grid matched to
    that eps, so that only the approach to the limit is measured and not the
    change of resolution ``h / eps`` along the schedule.
    """
    check_schedule(p, sched, g)
    opts = opts or SolverOptions()
    z_ref = np.asarray(z_ref, float).reshape(g.dim)
    if ref_grid is None:
        ref_grid = matched_reference_grid(g, sched.smallest)
    if cache is None and p.b != 0:
        from .sigma import ReducedCache

        cache = ReducedCache(ref_grid, opts=opts)
    z_prof = profile_reference_point(p, g, cache)
    frozen_prof = FrozenParams(p.V(z_prof), p.W(z_prof), p.b)
    limit = system_ground_state(frozen_prof, ref_grid, seeds, opts=opts)
    if np.allclose(z_prof, z_ref):
        sigma_ref = limit.energy
    else:
        sigma_ref = system_ground_state(FrozenParams(p.V(z_ref), p.W(z_ref), p.b), ref_grid, seeds, opts=opts).energy
    report = ConcentrationReport(z_ref=z_ref, z_profile=z_prof, sigma_ref=sigma_ref, schedule=sched.values)
    if r_cut is None:
        r_cut = float(np.min(g.half_width - np.abs(z_prof))) - g.spacing

    pending = list(sched.values)
    state = None
    last_eps = None
    depth = 0
    while pending:
        eps = pending[0]
        pe = ModelParams(p.V, p.W, p.b, eps, p.alpha)
        try:
            if state is None:
                init = initial_guess(z_prof, eps, limit, r_cut, g)
                new = solve_seps(pe, init, relax=True, opts=opts)
            else:
                try:
                    new = solve_seps(pe, state, opts=opts)
                except CollapseError:
                    raise
                except ConvergenceError:
                    new = solve_seps(pe, state, relax=True, opts=opts)
        except ConvergenceError as exc:
            if state is not None and depth < max_refine:
                pending.insert(0, math.sqrt(eps * last_eps))
                depth += 1
                continue
            report.failure = f"eps={eps}: {exc}"
            break
        depth = 0
        pending.pop(0)
        state, last_eps = new, eps
        prof = limit
        if matched_profiles and not np.isclose(eps, sched.smallest, rtol=1e-12, atol=0.0):
            seed = next(sd for sd in seeds if sd.seed_id == limit.seed_id)
            prof = solve_seed(frozen_prof, matched_reference_grid(g, eps), seed, opts)
        report.rows.append(_diagnose(new, pe, eps, report.sigma_ref, prof, g))
        if progress is not None:
            progress(report.rows[-1])
    k1, k2 = p.V(z_prof), p.W(z_prof)
    report.verdict = dichotomy_verdict(report.rows, p.alpha, p.b, k1, k2)
    report.final_state = state
    return report


def _diagnose(s: State, p: ModelParams, eps: float, sigma_ref: float, limit: GroundState, g: Grid):
    total = State.from_arrays(g, s.u.values + s.v.values, np.zeros(g.shape)).u
    mx = global_max(total)
    i = mx.index
    u_at, v_at = float(s.u.values[i]), float(s.v.values[i])
    inner, outer = _decay_window(eps, g, mx.point)
    try:
        mu1, mu2 = decay_fit(s, mx.point, eps, inner, outer)
    except ValueError:
        mu1 = mu2 = float("nan")
    ratio = energy_eps(s, p) / (eps**g.dim * sigma_ref)
    bal = balance_residual(s, p, mx.point, eps)
    dist = profile_distance(s, mx.point, eps, limit)
    return ConcentrationRow(
        eps=eps, x_eps=mx.point, gap=mx.gap, u_at_max=u_at, v_at_max=v_at, mu1=mu1, mu2=mu2,
        energy_ratio=ratio, balance=bal, profile_distance=dist,
        classification=str(classify_state(s)), status=_row_status(u_at, v_at, p.alpha), others=mx.others,
    )


__all__ = [
    "ConcentrationReport", "ConcentrationRow", "EpsSchedule", "balance_residual", "check_schedule",
    "continuation", "decay_fit", "dichotomy_verdict", "initial_guess", "profile_distance",
    "matched_reference_grid", "profile_reference_point", "resolution_floor", "solve_seps",
]

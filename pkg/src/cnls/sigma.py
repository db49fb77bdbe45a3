"""The ground energy landscape: least energy of the frozen system as a
function of position, its scaling reduction, one-sided derivatives and a
Clarke-criticality certificate over the sampled ground states."""

from __future__ import annotations

import bisect
import itertools
import json
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .grid import Grid
from .ground_state import (Classification, SeedSpec, SolverOptions, least_energy_set, solve_seed,
                           system_ground_state)
from .model import FrozenParams, Potential

DEFAULT_OMEGA2_KNOTS = tuple(round(0.1 * k, 10) for k in range(1, 11))


def sigma_frozen(p: FrozenParams, g: Grid, opts: SolverOptions | None = None) -> float:
    return system_ground_state(p, g, opts=opts).energy


class CacheMiss(KeyError):
    pass


@dataclass(frozen=True)
class ReducedEntry:
    """Least energy of the reduced system (kappa1, kappa2) = (1, omega2), with
    the squared L2 norms of each sampled least-energy state."""

    omega2: float
    b: float
    energy: float
    norms: tuple
    classes: tuple

    def to_dict(self):
        return {"omega2": self.omega2, "b": self.b, "energy": self.energy,
                "norms": [list(n) for n in self.norms], "classes": list(self.classes)}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["omega2"]), float(d["b"]), float(d["energy"]),
                   tuple(tuple(float(x) for x in n) for n in d["norms"]), tuple(d["classes"]))


def default_cache_dir() -> Path:
    env = os.environ.get("CNLS_CACHE_DIR")
    return Path(env) if env else Path.home() / ".cache" / "cnls"


class ReducedCache:
    """Solves of the reduced system keyed by (omega2, b) on a reference grid.

    Off-knot lookups interpolate ``log c`` bilinearly in ``(log omega2, b)``;
    on the scalar branch ``c = Gamma * omega2**((4-d)/2)`` this is exact.
    """

    def __init__(self, grid: Grid, omega2_knots=DEFAULT_OMEGA2_KNOTS, b_knots=(), interpolate=True,
                 solve_missing=True, opts: SolverOptions | None = None, path: Path | None = None,
                 refine_tol: float | None = 1e-4, min_width: float = 1e-3):
        self.grid = grid
        self.omega2_knots = tuple(sorted(float(w) for w in omega2_knots))
        self.b_knots = tuple(sorted(float(b) for b in b_knots))
        self.interpolate = interpolate
        self.solve_missing = solve_missing
        self.opts = opts or SolverOptions()
        self.path = Path(path) if path is not None else None
        self._entries: dict[tuple[float, float], ReducedEntry] = {}
        self._gamma: float | None = None
        self._knots: dict[float, list] = {}
        self._verified: set = set()
        self.refine_tol = refine_tol
        self.min_width = min_width
        self._lock = threading.RLock()
        if self.path is not None and self.path.exists():
            self._load()

    @classmethod
    def on_disk(cls, grid: Grid, directory=None, **kw) -> "ReducedCache":
        directory = Path(directory) if directory is not None else default_cache_dir()
        directory.mkdir(parents=True, exist_ok=True)
        return cls(grid, path=directory / f"reduced-{grid.fingerprint()}.json", **kw)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def exponent(self) -> float:
        return (4 - self.dim) / 2.0

    # -- persistence ----------------------------------------------------------

    def _load(self):
        data = json.loads(self.path.read_text())
        if data.get("grid") != self.grid.to_dict():
            return
        self._gamma = data.get("gamma")
        for d in data.get("entries", []):
            e = ReducedEntry.from_dict(d)
            self._entries[(e.omega2, e.b)] = e
        for b, ks in data.get("knots", {}).items():
            self._knots[float(b)] = sorted(set(float(k) for k in ks) | set(self.omega2_knots))
        self._verified = {tuple(float(x) for x in t) for t in data.get("verified", [])}

    def save(self):
        if self.path is None:
            return
        with self._lock:
            entries = sorted(self._entries.values(), key=lambda e: (e.b, e.omega2))
            data = {"grid": self.grid.to_dict(), "gamma": self._gamma,
                    "entries": [e.to_dict() for e in entries],
                    "knots": {repr(b): ks for b, ks in sorted(self._knots.items())},
                    "verified": sorted(self._verified)}
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data, indent=1))
        os.replace(tmp, self.path)

    def fingerprint(self) -> str:
        return f"{self.grid.fingerprint()}:{len(self._entries)}"

    # -- solves ---------------------------------------------------------------

    @property
    def gamma(self) -> float:
        """Scalar least energy at kappa = 1 on the reference grid."""
        if self._gamma is None:
            gs = solve_seed(FrozenParams(1.0, 1.0, 0.0), self.grid, SeedSpec("scalar_u"), self.opts)
            with self._lock:
                self._gamma = gs.energy
        return self._gamma

    def _solve(self, omega2: float, b: float) -> ReducedEntry:
        gs = system_ground_state(FrozenParams(1.0, omega2, b), self.grid, opts=self.opts)
        ties = least_energy_set(gs)
        return ReducedEntry(omega2, b, gs.energy, tuple(t.norms() for t in ties),
                            tuple(str(t.classification) for t in ties))

    def entry(self, omega2: float, b: float) -> ReducedEntry:
        key = (float(omega2), float(b))
        hit = self._entries.get(key)
        if hit is not None:
            return hit
        if not self.solve_missing:
            raise CacheMiss(f"no reduced solve cached for omega2={omega2}, b={b}")
        e = self._solve(*key)
        with self._lock:
            self._entries.setdefault(key, e)
        return self._entries[key]

    def warm(self, bs) -> None:
        for b in bs:
            for w in self.omega2_knots:
                self.entry(w, b)

    def _bracket(self, knots, x):
        if not knots or x < knots[0] or x > knots[-1]:
            return None
        k = int(np.searchsorted(knots, x))
        if k < len(knots) and knots[k] == x:
            return (knots[k],)
        return knots[k - 1], knots[k]

    def value(self, omega2: float, b: float) -> float:
        """c(1, omega2, b), from the table when possible.

        Inside the knot range the answer always comes from the knot tree, so an
        exact off-knot solve made for other purposes never changes it.
        """
        w, b = float(omega2), float(b)
        if self.interpolate and self.omega2_knots[0] <= w <= self.omega2_knots[-1]:
            if b in self.b_knots or not self.b_knots:
                return math.exp(self._log_along_w(w, b))
            bb = self._bracket(self.b_knots, b)
            if bb is not None:
                b0, b1 = bb
                s = (b - b0) / (b1 - b0)
                return math.exp((1 - s) * self._log_along_w(w, b0) + s * self._log_along_w(w, b1))
        return self.entry(w, b).energy

    def _logc(self, w, b) -> float:
        return math.log(self.entry(w, b).energy)

    def _log_along_w(self, w: float, b: float) -> float:
        """Log-log linear interpolation in omega2 on a bisection tree of knots.

        Before a bracket is used its midpoint is re-solved; if the interpolant
        misses it by more than ``refine_tol`` the bracket is split. Answers
        therefore depend only on ``(w, b)``, not on the order of queries.
        """
        with self._lock:
            knots = self._knots.setdefault(b, list(self.omega2_knots))
        while True:
            k = bisect.bisect_left(knots, w)
            if knots[k] == w:
                return self._logc(w, b)
            w0, w1 = knots[k - 1], knots[k]

            def interp(x):
                t = (math.log(x) - math.log(w0)) / (math.log(w1) - math.log(w0))
                return (1 - t) * self._logc(w0, b) + t * self._logc(w1, b)

            if self.refine_tol is None or (w0, w1, b) in self._verified or w1 - w0 <= self.min_width:
                return interp(w)
            wm = 0.5 * (w0 + w1)
            if abs(interp(wm) - self._logc(wm, b)) <= self.refine_tol:
                with self._lock:
                    self._verified.add((w0, w1, b))
                return interp(w)
            with self._lock:
                if wm not in knots:
                    bisect.insort(knots, wm)


def _reduce(kappa1: float, kappa2: float):
    kmax = max(kappa1, kappa2)
    swapped = kappa2 > kappa1
    return kmax, min(kappa1, kappa2) / kmax, swapped


def sigma_reduced(p: FrozenParams, cache: ReducedCache) -> float:
    kmax, omega2, _ = _reduce(p.kappa1, p.kappa2)
    return kmax**cache.exponent * cache.value(omega2, p.b)


def sigma_nodes(kappa1, kappa2, b: float, cache: ReducedCache) -> np.ndarray:
    """Vectorised sigma_reduced over arrays of potential values."""
    k1 = np.asarray(kappa1, float)
    k2 = np.asarray(kappa2, float)
    kmax = np.maximum(k1, k2)
    w = np.minimum(k1, k2) / kmax
    uniq, inv = np.unique(w, return_inverse=True)
    c = np.array([cache.value(float(x), b) for x in uniq])
    return kmax ** cache.exponent * c[inv.reshape(w.shape)]


def ground_state_norms(p: FrozenParams, cache: ReducedCache) -> list[tuple[float, float]]:
    """Squared L2 norms (|phi|^2, |psi|^2) of each sampled least-energy state."""
    kmax, omega2, swapped = _reduce(p.kappa1, p.kappa2)
    e = cache.entry(omega2, p.b)
    s = kmax ** ((2 - cache.dim) / 2.0)
    return [(s * b2, s * a2) if swapped else (s * a2, s * b2) for a2, b2 in e.norms]


def gradient_weights(p: FrozenParams, cache: ReducedCache) -> list[tuple[float, float]]:
    """Weights (a, c) with grad Sigma = 1/2 (a grad V + c grad W) for each least-energy state.

    The weight of the smaller potential is the state's squared norm (the
    derivative of c in omega2). The weight of the larger one is fixed by the
    scaling ``Sigma = kmax**e c(omega2)`` as ``2 e c - omega2 |psi|^2``, which
    equals the squared norm in the continuum and keeps the candidates exact
    derivatives of the sigma reported on the grid.
    """
    kmax, omega2, swapped = _reduce(p.kappa1, p.kappa2)
    e = cache.exponent
    c = cache.value(omega2, p.b)
    s = kmax ** (e - 1.0)
    out = []
    for _, b2 in cache.entry(omega2, p.b).norms:
        big, small = s * (2 * e * c - omega2 * b2), s * b2
        out.append((small, big) if swapped else (big, small))
    return out


# --- samples over space ------------------------------------------------------


@dataclass
class SigmaSample:
    z: np.ndarray
    kappa1: float
    kappa2: float
    sigma: float
    ground_states: list = field(default_factory=list)
    gradient_candidates: list = field(default_factory=list)
    grad_V: np.ndarray | None = None
    grad_W: np.ndarray | None = None
    analyzed: bool = False


class SigmaLandscape:
    """Sigma(z) for given potentials and coupling, backed by a reduced cache."""

    def __init__(self, V: Potential, W: Potential, b: float, cache: ReducedCache, region=None):
        self.V, self.W, self.b, self.cache = V, W, float(b), cache
        self.region = None if region is None else (np.asarray(region[0], float), np.asarray(region[1], float))

    def frozen(self, z) -> FrozenParams:
        z = np.asarray(z, float)
        return FrozenParams(self.V(z), self.W(z), self.b)

    def sigma(self, z) -> float:
        return sigma_reduced(self.frozen(z), self.cache)

    def sample(self, z, analyze: bool = False) -> SigmaSample:
        z = np.asarray(z, float)
        p = self.frozen(z)
        s = SigmaSample(z=z, kappa1=p.kappa1, kappa2=p.kappa2, sigma=sigma_reduced(p, self.cache))
        if analyze:
            gv, gw = self.V.gradient(z), self.W.gradient(z)
            s.grad_V, s.grad_W = gv, gw
            s.ground_states = ground_state_norms(p, self.cache)
            s.gradient_candidates = [0.5 * (gv * a + gw * c) for a, c in gradient_weights(p, self.cache)]
            s.analyzed = True
        return s


def dir_deriv_bounds(z, eta, sample: SigmaSample) -> tuple[float, float]:
    """(inf, sup) over sampled ground states of 1/2 (dV/deta |phi|^2 + dW/deta |psi|^2).

    The squared norms enter through ``gradient_weights``.

    The sup is the left derivative of Sigma along eta, the inf the right one.
    """
    eta = np.asarray(eta, float)
    nrm = float(np.linalg.norm(eta))
    if nrm == 0.0:
        raise ValueError("direction must be nonzero")
    if not sample.gradient_candidates:
        raise ValueError(f"no ground states recorded at z={np.asarray(z).tolist()}")
    vals = [float(np.dot(g, eta / nrm)) for g in sample.gradient_candidates]
    return min(vals), max(vals)


@dataclass(frozen=True)
class ClarkeReport:
    critical: bool
    hull_margin: float


def min_norm_in_hull(points) -> float:
    """Distance from the origin to the convex hull of a finite point set.

    Exact by Caratheodory: scan every affinely independent subset of at most
    d+1 points for a relative-interior minimiser.
    """
    P = np.atleast_2d(np.asarray(points, float))
    m, d = P.shape
    best = min(float(np.linalg.norm(p)) for p in P)
    for k in range(2, min(m, d + 1) + 1):
        for idx in itertools.combinations(range(m), k):
            G = P[list(idx)]
            K = np.zeros((k + 1, k + 1))
            K[:k, :k] = G @ G.T
            K[:k, k] = K[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            lam = sol[:k]
            if np.all(lam >= -1e-12) and abs(lam.sum() - 1.0) < 1e-9:
                best = min(best, float(np.linalg.norm(lam @ G)))
    return best


def clarke_critical_test(sample: SigmaSample, rel_tol: float = 1e-6) -> ClarkeReport:
    cands = sample.gradient_candidates
    if not cands:
        raise ValueError("no gradient candidates to test")
    top = max(float(np.linalg.norm(c)) for c in cands)
    if top == 0.0:
        return ClarkeReport(True, 0.0)
    margin = min_norm_in_hull(cands)
    return ClarkeReport(margin <= rel_tol * top, margin)


def finite_diff_sigma_grad(z, step: float, landscape: SigmaLandscape) -> np.ndarray:
    z = np.asarray(z, float)
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    if landscape.region is not None:
        lo, hi = landscape.region
        if np.any(z - step < lo) or np.any(z + step > hi):
            raise ValueError(f"z={z.tolist()} is within {step} of the region boundary")
    out = np.zeros(z.size)
    for j in range(z.size):
        e = np.zeros(z.size)
        e[j] = step
        out[j] = (landscape.sigma(z + e) - landscape.sigma(z - e)) / (2 * step)
    return out


# --- maps --------------------------------------------------------------------


@dataclass
class SigmaMap:
    region: tuple
    resolution: int
    axes: tuple
    samples: list

    @property
    def dim(self) -> int:
        return len(self.axes)

    def sigma_array(self) -> np.ndarray:
        return np.array([s.sigma for s in self.samples]).reshape((self.resolution,) * self.dim)

    def argmin(self) -> np.ndarray:
        return self.samples[int(np.argmin([s.sigma for s in self.samples]))].z

    def header(self) -> list[str]:
        return [f"z_{i + 1}" for i in range(self.dim)] + [
            "kappa1", "kappa2", "sigma", "n_ground_states", "grad_cand_min_norm", "clarke_critical"]

    def rows(self, rel_tol: float = 1e-6):
        for s in self.samples:
            if s.analyzed:
                norms = [float(np.linalg.norm(c)) for c in s.gradient_candidates]
                crit = clarke_critical_test(s, rel_tol).critical
                extra = [len(s.ground_states), min(norms), "true" if crit else "false"]
            else:
                extra = [0, "", ""]
            yield [*(float(x) for x in s.z), s.kappa1, s.kappa2, s.sigma, *extra]


def _region_axes(region, res: int):
    lo, hi = (np.asarray(r, float) for r in region)
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise ValueError("region needs lo < hi componentwise")
    if res < 2:
        raise ValueError("map resolution must be at least 2")
    return tuple(np.linspace(a, b, res) for a, b in zip(lo, hi))


def sigma_map(V: Potential, W: Potential, b: float, region, res: int, cache: ReducedCache,
              flag="minima", executor=None) -> SigmaMap:
    """Sigma on a res**d lattice over ``region = (lo, hi)``.

    Nodes that are discrete local minima (``flag="minima"``) or listed
    explicitly in ``flag`` get their ground-state sets and gradient candidates.
    """
    axes = _region_axes(region, res)
    land = SigmaLandscape(V, W, b, cache, region)
    pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    mapper = executor.map if executor is not None else map
    samples = list(mapper(land.sample, pts))
    flagged = set()
    d = pts.shape[1]
    if flag == "minima":
        sig = np.array([s.sigma for s in samples]).reshape((res,) * d)
        foot = np.ones((3,) * d, dtype=bool)
        mins = sig == ndimage.minimum_filter(sig, footprint=foot, mode="nearest")
        flagged.update(int(i) for i in np.flatnonzero(mins.ravel()))
    elif flag:
        for z in flag:
            flagged.add(int(np.argmin(np.linalg.norm(pts - np.asarray(z, float), axis=1))))
    for i in sorted(flagged):
        samples[i] = land.sample(pts[i], analyze=True)
    return SigmaMap(region=(tuple(np.asarray(region[0], float)), tuple(np.asarray(region[1], float))),
                    resolution=res, axes=axes, samples=samples)


def lipschitz_check(landscape: SigmaLandscape, z0, z1, n: int = 11, factor: float = 1.2) -> tuple[bool, float, float]:
    """Empirical local Lipschitz bound along a segment; returns (ok, worst slope, bound)."""
    z0, z1 = np.asarray(z0, float), np.asarray(z1, float)
    ts = np.linspace(0.0, 1.0, n)
    zs = [z0 + t * (z1 - z0) for t in ts]
    samples = [landscape.sample(z, analyze=True) for z in zs]
    bound = factor * max(max(float(np.linalg.norm(c)) for c in s.gradient_candidates) for s in samples)
    slopes = [abs(a.sigma - c.sigma) / float(np.linalg.norm(a.z - c.z)) for a, c in zip(samples, samples[1:])]
    worst = max(slopes)
    return worst <= bound, worst, bound


__all__ = [
    "CacheMiss", "Classification", "ClarkeReport", "ReducedCache", "ReducedEntry", "SigmaLandscape",
    "SigmaMap", "SigmaSample", "clarke_critical_test", "dir_deriv_bounds", "finite_diff_sigma_grad",
    "ground_state_norms", "lipschitz_check", "min_norm_in_hull", "sigma_frozen", "sigma_map",
    "sigma_nodes", "sigma_reduced",
]

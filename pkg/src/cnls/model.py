"""Potentials, energy functionals, Nehari quantities and coupling thresholds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .grid import Field, Grid, State, grad_sq_array, lap_array, quad

# --- potentials --------------------------------------------------------------


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def _center(c, dim: int) -> np.ndarray:
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.size == 1:
        return np.full(dim, c[0])
    if c.size != dim:
        raise ValueError(f"center of length {c.size} used in dimension {dim}")
    return c


class Potential:
    """Base class; subclasses evaluate at points of shape ``(..., d)``."""

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        out = self._value(_as_points(x))
        return float(out[0]) if x.ndim == 1 else out

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self._grad(_as_points(x))
        return out[0] if x.ndim == 1 else out

    def on_grid(self, grid: Grid) -> np.ndarray:
        return self._value(grid.points()).reshape(grid.shape)

    def grad_on_grid(self, grid: Grid) -> np.ndarray:
        return self._grad(grid.points()).reshape(grid.shape + (grid.dim,))

    def shifted(self, c: float) -> "Shifted":
        return Shifted(self, c)


@dataclass(frozen=True)
class Constant(Potential):
    value: float

    def _value(self, x):
        return np.full(x.shape[0], float(self.value))

    def _grad(self, x):
        return np.zeros_like(x)

    def inf(self):
        return float(self.value)

    def sup(self):
        return float(self.value)


@dataclass(frozen=True)
class CappedQuadratic(Potential):
    """``base + min(curvature*|x-center|**2, cap)``."""

    base: float
    curvature: float
    center: tuple
    cap: float = 9.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if self.curvature < 0 or self.cap < 0:
            raise ValueError("curvature and cap must be non-negative")

    def _value(self, x):
        r2 = np.sum((x - _center(self.center, x.shape[1])) ** 2, axis=1)
        return self.base + np.minimum(self.curvature * r2, self.cap)

    def _grad(self, x):
        dx = x - _center(self.center, x.shape[1])
        inside = self.curvature * np.sum(dx**2, axis=1) < self.cap
        return 2.0 * self.curvature * dx * inside[:, None]

    def inf(self):
        return float(self.base)

    def sup(self):
        return float(self.base + self.cap)


@dataclass(frozen=True)
class DoubleWell(Potential):
    """Gaussian wells of equal depth carved out of a plateau ``base + cap``.

    ``base + cap - depth * max_k exp(-|x - c_k|**2 / (2 width**2))``
    """

    base: float
    depth: float
    centers: tuple
    width: float
    cap: float = 9.0

    def __post_init__(self):
        cs = tuple(tuple(float(v) for v in np.atleast_1d(c)) for c in self.centers)
        object.__setattr__(self, "centers", cs)
        if not cs:
            raise ValueError("DoubleWell needs at least one center")
        if not 0 < self.depth <= self.cap:
            raise ValueError("DoubleWell requires 0 < depth <= cap")
        if self.width <= 0:
            raise ValueError("DoubleWell width must be positive")

    def _bumps(self, x):
        return np.stack(
            [np.exp(-np.sum((x - _center(c, x.shape[1])) ** 2, axis=1) / (2 * self.width**2)) for c in self.centers]
        )

    def _value(self, x):
        return self.base + self.cap - self.depth * self._bumps(x).max(axis=0)

    def _grad(self, x):
        bumps = self._bumps(x)
        k = bumps.argmax(axis=0)
        c = np.array([_center(c, x.shape[1]) for c in self.centers])[k]
        g = bumps[k, np.arange(x.shape[0])]
        return (self.depth / self.width**2) * g[:, None] * (x - c)

    def inf(self):
        return float(self.base + self.cap - self.depth)

    def sup(self):
        return float(self.base + self.cap)


@dataclass(frozen=True)
class Shifted(Potential):
    inner: Potential
    c: float

    def _value(self, x):
        return self.inner._value(x) + self.c

    def _grad(self, x):
        return self.inner._grad(x)

    def inf(self):
        return self.inner.inf() + self.c

    def sup(self):
        return self.inner.sup() + self.c


PotentialSpec = Union[Constant, CappedQuadratic, DoubleWell, Shifted]


def eval_potential(spec: Potential, x) -> float:
    return spec(x)


def potential_to_dict(p: Potential) -> dict:
    if isinstance(p, Constant):
        return {"type": "constant", "value": float(p.value)}
    if isinstance(p, CappedQuadratic):
        return {"type": "capped_quadratic", "base": float(p.base), "curvature": float(p.curvature),
                "center": list(p.center), "cap": float(p.cap)}
    if isinstance(p, DoubleWell):
        return {"type": "double_well", "base": float(p.base), "depth": float(p.depth),
                "centers": [list(c) for c in p.centers], "width": float(p.width), "cap": float(p.cap)}
    if isinstance(p, Shifted):
        return {"type": "shifted", "inner": potential_to_dict(p.inner), "c": float(p.c)}
    raise TypeError(f"unknown potential {p!r}")


def potential_from_dict(d: dict) -> Potential:
    kind = d.get("type")
    if kind == "constant":
        return Constant(float(d["value"]))
    if kind == "capped_quadratic":
        return CappedQuadratic(float(d["base"]), float(d["curvature"]), tuple(d["center"]), float(d.get("cap", 9.0)))
    if kind == "double_well":
        return DoubleWell(float(d["base"]), float(d["depth"]), tuple(tuple(c) for c in d["centers"]),
                          float(d["width"]), float(d.get("cap", 9.0)))
    if kind == "shifted":
        return Shifted(potential_from_dict(d["inner"]), float(d["c"]))
    raise ValueError(f"unknown potential type {kind!r}; expected constant, capped_quadratic, double_well or shifted")


# --- parameter sets ----------------------------------------------------------


@dataclass(frozen=True)
class FrozenParams:
    """Constant coefficients: potentials frozen at one point, coupling ``b``."""

    kappa1: float
    kappa2: float
    b: float

    def __post_init__(self):
        if not (self.kappa1 > 0 and self.kappa2 > 0):
            raise ValueError(f"kappa1, kappa2 must be positive, got {self.kappa1}, {self.kappa2}")
        if not self.b >= 0:
            raise ValueError(f"coupling b must be non-negative, got {self.b}")


@dataclass(frozen=True)
class ModelParams:
    V: Potential
    W: Potential
    b: float
    eps: float
    alpha: float

    def __post_init__(self):
        if not 0 < self.eps <= 1:
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")
        if not self.b >= 0:
            raise ValueError(f"coupling b must be non-negative, got {self.b}")
        if not 0 < self.alpha <= min(self.V.inf(), self.W.inf()) * (1 + 1e-12):
            raise ValueError(
                f"alpha={self.alpha} must be positive and below inf V={self.V.inf()}, inf W={self.W.inf()}"
            )

    def frozen_at(self, z) -> FrozenParams:
        return FrozenParams(self.V(np.asarray(z, float)), self.W(np.asarray(z, float)), self.b)


def _coefficients(p, grid: Grid):
    """(eps, P1, P2, b) with P scalar for frozen data and arrays otherwise."""
    if isinstance(p, FrozenParams):
        return 1.0, p.kappa1, p.kappa2, p.b
    return p.eps, p.V.on_grid(grid), p.W.on_grid(grid), p.b


def _parts(s: State, p):
    g = s.grid
    h = g.spacing
    eps, p1, p2, b = _coefficients(p, g)
    u, v = s.u.values, s.v.values
    kin = eps**2 * (grad_sq_array(u, h) + grad_sq_array(v, h))
    pot = quad(p1 * u * u, h) + quad(p2 * v * v, h)
    u2, v2 = u * u, v * v
    quart = quad(u2 * u2, h) + 2.0 * b * quad(u2 * v2, h) + quad(v2 * v2, h)
    return kin + pot, quart


def energy_frozen(s: State, p: FrozenParams) -> float:
    q, r = _parts(s, p)
    return 0.5 * q - 0.25 * r


def energy_eps(s: State, p: ModelParams) -> float:
    q, r = _parts(s, p)
    return 0.5 * q - 0.25 * r


def nehari_value(s: State, p) -> float:
    if s.is_zero():
        raise ValueError("Nehari functional is undefined at the zero state")
    q, r = _parts(s, p)
    return q - r


def theta_project(s: State, p) -> tuple[float, State]:
    q, r = _parts(s, p)
    if not (r > 1e-300 and q > 0):
        raise ValueError("cannot project onto the Nehari manifold: quartic part vanishes")
    theta = math.sqrt(q / r)
    return theta, s.scaled(theta)


def residual(s: State, p) -> State:
    g = s.grid
    eps, p1, p2, b = _coefficients(p, g)
    u, v = s.u.values, s.v.values
    ru = -(eps**2) * lap_array(u, g.spacing) + p1 * u - u**3 - b * v * v * u
    rv = -(eps**2) * lap_array(v, g.spacing) + p2 * v - v**3 - b * u * u * v
    bnd = g.boundary_mask()
    ru[bnd] = 0.0
    rv[bnd] = 0.0
    return State(Field(g, ru), Field(g, rv))


# --- thresholds --------------------------------------------------------------


def h_func(s: float) -> float:
    if not s > 0:
        raise ValueError(f"h(s) requires s > 0, got {s}")
    return min(s / 32.0 * (7.0 + 1.0 / (s * s)) ** 2 - 1.0, (s * s + 3.0) / 4.0)


@dataclass(frozen=True)
class Thresholds:
    b_z: float
    b0: float
    b1: float
    b0_inf: float | None = None
    b1_inf: float | None = None
    b2_inf: float | None = None

    def regime(self, b: float) -> str:
        """Expected classification of a least-energy state at coupling ``b``."""
        if b < self.b0:
            return "Scalar"
        if b > self.b1:
            return "Vector"
        return "Indeterminate"


def _b0_b1(a: float, c: float) -> tuple[float, float]:
    b0 = max((c / a) ** 0.25, (a / c) ** 0.25)
    b1 = max(h_func(math.sqrt(c / a)), h_func(math.sqrt(a / c)))
    return b0, b1


def local_thresholds(kappa1: float, kappa2: float) -> Thresholds:
    if not (kappa1 > 0 and kappa2 > 0):
        raise ValueError("local thresholds need positive potential values")
    b0, b1 = _b0_b1(kappa1, kappa2)
    return Thresholds(b0, b0, b1)


def ball_thresholds(V: Potential, W: Potential, z, r: float, grid: Grid) -> Thresholds:
    """Thresholds built from the minima of V and W over the ball ``B(z, r)``.

    The minima are taken over the grid nodes inside the ball together with z.
    """
    z = np.asarray(z, float)
    pts = grid.points()
    pts = np.vstack([pts[np.linalg.norm(pts - z, axis=1) <= r], z])
    v0, w0 = float(np.min(V(pts))), float(np.min(W(pts)))
    bz = local_thresholds(V(z), W(z)).b_z
    b0, b1 = _b0_b1(v0, w0)
    return Thresholds(bz, b0, b1)


def global_thresholds(alpha: float, supV: float, supW: float) -> tuple[float, float, float]:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if alpha > min(supV, supW):
        raise ValueError(f"alpha={alpha} exceeds min(sup V, sup W)={min(supV, supW)}")
    b0 = max((alpha / supV) ** 0.25, (alpha / supW) ** 0.25)
    b1 = max((supV / alpha) ** 0.25, (supW / alpha) ** 0.25)
    b2 = max(h_func(math.sqrt(supV / alpha)), h_func(math.sqrt(supW / alpha)))
    return b0, b1, b2

"""Uniform tensor grids on a box, fields with Dirichlet walls, and the
finite-difference / quadrature primitives everything else is built on.

All reductions use rectangle quadrature ``h**d * sum(...)`` so that the
discrete energy is exactly the quadratic form of the 5/7-point Laplacian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.fft import dstn


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[-L, L]**d`` with ``n`` nodes per axis."""

    dim: int
    half_width: float
    points_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"grid dimension must be 1, 2 or 3, got {self.dim}")
        if int(self.points_per_axis) != self.points_per_axis or self.points_per_axis < 8:
            raise ValueError(f"points_per_axis must be an integer >= 8, got {self.points_per_axis}")
        if not np.isfinite(self.half_width) or self.half_width <= 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        object.__setattr__(self, "half_width", float(self.half_width))
        object.__setattr__(self, "points_per_axis", int(self.points_per_axis))

    @property
    def n(self) -> int:
        return self.points_per_axis

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    h = spacing

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        # exact mirror symmetry: x[n-1-i] == -x[i] bit for bit
        i = np.arange(self.n, dtype=float)
        return self.half_width * (2.0 * i - (self.n - 1)) / (self.n - 1)

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``self.shape``, one per axis."""
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    def points(self) -> np.ndarray:
        """Node coordinates as an ``(n**d, d)`` array in row-major order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def radius(self, center=None) -> np.ndarray:
        """Euclidean distance of every node to ``center`` (default origin)."""
        c = np.zeros(self.dim) if center is None else np.broadcast_to(np.asarray(center, float), (self.dim,))
        return np.sqrt(sum((m - ci) ** 2 for m, ci in zip(self.mesh(), c)))

    def interior(self) -> tuple[slice, ...]:
        return (slice(1, -1),) * self.dim

    def boundary_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        mask[self.interior()] = False
        return mask

    def sample(self, fn) -> "Field":
        """Evaluate ``fn(*mesh)`` at the nodes and zero the boundary layer."""
        vals = np.array(np.broadcast_to(fn(*self.mesh()), self.shape), dtype=float)
        vals[self.boundary_mask()] = 0.0
        return Field(self, vals)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))

    def fingerprint(self) -> str:
        return f"d{self.dim}-L{self.half_width!r}-n{self.n}"

    def to_dict(self) -> dict:
        return {"d": self.dim, "L": self.half_width, "n": self.n}


def make_grid(d: int, L: float, n: int) -> Grid:
    return Grid(d, L, n)


class Field:
    """Real values on every node of a grid, zero on the boundary layer."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 1 and arr.size == grid.size and grid.dim > 1:
            arr = arr.reshape(grid.shape)
        if arr.shape != grid.shape:
            raise ValueError(f"values of shape {arr.shape} do not fit grid shape {grid.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        if np.any(arr[grid.boundary_mask()] != 0.0):
            raise ValueError("field must vanish on the boundary nodes")
        self.grid = grid
        self.values = arr

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __add__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return Field(self.grid, self.values - other.values)

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def __repr__(self):
        return f"Field({self.grid!r}, sup={self.sup():.6g})"


@dataclass(frozen=True, eq=False)
class State:
    """Ordered pair of fields on one grid."""

    u: Field
    v: Field

    def __post_init__(self):
        _same_grid(self.u, self.v)

    @property
    def grid(self) -> Grid:
        return self.u.grid

    def scaled(self, t: float) -> "State":
        return State(self.u * t, self.v * t)

    def is_zero(self) -> bool:
        return not (np.any(self.u.values) or np.any(self.v.values))

    @classmethod
    def from_arrays(cls, grid: Grid, u, v) -> "State":
        return cls(Field(grid, u), Field(grid, v))


def _same_grid(f: Field, g: Field):
    if f.grid != g.grid:
        raise ValueError(f"grid mismatch: {f.grid} vs {g.grid}")


# --- array-level kernels (boundary layer assumed zero) -----------------------

def lap_array(a: np.ndarray, h: float) -> np.ndarray:
    """Central second difference summed over axes; boundary of the result is 0."""
    d = a.ndim
    out = np.zeros_like(a)
    inner = (slice(1, -1),) * d
    core = out[inner]
    for ax in range(d):
        up = list(inner)
        dn = list(inner)
        up[ax] = slice(2, None)
        dn[ax] = slice(None, -2)
        core += a[tuple(up)] + a[tuple(dn)]
    core -= 2 * d * a[inner]
    core /= h * h
    return out


def grad_sq_array(a: np.ndarray, h: float) -> float:
    """Forward-difference Dirichlet energy ``h**d * sum |D+ a|**2``."""
    total = 0.0
    for ax in range(a.ndim):
        total += float(np.sum(np.diff(a, axis=ax) ** 2))
    return total * h ** (a.ndim - 2)


def quad(a: np.ndarray, h: float) -> float:
    return float(np.sum(a)) * h**a.ndim


class ShiftedLaplacianSolver:
    """Exact inverse of ``-c*Lap_h + s`` on interior nodes (homogeneous Dirichlet).

    The Dirichlet finite-difference Laplacian is diagonalised by the type-I
    discrete sine transform, so each solve costs two transforms.
    """

    def __init__(self, grid: Grid, c: float, s: float):
        if c < 0 or s <= 0:
            raise ValueError("need c >= 0 and s > 0 for a positive definite operator")
        n, h = grid.n, grid.spacing
        k = np.arange(1, n - 1)
        lam1 = (2.0 - 2.0 * np.cos(np.pi * k / (n - 1))) / (h * h)
        lam = np.zeros((n - 2,) * grid.dim)
        for ax in range(grid.dim):
            shape = [1] * grid.dim
            shape[ax] = n - 2
            lam = lam + lam1.reshape(shape)
        self.grid = grid
        self.symbol = c * lam + s

    def solve(self, r: np.ndarray) -> np.ndarray:
        inner = self.grid.interior()
        coef = dstn(r[inner], type=1, norm="ortho")
        coef /= self.symbol
        out = np.zeros_like(r)
        out[inner] = dstn(coef, type=1, norm="ortho")
        return out


# --- public field operations -------------------------------------------------

def laplacian_apply(f: Field) -> Field:
    return Field(f.grid, lap_array(f.values, f.grid.spacing))


def integrate(f: Field, p: int) -> float:
    if p not in (1, 2, 4):
        raise ValueError(f"unsupported exponent p={p}; expected 1, 2 or 4")
    return quad(f.values**p, f.grid.spacing)


def inner(f: Field, g: Field) -> float:
    _same_grid(f, g)
    return quad(f.values * g.values, f.grid.spacing)


def dirichlet_energy(f: Field) -> float:
    return grad_sq_array(f.values, f.grid.spacing)


def mixed_sq(f: Field, g: Field) -> float:
    _same_grid(f, g)
    return quad(f.values**2 * g.values**2, f.grid.spacing)


@dataclass(frozen=True)
class MaxInfo:
    point: np.ndarray
    value: float
    gap: float
    index: tuple[int, ...]
    others: tuple[np.ndarray, ...] = ()


def global_max(f: Field) -> MaxInfo:
    """Locate the global maximum with a parabolic sub-grid correction per axis.

    ``gap`` is the difference between the highest and second-highest local
    maximum (connected plateaus count once); ``inf`` when there is only one.
    """
    a = f.values
    if not np.any(a):
        raise ValueError("global_max of an identically zero field")
    g = f.grid
    idx = np.unravel_index(int(np.argmax(a)), a.shape)
    peak = float(a[idx])

    footprint = np.ones((3,) * g.dim, dtype=bool)
    local = a == ndimage.maximum_filter(a, footprint=footprint, mode="constant", cval=-np.inf)
    if peak > 0:
        # flat zero tails would otherwise register as plateaus
        local &= a > 0
    labels, count = ndimage.label(local, structure=footprint)
    gap = np.inf
    others: list[np.ndarray] = []
    if count > 1:
        tops = ndimage.maximum(a, labels, index=np.arange(1, count + 1))
        order = np.argsort(-np.asarray(tops), kind="stable")
        gap = peak - float(tops[order[1]])
        if gap == 0.0:
            for lab in order[1:]:
                if tops[lab] != peak:
                    break
                pos = np.argwhere(labels == lab + 1)[0]
                others.append(g.axis[pos])

    h = g.spacing
    point = g.axis[list(idx)].astype(float)
    for ax in range(g.dim):
        i = idx[ax]
        if i == 0 or i == g.n - 1:
            continue
        lo = list(idx)
        hi = list(idx)
        lo[ax] -= 1
        hi[ax] += 1
        fm, f0, fp = a[tuple(lo)], a[idx], a[tuple(hi)]
        curv = fm - 2.0 * f0 + fp
        if curv < 0.0:
            shift = 0.5 * h * (fm - fp) / curv
            point[ax] += float(np.clip(shift, -h, h))
    return MaxInfo(point=point, value=peak, gap=float(gap), index=tuple(int(i) for i in idx), others=tuple(others))


# --- binary layout -----------------------------------------------------------

_HEADER = struct.Struct("<qqd")


def field_to_bytes(f: Field) -> bytes:
    g = f.grid
    return _HEADER.pack(g.dim, g.n, g.half_width) + f.values.astype("<f8").tobytes(order="C")


def field_from_bytes(buf: bytes) -> Field:
    d, n, L = _HEADER.unpack_from(buf, 0)
    grid = Grid(int(d), float(L), int(n))
    body = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size)
    if body.size != grid.size:
        raise ValueError(f"expected {grid.size} values, found {body.size}")
    return Field(grid, body.astype(float).reshape(grid.shape))


def write_field(path, f: Field) -> Path:
    path = Path(path)
    path.write_bytes(field_to_bytes(f))
    return path


def read_field(path) -> Field:
    return field_from_bytes(Path(path).read_bytes())

"""Discrete coupled cubic system and its two solvers.

    -eps^2 Lap u + P1 u = u^3 + b v^2 u
    -eps^2 Lap v + P2 v = v^3 + b u^2 v

on the interior nodes of a grid, with P1, P2 either constants or node arrays.
The discrete energy is exactly variational for this residual, so a critical
point of the energy is a zero of the residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from .grid import Grid, ShiftedLaplacianSolver, grad_sq_array, lap_array, quad


class ConvergenceError(RuntimeError):
    """A nonlinear solve stalled, diverged or hit its iteration cap."""


class CollapseError(ConvergenceError):
    """The iteration collapsed onto the trivial state (0, 0)."""


@dataclass
class FlowInfo:
    iterations: int
    step: float
    energies: list = field(default_factory=list)
    converged: bool = False


@dataclass
class NewtonInfo:
    iterations: int
    residuals: list = field(default_factory=list)
    converged: bool = False


class CubicSystem:
    def __init__(self, grid: Grid, p1, p2, b: float, eps: float = 1.0):
        self.grid = grid
        self.h = grid.spacing
        self.p1 = p1
        self.p2 = p2
        self.b = float(b)
        self.eps2 = float(eps) ** 2
        self._inner = grid.interior()
        self._bmask = grid.boundary_mask()
        # preconditioner shift: the potential floor keeps it positive definite
        self._pre = (
            ShiftedLaplacianSolver(grid, self.eps2, float(np.min(p1))),
            ShiftedLaplacianSolver(grid, self.eps2, float(np.min(p2))),
        )

    # -- functionals ----------------------------------------------------------

    def quadratic(self, u, v) -> float:
        h = self.h
        return (self.eps2 * (grad_sq_array(u, h) + grad_sq_array(v, h))
                + quad(self.p1 * u * u, h) + quad(self.p2 * v * v, h))

    def quartic(self, u, v) -> float:
        u2, v2 = u * u, v * v
        return quad(u2 * u2 + 2.0 * self.b * u2 * v2 + v2 * v2, self.h)

    def energy(self, u, v) -> float:
        return 0.5 * self.quadratic(u, v) - 0.25 * self.quartic(u, v)

    def theta(self, u, v) -> float:
        r = self.quartic(u, v)
        if not r > 1e-300:
            raise CollapseError("state has vanishing quartic part; cannot project onto the Nehari manifold")
        return math.sqrt(self.quadratic(u, v) / r)

    def residual(self, u, v):
        lu = lap_array(u, self.h)
        lv = lap_array(v, self.h)
        u2, v2 = u * u, v * v
        ru = -self.eps2 * lu + self.p1 * u - u2 * u - self.b * v2 * u
        rv = -self.eps2 * lv + self.p2 * v - v2 * v - self.b * u2 * v
        ru[self._bmask] = 0.0
        rv[self._bmask] = 0.0
        return ru, rv

    def residual_norm(self, u, v) -> float:
        ru, rv = self.residual(u, v)
        return float(max(np.max(np.abs(ru)), np.max(np.abs(rv))))

    # -- Nehari-projected preconditioned gradient flow ------------------------

    def relax(self, u, v, step=0.05, rtol=1e-10, maxiter=20000, min_step=1e-10, clip=True):
        """Descend the energy restricted to the Nehari manifold.

        Each step moves along the H^1-preconditioned gradient, clips negative
        parts and rescales onto the manifold; a step that raises the energy is
        rejected and the step size halved.
        """
        u = np.array(u, dtype=float)
        v = np.array(v, dtype=float)
        t = self.theta(u, v)
        u *= t
        v *= t
        e = self.energy(u, v)
        info = FlowInfo(iterations=0, step=step, energies=[e])
        tau = step
        for it in range(1, maxiter + 1):
            ru, rv = self.residual(u, v)
            gu = self._pre[0].solve(ru)
            gv = self._pre[1].solve(rv)
            while True:
                un = u - tau * gu
                vn = v - tau * gv
                if clip:
                    np.maximum(un, 0.0, out=un)
                    np.maximum(vn, 0.0, out=vn)
                t = self.theta(un, vn)
                un *= t
                vn *= t
                en = self.energy(un, vn)
                if en <= e:
                    break
                tau *= 0.5
                if tau < min_step:
                    info.iterations, info.step = it, tau
                    return u, v, info
            decrease = e - en
            u, v, e = un, vn, en
            info.energies.append(e)
            if decrease < rtol * abs(e):
                info.converged = True
                break
        info.iterations, info.step = it, tau
        return u, v, info

    # -- Newton-Krylov --------------------------------------------------------

    def _pack(self, a, c):
        i = self._inner
        return np.concatenate([a[i].ravel(), c[i].ravel()])

    def _unpack(self, x):
        shape = self.grid.shape
        ishape = tuple(s - 2 for s in shape)
        m = x.size // 2
        a = np.zeros(shape)
        c = np.zeros(shape)
        a[self._inner] = x[:m].reshape(ishape)
        c[self._inner] = x[m:].reshape(ishape)
        return a, c

    def jacobian(self, u, v) -> LinearOperator:
        b, eps2, h = self.b, self.eps2, self.h
        d11 = self.p1 - 3.0 * u * u - b * v * v
        d22 = self.p2 - 3.0 * v * v - b * u * u
        off = -2.0 * b * u * v

        def matvec(x):
            du, dv = self._unpack(np.asarray(x).ravel())
            ju = -eps2 * lap_array(du, h) + d11 * du + off * dv
            jv = -eps2 * lap_array(dv, h) + d22 * dv + off * du
            return self._pack(ju, jv)

        n = 2 * (self.grid.n - 2) ** self.grid.dim
        return LinearOperator((n, n), matvec=matvec, dtype=float)

    def preconditioner(self) -> LinearOperator:
        def matvec(x):
            ru, rv = self._unpack(np.asarray(x).ravel())
            return self._pack(self._pre[0].solve(ru), self._pre[1].solve(rv))

        n = 2 * (self.grid.n - 2) ** self.grid.dim
        return LinearOperator((n, n), matvec=matvec, dtype=float)

    def newton(self, u, v, tol, maxiter=30, inner_rtol=1e-3, inner_maxiter=500):
        """Damped Newton on the residual with MINRES inner solves.

        The linearisation at a mountain-pass critical point is symmetric but
        indefinite, hence MINRES with the SPD shifted-Laplacian preconditioner.
        """
        u = np.array(u, dtype=float)
        v = np.array(v, dtype=float)
        M = self.preconditioner()
        res = self.residual_norm(u, v)
        info = NewtonInfo(iterations=0, residuals=[res])
        for it in range(1, maxiter + 1):
            if res <= tol:
                info.converged = True
                info.iterations = it - 1
                return u, v, info
            ru, rv = self.residual(u, v)
            rhs = -self._pack(ru, rv)
            x, _ = minres(self.jacobian(u, v), rhs, M=M, rtol=inner_rtol, maxiter=inner_maxiter)
            du, dv = self._unpack(x)
            lam = 1.0
            while True:
                un, vn = u + lam * du, v + lam * dv
                rn = self.residual_norm(un, vn)
                if rn < res or lam < 1e-3:
                    break
                lam *= 0.5
            if rn >= res:
                info.iterations = it
                raise ConvergenceError(f"Newton stalled at residual {res:.3e} (target {tol:.3e})")
            u, v, res = un, vn, rn
            info.residuals.append(res)
            if not (np.any(u) or np.any(v)) or max(np.max(np.abs(u)), np.max(np.abs(v))) < 1e-8:
                raise CollapseError("Newton iteration collapsed to the zero state")
        if res <= tol:
            info.converged = True
            info.iterations = maxiter
            return u, v, info
        raise ConvergenceError(f"Newton did not reach {tol:.3e} in {maxiter} steps (residual {res:.3e})")

"""The time-independent (Q) problem ``-(p v')' + m v = eps Pi_V f(t, x, v + w)``.

Second-order finite differences in conservative form, with one-sided
second-order stencils for the Robin rows so the boundary conditions are
rows of the Newton matrix. Newton steps are banded solves.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_banded

from .coefficients import CoefficientSet
from .grid import Grid
from .spaces import TimeFourierField

__all__ = ["QSolution", "DegenerateSolution", "QOperator", "solve_Q", "check_nondegeneracy",
           "time_mean_forcing", "dv_dw_directional", "newton_order_probe", "fit_order"]


class DegenerateSolution(RuntimeError):
    """Newton failed or the linearization is (numerically) singular."""

    def __init__(self, msg, margin=np.nan):
        super().__init__(msg)
        self.margin = margin


@dataclass
class QSolution:
    v: np.ndarray
    grid: Grid
    residual_norm: float
    nondegeneracy_margin: float
    history: list = field(default_factory=list)
    boundary_residual: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.history) - 1


class QOperator:
    """Banded FD matrix of ``v -> -(p v')' + d v`` with Robin rows.

    The matrix is stored in ``solve_banded`` layout with two sub- and two
    super-diagonals (the one-sided boundary stencils reach two nodes in).
    """

    def __init__(self, problem: CoefficientSet, grid: Grid):
        self.problem = problem
        self.grid = grid
        x, h = grid.x, grid.h
        self.p_half = problem.p(0.5 * (x[1:] + x[:-1]))
        self.m = problem.m(x)
        self.rho = problem.rho(x)
        self.h = h

    def banded(self, d=None) -> np.ndarray:
        n = self.grid.size
        d = self.m if d is None else d
        h2 = self.h ** 2
        ab = np.zeros((5, n))
        ph = self.p_half
        # interior: column j of row i sits at ab[2 + i - j, j]
        ab[2, 1:-1] = (ph[:-1] + ph[1:]) / h2 + d[1:-1]
        ab[3, :-2] = -ph[:-1] / h2        # (i, i-1)
        ab[1, 2:] = -ph[1:] / h2          # (i, i+1)
        a1, b1, a2, b2 = (self.problem.alpha1, self.problem.beta1,
                          self.problem.alpha2, self.problem.beta2)
        h = self.h
        # alpha1 v0 - beta1 (-3 v0 + 4 v1 - v2)/(2h) = 0
        ab[2, 0] = a1 + 1.5 * b1 / h
        ab[1, 1] = -2.0 * b1 / h
        ab[0, 2] = 0.5 * b1 / h
        # alpha2 vM + beta2 (3 vM - 4 v_{M-1} + v_{M-2})/(2h) = 0
        ab[2, -1] = a2 + 1.5 * b2 / h
        ab[3, -2] = -2.0 * b2 / h
        ab[4, -3] = 0.5 * b2 / h
        return ab

    def apply(self, v, d=None) -> np.ndarray:
        ab = self.banded(d)
        out = ab[2] * v
        out[:-1] += ab[1, 1:] * v[1:]
        out[:-2] += ab[0, 2:] * v[2:]
        out[1:] += ab[3, :-1] * v[:-1]
        out[2:] += ab[4, :-2] * v[:-2]
        return out

    def solve(self, rhs, d=None) -> np.ndarray:
        rhs = np.array(rhs, dtype=float)
        rhs[0] = rhs[-1] = 0.0
        return solve_banded((2, 2), self.banded(d), rhs)

    def symmetric_margin(self, d=None) -> float:
        """Smallest ``|eig|`` of the self-adjoint FD operator, weighted by ``rho``.

        Uses the ghost-point (half-cell) form, which is symmetric with
        trapezoid mass weights; equals ``lambda_0`` when ``d = m``.
        """
        pr = self.problem
        d = self.m if d is None else d
        x, h = self.grid.x, self.h
        ph = self.p_half
        diag = np.zeros(x.size)
        diag[1:-1] = (ph[:-1] + ph[1:]) / h
        diag[0] = ph[0] / h
        diag[-1] = ph[-1] / h
        off = -ph / h
        mass = h * self.rho
        mass[0] *= 0.5
        mass[-1] *= 0.5
        diag += d * mass / self.rho
        keep = np.ones(x.size, bool)
        if pr.beta1 != 0:
            diag[0] += pr.p(x[0]) * pr.alpha1 / pr.beta1
        else:
            keep[0] = False
        if pr.beta2 != 0:
            diag[-1] += pr.p(x[-1]) * pr.alpha2 / pr.beta2
        else:
            keep[-1] = False
        idx = np.flatnonzero(keep)
        s = 1.0 / np.sqrt(mass[idx])
        dd = diag[idx] * s * s
        ee = off[idx[:-1]] * s[:-1] * s[1:]
        ev = eigh_tridiagonal(dd, ee, eigvals_only=True)
        return float(np.abs(ev).min())


def time_mean_forcing(problem: CoefficientSet, v, w: TimeFourierField | None, order: int = 0,
                      n_time: int | None = None):
    """``Pi_V`` of ``f`` (``order=0``) or of ``d^order f/du^order`` at ``u = v + w``."""
    grid_x = np.linspace(0.0, np.pi, np.asarray(v).size)
    L = 0 if w is None else w.L
    M = n_time or max(16, 4 * (L + 1))
    M += M % 2
    t = 2 * np.pi * np.arange(M) / M
    u = v[None, :] + (0.0 if w is None else w.to_time(M))
    fn = problem.forcing if order == 0 else \
        (lambda tt, xx, uu: problem.forcing.du(tt, xx, uu, order))
    vals = fn(t[:, None], grid_x[None, :], u)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("forcing evaluation returned non-finite values")
    return vals.mean(axis=0)


def solve_Q(problem: CoefficientSet, w: TimeFourierField | None = None, v_init=None,
            grid: Grid | None = None, tol: float = 1e-10, max_iter: int = 50,
            margin_floor: float = 1e-8, check_margin: bool = True) -> QSolution:
    """Damped Newton for the (Q) problem.

    ``residual_norm`` is the max-abs discrete residual (interior equations and
    boundary rows). Steps are halved while the residual grows.

    Raises
    ------
    DegenerateSolution
        On divergence, or if the final linearization margin is below
        ``margin_floor``.
    """
    grid = grid or (w.grid if w is not None else Grid(4096))
    op = QOperator(problem, grid)
    eps = problem.epsilon
    v = np.zeros(grid.size) if v_init is None else np.array(v_init, dtype=float)

    def residual(v):
        r = op.apply(v)
        if eps != 0:
            r[1:-1] -= eps * time_mean_forcing(problem, v, w)[1:-1]
        return r

    r = residual(v)
    rn = float(np.abs(r).max())
    hist = [rn]
    for _ in range(max_iter):
        if rn <= tol:
            break
        d = op.m - (eps * time_mean_forcing(problem, v, w, order=1) if eps else 0.0)
        dv = solve_banded((2, 2), op.banded(d), -r)
        step = 1.0
        for _ in range(30):
            v_new = v + step * dv
            r_new = residual(v_new)
            rn_new = float(np.abs(r_new).max())
            if np.isfinite(rn_new) and rn_new < rn:
                break
            step *= 0.5
        else:
            raise DegenerateSolution(f"Newton step halving failed at residual {rn:.3e}")
        v, r, rn = v_new, r_new, rn_new
        hist.append(rn)
    if rn > tol:
        d = op.m - eps * time_mean_forcing(problem, v, w, order=1)
        raise DegenerateSolution(f"Newton did not reach {tol:g} (residual {rn:.3e})",
                                 op.symmetric_margin(d))
    margin = np.nan
    if check_margin:
        d = op.m - (eps * time_mean_forcing(problem, v, w, order=1) if eps else 0.0)
        margin = op.symmetric_margin(d)
        if margin < margin_floor:
            raise DegenerateSolution(f"linearization margin {margin:.3e} below floor", margin)
    bres = max(abs(problem.alpha1 * v[0] - problem.beta1 * grid.deriv(v)[0]),
               abs(problem.alpha2 * v[-1] + problem.beta2 * grid.deriv(v)[-1]))
    return QSolution(v=v, grid=grid, residual_norm=rn, nondegeneracy_margin=float(margin),
                     history=hist, boundary_residual=float(bres))


def check_nondegeneracy(problem: CoefficientSet, v, w: TimeFourierField | None = None,
                        grid: Grid | None = None) -> float:
    """Smallest ``|eig|`` of ``h -> -(p h')' + m h - eps Pi_V f_u(v + w) h`` (``rho``-weighted)."""
    v = np.asarray(v, dtype=float)
    grid = grid or Grid(v.size - 1)
    op = QOperator(problem, grid)
    d = op.m
    if problem.epsilon:
        d = d - problem.epsilon * time_mean_forcing(problem, v, w, order=1)
    return op.symmetric_margin(d)


def _fu_field(problem, v, w, M):
    t = 2 * np.pi * np.arange(M) / M
    x = np.linspace(0.0, np.pi, v.size)
    u = v[None, :] + (0.0 if w is None else w.to_time(M))
    return problem.forcing.du(t[:, None], x[None, :], u)


def dv_dw_directional(problem: CoefficientSet, v, w: TimeFourierField | None,
                      dw: TimeFourierField, method: str = "fd", basis=None) -> np.ndarray:
    """``D_w v[dw]`` from ``(A - eps Pi_V f_u) dv = eps Pi_V (f_u dw)``.

    ``method="fd"`` uses the banded Newton matrix; ``"spectral"`` expands in
    ``basis`` (eigenpairs of ``-(p.)' + (m - eps Pi_V f_u) .``), where the
    inverse is diagonal.
    """
    eps = problem.epsilon
    v = np.asarray(v, dtype=float)
    if eps == 0:
        return np.zeros_like(v)
    L = max(dw.L, 0 if w is None else w.L)
    M = max(16, 4 * (L + 1))
    M += M % 2
    fu = _fu_field(problem, v, w, M)
    rhs = eps * (fu * dw.to_time(M)).mean(axis=0)
    if method == "fd":
        grid = dw.grid
        op = QOperator(problem, grid)
        d = op.m - eps * fu.mean(axis=0)
        rhs[0] = rhs[-1] = 0.0
        return solve_banded((2, 2), op.banded(d), rhs)
    if method == "spectral":
        if basis is None:
            raise ValueError("spectral method needs a basis")
        coef = (basis.psi * basis.grid.weights) @ rhs / basis.c
        return (coef / basis.lambdas) @ basis.psi
    raise ValueError(f"unknown method {method!r}")


def fit_order(errors) -> float:
    """Convergence order from consecutive errors, ``log e_{k+1} ~ q log e_k``."""
    e = np.asarray([x for x in errors if x > 0], dtype=float)
    if e.size < 2:
        return np.nan
    return float(np.polyfit(np.log(e[:-1]), np.log(e[1:]), 1)[0])


def newton_order_probe(problem: CoefficientSet, sol: QSolution, w=None, direction=None,
                       deltas=(1e-4, 2e-4, 5e-4, 1e-3, 2e-3)) -> dict:
    """Local convergence order of one Newton step started at ``v* + delta*phi``.

    Fits ``log ||v1 - v*||`` against ``log delta`` over the listed offsets.
    The run log of a mildly nonlinear solve often reaches round-off after
    two steps, which leaves nothing to fit; this probe measures the same
    quantity with controlled starting errors.
    """
    grid = sol.grid
    op = QOperator(problem, grid)
    x = grid.x
    if direction is None:
        # smooth direction satisfying the boundary conditions: solve A phi = 1
        direction = op.solve(np.ones_like(x))
    phi = direction / np.abs(direction).max()
    eps = problem.epsilon
    e0, e1 = [], []
    for dl in deltas:
        v = sol.v + dl * phi
        r = op.apply(v)
        r[1:-1] -= eps * time_mean_forcing(problem, v, w)[1:-1]
        d = op.m - eps * time_mean_forcing(problem, v, w, order=1)
        v1 = v + solve_banded((2, 2), op.banded(d), -r)
        e0.append(float(np.abs(v - sol.v).max()))
        e1.append(float(np.abs(v1 - sol.v).max()))
    e0, e1 = np.array(e0), np.array(e1)
    order = float(np.polyfit(np.log(e0), np.log(e1), 1)[0])
    return {"order": order, "e0": e0, "e1": e1, "run_log_order": fit_order(sol.history)}

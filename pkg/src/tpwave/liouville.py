"""Liouville change of variables to the normal form ``-z'' + varrho z = mu z``.

With ``c = (1/pi) int sqrt(rho/p) dx`` and ``xi = g(x) = (1/c) int_0^x sqrt(rho/p)``,
the substitution ``y = z / s_factor``, ``s_factor = (p rho)^{1/4}`` turns

    -(p y')' + d y = lambda rho y

into ``-z'' + varrho(xi) z = mu z`` with ``mu = c^2 lambda`` and

    varrho = c^2 Q(psi(xi)) + c^2 d(psi(xi)) / rho(psi(xi)),
    Q = p s'' / (rho s) + (1/2) (p/rho)' s' / s.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline, PchipInterpolator

from .coefficients import BoundaryCase, CoefficientSet
from .grid import Grid

__all__ = ["LiouvilleTransform", "TransformedPotential", "HypothesisReport",
           "build_transform", "transformed_potential", "check_hypothesis2",
           "classify_case", "InsufficientGrid", "potential_from_function"]


class InsufficientGrid(RuntimeError):
    pass


@dataclass(frozen=True)
class LiouvilleTransform:
    grid: Grid
    c: float
    g: np.ndarray           # xi-coordinates of the x-grid nodes
    psi: PchipInterpolator  # xi -> x
    s_factor: np.ndarray
    s_x: np.ndarray
    s_xx: np.ndarray
    Q: np.ndarray           # x-space potential part
    q: np.ndarray           # c^2 Q on the nodes (i.e. at xi = g(x_k))
    rho: np.ndarray
    p: np.ndarray
    m: np.ndarray
    dg_dx: np.ndarray       # sqrt(rho/p)/c
    a1: float
    b1: float
    a2: float
    b2: float

    @property
    def boundary(self):
        return (self.a1, self.b1, self.a2, self.b2)


@dataclass(frozen=True)
class TransformedPotential:
    xi: np.ndarray
    varrho: np.ndarray
    vartheta: np.ndarray
    d_source: np.ndarray

    def spline(self) -> CubicSpline:
        return CubicSpline(self.xi, self.varrho)

    @property
    def rho0(self) -> float:
        return float(self.varrho.min())

    @property
    def integral(self) -> float:
        """``int_0^pi varrho(xi) d xi`` (exact integral of the interpolating spline)."""
        return _xi_integral(self.xi, self.varrho)


def _xi_integral(xi, f):
    # xi nodes are nonuniform; integrate the interpolating cubic spline exactly
    return float(CubicSpline(xi, f).integrate(xi[0], xi[-1]))


def _c_estimate(problem, n):
    x = np.linspace(0, np.pi, n + 1)
    r = np.sqrt(problem.rho(x) / problem.p(x))
    from .grid import simpson_weights
    return float(np.dot(simpson_weights(n, np.pi / n), r) / np.pi)


def build_transform(problem: CoefficientSet, grid_size: int) -> LiouvilleTransform:
    """Tabulate ``c``, ``g``, ``psi``, ``s_factor``, ``Q`` and ``a_i, b_i``.

    Raises
    ------
    InsufficientGrid
        If ``c`` changes by more than ``1e-9`` (relative) between grid
        sizes ``G/2`` and ``G``.
    """
    grid = Grid(grid_size)
    x = grid.x
    rho, rho1, rho2 = problem.rho(x), problem.rho(x, 1), problem.rho(x, 2)
    p, p1, p2 = problem.p(x), problem.p(x, 1), problem.p(x, 2)
    m = problem.m(x)
    if np.any(rho <= 0) or np.any(p <= 0):
        raise ValueError("rho and p must be positive on the grid")
    ratio = np.sqrt(rho / p)
    c = float(grid.integrate(ratio) / np.pi)
    half = grid_size // 2
    if half >= 16 and half % 2 == 0:
        c_half = _c_estimate(problem, half)
        if abs(c - c_half) > 1e-9 * c:
            raise InsufficientGrid(f"c unstable under grid doubling: {c_half!r} vs {c!r}")
    G = cumulative_simpson(ratio, x=x, initial=0.0) / c
    if abs(G[-1] - np.pi) > 1e-6:
        raise InsufficientGrid(f"g(pi) = {G[-1]!r} differs from pi")
    G *= np.pi / G[-1]
    if np.any(np.diff(G) <= 0):
        raise InsufficientGrid("g is not strictly increasing on the grid")
    psi = PchipInterpolator(G, x)

    P = p * rho
    P1 = p1 * rho + p * rho1
    P2 = p2 * rho + 2 * p1 * rho1 + p * rho2
    s = P ** 0.25
    s1 = 0.25 * P ** -0.75 * P1
    s2 = 0.25 * P ** -0.75 * P2 - (3.0 / 16.0) * P ** -1.75 * P1 ** 2
    por1 = (p1 * rho - p * rho1) / rho ** 2
    Q = p * s2 / (rho * s) + 0.5 * por1 * s1 / s

    a1 = problem.alpha1 + 0.25 * problem.beta1 * P1[0] / P[0]
    b1 = problem.beta1 / c * np.sqrt(rho[0] / p[0])
    a2 = problem.alpha2 - 0.25 * problem.beta2 * P1[-1] / P[-1]
    b2 = problem.beta2 / c * np.sqrt(rho[-1] / p[-1])
    return LiouvilleTransform(grid=grid, c=c, g=G, psi=psi, s_factor=s, s_x=s1, s_xx=s2,
                              Q=Q, q=c * c * Q, rho=rho, p=p, m=m, dg_dx=ratio / c,
                              a1=float(a1), b1=float(b1), a2=float(a2), b2=float(b2))


def transformed_potential(tr: LiouvilleTransform, d=None) -> TransformedPotential:
    """``varrho = q + vartheta`` on the xi-images of the x-grid nodes.

    ``d`` is the x-space potential on the grid; ``None`` means ``d = m``.
    """
    d = tr.m if d is None else np.asarray(d, dtype=float)
    if d.shape != tr.g.shape:
        raise ValueError("d must be tabulated on the transform's x-grid")
    vartheta = tr.c ** 2 * d / tr.rho
    return TransformedPotential(xi=tr.g, varrho=tr.q + vartheta, vartheta=vartheta,
                                d_source=d)


def potential_from_function(varrho, grid_size: int) -> TransformedPotential:
    """Normal-form potential given directly as a function of ``xi`` on a uniform grid.

    Used when the problem is posed in the transformed variables already
    (``c = 1``, ``s_factor = 1``).
    """
    xi = Grid(grid_size).x
    v = np.broadcast_to(np.asarray(varrho(xi), dtype=float), xi.shape).copy()
    return TransformedPotential(xi=xi, varrho=v, vartheta=v, d_source=v)


def classify_case(a1, b1, a2, b2, tol: float = 1e-12) -> BoundaryCase:
    z = lambda v: abs(v) <= tol
    pos = lambda v: v > tol
    if z(b1) and z(b2):
        return BoundaryCase.DIRICHLET
    if z(a1) and pos(b1) and z(a2) and pos(b2):
        return BoundaryCase.NEUMANN
    if pos(a1) and z(b1) and z(a2) and pos(b2):
        return BoundaryCase.DN_LEFT
    if z(a1) and pos(b1) and pos(a2) and z(b2):
        return BoundaryCase.DN_RIGHT
    if pos(a1) and pos(b1) and pos(a2) and pos(b2):
        return BoundaryCase.GENERAL
    return BoundaryCase.OTHER


@dataclass
class HypothesisReport:
    passed: bool
    rho0: float
    argmin_xi: float
    argmin_x: float
    signs_ok: bool
    case: BoundaryCase
    coefficients: tuple
    negative_nodes: list


def check_hypothesis2(tp: TransformedPotential, tr: LiouvilleTransform) -> HypothesisReport:
    """``varrho > 0`` on the grid and ``a_i, b_i >= 0``; classify the boundary case."""
    k = int(np.argmin(tp.varrho))
    coeffs = tr.boundary
    signs_ok = all(v >= -1e-14 for v in coeffs)
    bad = np.flatnonzero(tp.varrho <= 0).tolist()
    case = classify_case(*coeffs)
    return HypothesisReport(passed=bool(tp.varrho[k] > 0 and signs_ok), rho0=float(tp.varrho[k]),
                            argmin_xi=float(tp.xi[k]), argmin_x=float(tr.grid.x[k]),
                            signs_ok=signs_ok, case=case, coefficients=coeffs,
                            negative_nodes=bad[:50])

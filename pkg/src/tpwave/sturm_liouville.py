"""Eigenpairs of ``-z'' + varrho z = mu z`` with Robin data, by Pruefer shooting.

The Pruefer angle ``theta`` (``z = r sin(theta)``, ``z' = r kappa cos(theta)``,
``kappa = sqrt(max(mu, 1))``) is carried across a mesh on which ``varrho``
is replaced by its midpoint value. On each cell the 2x2 transfer matrix is
exact, so the only discretization error is the coefficient approximation,
which is O(h^2) uniformly in the mode index. The n-th eigenvalue solves

    theta(pi; mu) = theta_B(mu) + n pi,   theta_B in (0, pi],

and is bracketed with the two-sided asymptotic bounds, refined by a few
bisection steps and then by safeguarded secant (Illinois) steps. All
modes are shot together as one vectorized batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import cho_factor, eigh

from .coefficients import BoundaryCase, CoefficientSet
from .grid import Grid
from .liouville import (LiouvilleTransform, TransformedPotential, build_transform,
                        check_hypothesis2, classify_case, transformed_potential)

__all__ = [
    "ShootingMesh", "eigenvalues", "eigenvalue", "eigenfunctions", "SpectralBasis",
    "build_basis", "asymptotic_report", "spectral_bounds_check", "lipschitz_probe",
    "gap_report", "bracket_constants", "energy_product", "default_J",
    "oscillation_count", "BracketFailure", "HypothesisFailure",
]


class BracketFailure(RuntimeError):
    pass


class HypothesisFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class ShootingMesh:
    """Cell edges in xi, midpoint potential values and the recorded edge indices."""

    edges: np.ndarray
    qmid: np.ndarray
    record: np.ndarray  # indices into edges that coincide with the x-grid nodes

    @classmethod
    def from_potential(cls, tp: TransformedPotential, refine: int = 1):
        xi = tp.xi
        if refine > 1:
            t = np.linspace(0.0, 1.0, refine + 1)[:-1]
            edges = (xi[:-1, None] + np.diff(xi)[:, None] * t[None, :]).ravel()
            edges = np.append(edges, xi[-1])
        else:
            edges = xi.copy()
        mid = 0.5 * (edges[1:] + edges[:-1])
        qmid = CubicSpline(xi, tp.varrho)(mid)
        return cls(edges, qmid, np.arange(0, edges.size, refine))

    @property
    def widths(self):
        return np.diff(self.edges)


def _kappa(mu):
    return np.sqrt(np.maximum(np.abs(mu), 1.0))


def _theta0(mu, a1, b1):
    return np.mod(np.arctan2(b1 * _kappa(mu), a1 * np.ones_like(mu)), np.pi)


def _thetaB(mu, a2, b2):
    return np.pi - np.mod(np.arctan2(b2 * _kappa(mu), a2 * np.ones_like(mu)), np.pi)


def _sinhc(y):
    out = np.ones_like(y)
    big = y > 1e-6
    out[big] = np.sinh(y[big]) / y[big]
    out[~big] = 1.0 + y[~big] ** 2 / 6.0
    return out


def _transfer(mu, q, h):
    """Entries of the exact transfer matrix for constant potential ``q`` on width ``h``."""
    k2 = mu[None, :] - q[:, None]
    y = np.sqrt(np.abs(k2)) * h[:, None]
    ell = k2 >= 0
    t11 = np.where(ell, np.cos(y), np.cosh(np.minimum(y, 700.0)))
    t12 = h[:, None] * np.where(ell, np.sinc(y / np.pi), _sinhc(np.minimum(y, 700.0)))
    t21 = -k2 * t12
    return t11, t12, t21


def _shoot(mu, mesh: ShootingMesh, bc, record=False, block=256):
    """Return the final Pruefer angle (and optionally recorded z, z', log r)."""
    a1, b1, a2, b2 = bc
    mu = np.asarray(mu, dtype=float)
    kap = _kappa(mu)
    th0 = _theta0(mu, a1, b1)
    z = np.sin(th0)
    zp = kap * np.cos(th0)
    theta = th0.copy()
    logr = np.zeros_like(mu)
    h = mesh.widths
    C = h.size
    if record:
        nrec = mesh.record.size
        Z = np.empty((nrec, mu.size))
        ZP = np.empty((nrec, mu.size))
        LR = np.empty((nrec, mu.size))
        rec_pos = np.full(C + 1, -1)
        rec_pos[mesh.record] = np.arange(nrec)
        Z[0], ZP[0], LR[0] = z, zp, logr
    for start in range(0, C, block):
        stop = min(C, start + block)
        t11, t12, t21 = _transfer(mu, mesh.qmid[start:stop], h[start:stop])
        for i in range(stop - start):
            zn = t11[i] * z + t12[i] * zp
            zpn = t21[i] * z + t11[i] * zp
            # angle of (z'/kappa, z); the cell is small enough that |dtheta| < pi
            cross = (zp * zn - z * zpn) / kap
            dot = zp * zpn / (kap * kap) + z * zn
            theta += np.arctan2(cross, dot)
            nrm = np.sqrt(zn * zn + zpn * zpn / (kap * kap))
            z = zn / nrm
            zp = zpn / nrm
            logr += np.log(nrm)
            if record:
                j = rec_pos[start + i + 1]
                if j >= 0:
                    Z[j], ZP[j], LR[j] = z, zp, logr
    if record:
        return theta, Z, ZP, LR
    return theta


def _mismatch(mu, n, mesh, bc):
    a1, b1, a2, b2 = bc
    return _shoot(mu, mesh, bc) - _thetaB(mu, a2, b2) - n * np.pi


def bracket_constants(tp: TransformedPotential, bc) -> dict:
    a1, b1, a2, b2 = bc
    integral = tp.integral
    rho2 = np.nan
    if b1 > 0 and b2 > 0:
        rho2 = (2 / np.pi) * (a1 / b1 + a2 / b2 + 1 + integral)
    return {"rho0": float(tp.varrho.min()), "rho1": float(2 / np.pi * integral),
            "rho2": float(rho2), "rho_max": float(tp.varrho.max()), "integral": integral}


def _initial_brackets(n, case, k):
    n = n.astype(float)
    r0, r1, r2, rmax = k["rho0"], k["rho1"], k["rho2"], k["rho_max"]
    if case is BoundaryCase.NEUMANN:
        lo, hi = n ** 2 + r0, n ** 2 + r1
    elif case in (BoundaryCase.DN_LEFT, BoundaryCase.DN_RIGHT):
        lo, hi = (n + 0.5) ** 2 + r0, (n + 0.5) ** 2 + r1
    elif case is BoundaryCase.GENERAL:
        lo, hi = n ** 2 + r0, n ** 2 + r2
    elif case is BoundaryCase.DIRICHLET:
        lo, hi = (n + 1) ** 2 + r0, (n + 1) ** 2 + rmax
    else:
        lo, hi = n ** 2 + min(r0, 0.0), (n + 1) ** 2 + max(rmax, 0.0)
    hi = np.maximum(hi, lo)
    pad = 1e-9 * (1.0 + np.abs(lo)) + 1e-9 * (hi - lo)
    return lo - pad, hi + pad


def _refine_for(mu_max, mesh0_widths, qmin):
    y = np.sqrt(max(abs(mu_max - qmin), 1.0)) * mesh0_widths.max()
    return max(1, int(np.ceil(y / 1.0)))


def eigenvalues(tp: TransformedPotential, bc, indices, refine: int | None = None,
                rtol: float = 1e-14, max_iter: int = 200, report: dict | None = None):
    """Eigenvalues ``mu_n`` for the requested indices (vectorized shooting).

    Parameters
    ----------
    tp : TransformedPotential
    bc : tuple
        ``(a1, b1, a2, b2)``.
    indices : array_like of int
    refine : int, optional
        Cells per grid interval; chosen automatically so that every cell
        satisfies ``sqrt|mu - varrho| h <= 1``.
    report : dict, optional
        Receives ``widened`` (indices whose initial bracket had to grow)
        and ``iterations``.

    Raises
    ------
    BracketFailure
        If a sign change cannot be bracketed.
    """
    n = np.atleast_1d(np.asarray(indices, dtype=int))
    case = classify_case(*bc)
    k = bracket_constants(tp, bc)
    lo, hi = _initial_brackets(n, case, k)
    if refine is None:
        refine = _refine_for(hi.max() + 4 * (hi.max() - lo.min()) + 10, np.diff(tp.xi),
                             tp.varrho.min())
    mesh = ShootingMesh.from_potential(tp, refine)
    Flo = _mismatch(lo, n, mesh, bc)
    Fhi = _mismatch(hi, n, mesh, bc)
    widened = np.zeros(n.size, bool)
    step = np.maximum(hi - lo, 1.0)
    for _ in range(80):
        bad_lo = Flo >= 0
        bad_hi = Fhi <= 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        widened |= bad_lo | bad_hi
        if bad_lo.any():
            hi[bad_lo] = np.where(Flo[bad_lo] > 0, lo[bad_lo], hi[bad_lo])
            Fhi[bad_lo] = np.where(Flo[bad_lo] > 0, Flo[bad_lo], Fhi[bad_lo])
            lo[bad_lo] -= step[bad_lo]
            Flo[bad_lo] = _mismatch(lo[bad_lo], n[bad_lo], mesh, bc)
        if bad_hi.any():
            lo[bad_hi] = np.where(Fhi[bad_hi] < 0, hi[bad_hi], lo[bad_hi])
            Flo[bad_hi] = np.where(Fhi[bad_hi] < 0, Fhi[bad_hi], Flo[bad_hi])
            hi[bad_hi] += step[bad_hi]
            Fhi[bad_hi] = _mismatch(hi[bad_hi], n[bad_hi], mesh, bc)
        step *= 2
        if refine < _refine_for(hi.max(), np.diff(tp.xi), tp.varrho.min()):
            refine = _refine_for(2 * hi.max(), np.diff(tp.xi), tp.varrho.min())
            mesh = ShootingMesh.from_potential(tp, refine)
    else:
        raise BracketFailure(f"could not bracket eigenvalues for indices {n[bad_lo | bad_hi]}")

    # a few bisection steps, then Illinois-safeguarded secant
    mu = 0.5 * (lo + hi)
    for _ in range(3):
        Fm = _mismatch(mu, n, mesh, bc)
        left = Fm < 0
        lo = np.where(left, mu, lo)
        Flo = np.where(left, Fm, Flo)
        hi = np.where(left, hi, mu)
        Fhi = np.where(left, Fhi, Fm)
        mu = 0.5 * (lo + hi)
    side = np.zeros(n.size, int)
    active = np.ones(n.size, bool)
    it = 0
    while active.any() and it < max_iter:
        it += 1
        idx = np.flatnonzero(active)
        l, h_, fl, fh = lo[idx], hi[idx], Flo[idx], Fhi[idx]
        cand = h_ - fh * (h_ - l) / (fh - fl)
        bad = ~((cand > l) & (cand < h_))
        cand[bad] = 0.5 * (l[bad] + h_[bad])
        Fc = _mismatch(cand, n[idx], mesh, bc)
        left = Fc < 0
        # Illinois: halve the stale endpoint value when the same side repeats
        lo[idx] = np.where(left, cand, l)
        Flo[idx] = np.where(left, Fc, np.where(side[idx] == -1, 0.5 * fl, fl))
        hi[idx] = np.where(left, h_, cand)
        Fhi[idx] = np.where(left, np.where(side[idx] == 1, 0.5 * fh, fh), Fc)
        side[idx] = np.where(left, 1, -1)
        mu[idx] = cand
        done = (np.abs(Fc) <= 1e-15 * (1 + np.abs(n[idx]) * np.pi)) | \
               (hi[idx] - lo[idx] <= rtol * np.maximum(1.0, np.abs(cand)))
        active[idx[done]] = False
    if report is not None:
        report.update(widened=n[widened].tolist(), iterations=it, refine=refine)
    return mu


def eigenvalue(tp: TransformedPotential, bc, n: int, **kw) -> float:
    return float(eigenvalues(tp, bc, [n], **kw)[0])


def eigenfunctions(tp: TransformedPotential, bc, mus, refine: int | None = None):
    """``phi_n`` and ``phi_n'`` on the xi-images of the x-grid nodes.

    Each column is normalized to ``int_0^pi phi^2 d xi = 1`` on the grid
    (the same normalization as ``(psi, psi)_{L^2_rho} = 1`` after the
    inverse substitution). Sign: ``phi > 0`` just to the right of 0.
    """
    mus = np.atleast_1d(np.asarray(mus, dtype=float))
    if refine is None:
        refine = _refine_for(mus.max(), np.diff(tp.xi), tp.varrho.min())
    mesh = ShootingMesh.from_potential(tp, refine)
    _, Z, ZP, LR = _shoot(mus, mesh, bc, record=True)
    scale = np.exp(LR - LR.max(axis=0, keepdims=True))
    return (Z * scale).T, (ZP * scale).T


def oscillation_count(f, rtol: float = 1e-9) -> np.ndarray:
    """Interior sign changes of each row of ``f`` (near-zero samples ignored)."""
    f = np.atleast_2d(f)
    out = np.empty(f.shape[0], int)
    for i, row in enumerate(f):
        tol = rtol * np.abs(row).max()
        s = np.sign(row[1:-1][np.abs(row[1:-1]) > tol])
        out[i] = int(np.count_nonzero(s[1:] != s[:-1]))
    return out


def default_J(N_final: int, omega: float, c: float) -> int:
    return int(max(np.ceil(2 * N_final * omega * c), 64))


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenpairs ``(lambda_j, psi_j)``, ``j = 0..J`` of ``-(p y')' + d y = lambda rho y``."""

    transform: LiouvilleTransform
    potential: TransformedPotential
    mus: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    psi: np.ndarray
    dpsi: np.ndarray
    case: BoundaryCase
    constants: dict
    report: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.transform.grid

    @property
    def c(self) -> float:
        return self.transform.c

    @property
    def lambdas(self) -> np.ndarray:
        return self.mus / self.c ** 2

    @property
    def J(self) -> int:
        return self.mus.size - 1

    @property
    def rho0(self):
        return self.constants["rho0"]

    @property
    def rho1(self):
        return self.constants["rho1"]

    @property
    def rho2(self):
        return self.constants["rho2"]

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Simpson weights times ``rho/c``: ``(y, z)_{L^2_rho} = sum w y z``."""
        return self.grid.weights * self.transform.rho / self.c

    @cached_property
    def gram(self) -> np.ndarray:
        return (self.psi * self.quad_weights) @ self.psi.T

    @cached_property
    def gram_factor(self):
        return cho_factor(self.gram)

    @cached_property
    def h1_gram(self) -> np.ndarray:
        """``int psi_i psi_j + psi_i' psi_j' dx`` (derivatives from the shooting data)."""
        w = self.grid.weights
        return (self.psi * w) @ self.psi.T + (self.dpsi * w) @ self.dpsi.T

    @cached_property
    def equivalence_constants(self) -> tuple:
        """``(L1, L2)`` with ``L1 ||y||_{H^1} <= ||y||_{eps,w} <= L2 ||y||_{H^1}`` on the span."""
        H = self.h1_gram
        E = energy_matrix(self)
        ev = eigh(E, H, eigvals_only=True)
        return float(np.sqrt(ev.min())), float(np.sqrt(ev.max()))

    @property
    def L1(self):
        return self.equivalence_constants[0]

    @property
    def L2(self):
        return self.equivalence_constants[1]


def energy_product(tr: LiouvilleTransform, d, y, dy, z, dz, bc_original) -> float:
    """``(y, z)_{eps,w}`` including the Robin boundary contributions.

    ``c^{-1} [ int p y' z' + d y z dx + p(0) (alpha1/beta1) y(0) z(0)
    + p(pi) (alpha2/beta2) y(pi) z(pi) ]``; the boundary terms are dropped
    where ``beta_i = 0`` (then ``y`` vanishes there).
    """
    alpha1, beta1, alpha2, beta2 = bc_original
    w = tr.grid.weights
    val = np.sum(w * (tr.p * dy * dz + d * y * z), axis=-1)
    if beta1 != 0:
        val = val + tr.p[0] * alpha1 / beta1 * y[..., 0] * z[..., 0]
    if beta2 != 0:
        val = val + tr.p[-1] * alpha2 / beta2 * y[..., -1] * z[..., -1]
    return val / tr.c


def energy_matrix(basis: SpectralBasis) -> np.ndarray:
    tr = basis.transform
    w = tr.grid.weights
    P, dP = basis.psi, basis.dpsi
    E = (dP * (w * tr.p)) @ dP.T + (P * (w * basis.potential.d_source)) @ P.T
    a1, b1, a2, b2 = basis.report["bc_original"]
    if b1 != 0:
        E += tr.p[0] * a1 / b1 * np.outer(P[:, 0], P[:, 0])
    if b2 != 0:
        E += tr.p[-1] * a2 / b2 * np.outer(P[:, -1], P[:, -1])
    return E / tr.c


def build_basis(problem: CoefficientSet, J: int, grid_size: int = 4096, d=None,
                transform: LiouvilleTransform | None = None,
                require_hypothesis: bool = True) -> SpectralBasis:
    """Compute ``lambda_0..lambda_J`` and L^2_rho-normalized ``psi_j`` on the x-grid.

    ``d`` is the x-space potential (defaults to ``m``).

    Raises
    ------
    HypothesisFailure
        If ``varrho > 0`` or ``a_i, b_i >= 0`` fails and ``require_hypothesis``.
    """
    tr = transform or build_transform(problem, grid_size)
    tp = transformed_potential(tr, d)
    hyp = check_hypothesis2(tp, tr)
    if require_hypothesis and not hyp.passed:
        raise HypothesisFailure(
            f"transformed problem violates positivity: min varrho={hyp.rho0:.6g} at "
            f"x={hyp.argmin_x:.6g}, boundary coefficients={hyp.coefficients}")
    bc = tr.boundary
    rep = {}
    mus = eigenvalues(tp, bc, np.arange(J + 1), report=rep)
    phi, dphi = eigenfunctions(tp, bc, mus)
    s = tr.s_factor
    psi = phi / s
    dpsi = (dphi * tr.dg_dx * s - phi * tr.s_x) / s ** 2
    nrm = np.sqrt((psi ** 2) @ (tr.grid.weights * tr.rho) / tr.c)
    psi /= nrm[:, None]
    dpsi /= nrm[:, None]
    phi /= nrm[:, None]
    dphi /= nrm[:, None]
    rep["bc_original"] = (problem.alpha1, problem.beta1, problem.alpha2, problem.beta2)
    rep["hypothesis"] = hyp
    return SpectralBasis(transform=tr, potential=tp, mus=mus, phi=phi, dphi=dphi, psi=psi,
                         dpsi=dpsi, case=hyp.case, constants=bracket_constants(tp, bc),
                         report=rep)


def _shape(n, case):
    n = np.asarray(n, dtype=float)
    if case in (BoundaryCase.DN_LEFT, BoundaryCase.DN_RIGHT):
        return (n + 0.5) ** 2
    if case is BoundaryCase.DIRICHLET:
        return (n + 1.0) ** 2
    return n ** 2


@dataclass
class AsymptoticFit:
    c_hat: float
    c_hat_raw: float
    n: np.ndarray
    residual: np.ndarray
    lower: float
    upper: float
    in_bracket: bool
    bounded: bool
    case: BoundaryCase

    @property
    def passed(self):
        return self.in_bracket and self.bounded


def _unpack(mus, case, constants):
    if isinstance(mus, SpectralBasis):
        return mus.mus, mus.case, mus.constants
    return mus, case, constants


def asymptotic_report(mus, case: BoundaryCase = None, constants: dict = None,
                      n_min: int = 10, n_max: int = 40,
                      growth_factor: float = 2.0) -> AsymptoticFit:
    """Fitted constant ``c_hat`` of ``mu_n - shape(n)`` and residuals ``r_n``.

    ``c_hat`` is the median of the two-point extrapolants
    ``(n^2 e_n - (n-1)^2 e_{n-1}) / (2n - 1)``, ``e_n = mu_n - shape(n)``,
    which cancels the leading ``C/n^2`` term; the plain median of ``e_n``
    is returned as ``c_hat_raw``. ``r_n = (e_n - c_hat) n^2``. The residual
    counts as bounded when its maximum over the upper third of the window
    does not exceed ``growth_factor`` times its maximum over the lower third.
    """
    mus, case, constants = _unpack(mus, case, constants)
    if n_max < n_min + 8:
        raise ValueError("need n_max >= n_min + 8")
    mus = np.asarray(mus, dtype=float)
    n = np.arange(n_min, n_max + 1)
    e = mus[n] - _shape(n, case)
    w = n.astype(float) ** 2
    ext = (w[1:] * e[1:] - w[:-1] * e[:-1]) / (w[1:] - w[:-1])
    c_hat = float(np.median(ext))
    r = (e - c_hat) * w
    third = max(1, n.size // 3)
    lo_max = np.abs(r[:third]).max()
    hi_max = np.abs(r[-third:]).max()
    bounded = bool(np.all(np.isfinite(r)) and hi_max <= growth_factor * lo_max + 1e-9 * w[-1])
    lower = constants["rho0"]
    upper = constants["rho2"] if case is BoundaryCase.GENERAL else constants["rho1"]
    return AsymptoticFit(c_hat=c_hat, c_hat_raw=float(np.median(e)), n=n, residual=r,
                         lower=lower, upper=upper,
                         in_bracket=bool(lower - 1e-9 <= c_hat <= upper + 1e-9),
                         bounded=bounded, case=case)


def spectral_bounds_check(mus, case: BoundaryCase = None, constants: dict = None,
                          n_range=range(0, 41), tol=1e-9) -> dict:
    """Check ``shape(n) + rho0 <= mu_n <= shape(n) + upper`` over ``n_range``.

    For the general case the smallest ``N_hat`` from which the bound holds
    up to the end of the range is reported.
    """
    mus, case, constants = _unpack(mus, case, constants)
    n = np.asarray(list(n_range))
    mus = np.asarray(mus)[n]
    base = _shape(n, case)
    upper = constants["rho2"] if case is BoundaryCase.GENERAL else constants["rho1"]
    ok_lo = mus >= base + constants["rho0"] - tol * (1 + np.abs(mus))
    ok_hi = mus <= base + upper + tol * (1 + np.abs(mus))
    ok = ok_lo & ok_hi
    n_hat = None
    if ok[-1]:
        bad = np.flatnonzero(~ok)
        n_hat = int(n[bad[-1] + 1]) if bad.size else int(n[0])
    return {"n": n, "lower_ok": ok_lo, "upper_ok": ok_hi,
            "all_ok": bool(ok.all()), "N_hat": n_hat,
            "lower_strict": bool(np.all(mus > base + constants["rho0"]))}


def lipschitz_probe(problem: CoefficientSet, delta_d, n_max: int = 20, grid_size: int = 4096,
                    d=None) -> dict:
    """Eigenvalue shifts under ``d -> d + delta_d`` against ``(1/c^2) ||delta vartheta||_inf``."""
    tr = build_transform(problem, grid_size)
    base = tr.m if d is None else np.asarray(d)
    delta_d = np.broadcast_to(np.asarray(delta_d, dtype=float), base.shape)
    tp0 = transformed_potential(tr, base)
    tp1 = transformed_potential(tr, base + delta_d)
    idx = np.arange(n_max + 1)
    lam0 = eigenvalues(tp0, tr.boundary, idx) / tr.c ** 2
    lam1 = eigenvalues(tp1, tr.boundary, idx) / tr.c ** 2
    dlam = lam1 - lam0
    dvt = np.abs(tp1.vartheta - tp0.vartheta).max()
    bound = dvt / tr.c ** 2
    sup_dd = np.abs(delta_d).max()
    kappa = float(np.abs(dlam).max() / sup_dd) if sup_dd > 0 else 0.0
    holds = bool(np.all(np.abs(dlam) <= bound * (1 + 1e-7) + 1e-11))
    return {"delta_lambda": dlam, "bound": bound, "holds": holds,
            "kappa": kappa}


def gap_report(lambdas, c: float, j_max: int, j_onset: int = 10) -> dict:
    """Smallest root gap ``delta_1`` for ``j < j_max`` and the ``1/(2c)`` floor."""
    r = np.sqrt(np.asarray(lambdas, dtype=float)[: j_max + 1])
    gaps = np.diff(r)
    tail = gaps[j_onset:]
    floor = 1.0 / (2.0 * c)
    return {"delta1": float(gaps.min()), "gaps": gaps, "floor": floor,
            "tail_min": float(tail.min()) if tail.size else np.nan,
            "floor_holds": bool(tail.size and tail.min() > floor)}

"""Time-periodic fields, H^s norms, projectors and eigen-expansions.

A real field ``u(t, x) = sum_l u_l(x) e^{ilt}`` is stored through its
coefficients ``u_0, ..., u_L`` on a spatial grid; ``u_{-l} = conj(u_l)`` is
implied. Norms follow

    ||u||_s^2 = sum_{l in Z} ||u_l||_{H^1}^2 (1 + |l|^{2s}),

with ``||phi||_{H^1}^2 = int phi^2 + phi'^2 dx``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .grid import Grid

__all__ = [
    "TimeFourierField", "hs_norm", "hs_norm_direct", "project_V", "project_W",
    "project_PN", "project_PN_perp", "product", "algebra_constant",
    "embedding_constant", "sup_embedding_check", "EigenExpansion", "to_eigen",
    "from_eigen", "weighted_hs_norm", "save_field_csv", "load_field_csv",
]


def _weights(L: int, s: float) -> np.ndarray:
    """Two-sided weights folded onto l >= 0: 1 for l=0, 2(1+l^{2s}) otherwise."""
    ls = np.arange(L + 1, dtype=float)
    w = 2.0 * (1.0 + ls ** (2 * s))
    w[0] = 1.0
    return w


@dataclass(frozen=True)
class TimeFourierField:
    """Real time-periodic field. ``coeffs[l]`` is ``u_l`` on ``grid.x``."""

    coeffs: np.ndarray
    grid: Grid
    s_reference: float = 1.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 2 or c.shape[1] != self.grid.size:
            raise ValueError("coeffs must have shape (L+1, grid.size)")
        c[0] = c[0].real
        object.__setattr__(self, "coeffs", c)

    @property
    def L(self) -> int:
        return self.coeffs.shape[0] - 1

    @classmethod
    def zeros(cls, grid: Grid, L: int, s: float = 1.0):
        return cls(np.zeros((L + 1, grid.size), complex), grid, s)

    @classmethod
    def constant_in_time(cls, phi, grid: Grid, L: int = 0, s: float = 1.0):
        c = np.zeros((L + 1, grid.size), complex)
        c[0] = phi
        return cls(c, grid, s)

    @classmethod
    def from_time(cls, samples, grid: Grid, K: int, s: float = 1.0):
        """Coefficients ``0..K`` from samples on ``t_m = 2 pi m / M``."""
        samples = np.asarray(samples, dtype=float)
        M = samples.shape[0]
        F = np.fft.rfft(samples, axis=0) / M
        out = np.zeros((K + 1, grid.size), complex)
        k = min(K, F.shape[0] - 1)
        out[: k + 1] = F[: k + 1]
        if M % 2 == 0 and k == M // 2:
            out[k] *= 0.5  # Nyquist line is shared between +-M/2
        return cls(out, grid, s)

    def to_time(self, M: int) -> np.ndarray:
        """Samples on ``M`` equispaced times (``M > 2L`` avoids aliasing)."""
        if M <= 2 * self.L:
            raise ValueError(f"need more than {2 * self.L} time samples, got {M}")
        F = np.zeros((M // 2 + 1, self.grid.size), complex)
        F[: self.L + 1] = self.coeffs
        return np.fft.irfft(F * M, n=M, axis=0)

    def truncate(self, L: int) -> "TimeFourierField":
        c = np.zeros((L + 1, self.grid.size), complex)
        k = min(L, self.L)
        c[: k + 1] = self.coeffs[: k + 1]
        return TimeFourierField(c, self.grid, self.s_reference)

    def __add__(self, other):
        L = max(self.L, other.L)
        a, b = self.truncate(L), other.truncate(L)
        return TimeFourierField(a.coeffs + b.coeffs, self.grid, self.s_reference)

    def __sub__(self, other):
        return self + other * (-1.0)

    def __mul__(self, scalar):
        return TimeFourierField(self.coeffs * scalar, self.grid, self.s_reference)

    __rmul__ = __mul__

    def conj_symmetry_defect(self) -> float:
        return float(np.abs(self.coeffs[0].imag).max())

    def boundary_residual(self, problem) -> float:
        """Largest boundary-condition defect over all stored ``l``."""
        d = self.grid.deriv(self.coeffs, axis=1)
        r1 = problem.alpha1 * self.coeffs[:, 0] - problem.beta1 * d[:, 0]
        r2 = problem.alpha2 * self.coeffs[:, -1] + problem.beta2 * d[:, -1]
        return float(max(np.abs(r1).max(), np.abs(r2).max()))


def hs_norm(u: TimeFourierField, s: float | None = None) -> float:
    """``||u||_s``; ``s`` defaults to ``u.s_reference``."""
    s = u.s_reference if s is None else s
    if s <= 0.5:
        raise ValueError("H^s norms need s > 1/2")
    h1 = u.grid.h1_norm_sq(u.coeffs, axis=1)
    return float(np.sqrt(np.dot(_weights(u.L, s), h1)))


def hs_norm_direct(u: TimeFourierField, s: float) -> float:
    """Term-by-term reference summation over ``l in [-L, L]``."""
    total = 0.0
    for l in range(-u.L, u.L + 1):
        c = u.coeffs[abs(l)] if l >= 0 else np.conj(u.coeffs[-l])
        d = np.gradient(c, u.grid.h, edge_order=2)
        h1 = np.sum(u.grid.weights * (np.abs(c) ** 2 + np.abs(d) ** 2))
        total += h1 * (1.0 + abs(l) ** (2 * s))
    return float(np.sqrt(total))


def project_V(u: TimeFourierField) -> TimeFourierField:
    c = np.zeros_like(u.coeffs)
    c[0] = u.coeffs[0]
    return TimeFourierField(c, u.grid, u.s_reference)


def project_W(u: TimeFourierField) -> TimeFourierField:
    c = u.coeffs.copy()
    c[0] = 0.0
    return TimeFourierField(c, u.grid, u.s_reference)


def project_PN(u: TimeFourierField, N: int) -> TimeFourierField:
    c = u.coeffs.copy()
    c[N + 1:] = 0.0
    return TimeFourierField(c, u.grid, u.s_reference)


def project_PN_perp(u: TimeFourierField, N: int) -> TimeFourierField:
    c = u.coeffs.copy()
    c[: N + 1] = 0.0
    return TimeFourierField(c, u.grid, u.s_reference)


def product(u: TimeFourierField, v: TimeFourierField, L_max: int | None = None,
            report_tail: bool = False):
    """Pointwise product; exact discrete convolution of the coefficient sequences.

    The result keeps ``|l| <= L_u + L_v`` (or ``L_max`` if given). With
    ``report_tail`` the discarded ``H^1``-mass of the dropped modes is also
    returned.
    """
    Lfull = u.L + v.L
    M = 2 * Lfull + 2
    prod = u.to_time(M) * v.to_time(M)
    full = TimeFourierField.from_time(prod, u.grid, Lfull, u.s_reference)
    L = Lfull if L_max is None else min(L_max, Lfull)
    out = full.truncate(L)
    if report_tail:
        tail = project_PN_perp(full, L)
        return out, float(np.sqrt(np.sum(2 * u.grid.h1_norm_sq(tail.coeffs, axis=1))))
    return out


def algebra_constant(s: float, kmax: int = 200000) -> float:
    """``C(s)`` with ``C(s)^2 = 2^{2s} sum_{k in Z} 1/(1+|k|^{2s})``.

    The tail beyond ``kmax`` is added through the integral comparison
    ``sum_{k>K} k^{-2s} <= K^{1-2s}/(2s-1)``.
    """
    return float(np.sqrt(4.0 ** s * _zeta_like(s, kmax)))


def embedding_constant(s: float, kmax: int = 200000) -> float:
    """``C(s)`` with ``C(s)^2 = sum_{l in Z} 1/(1+|l|^{2s})``."""
    return float(np.sqrt(_zeta_like(s, kmax)))


def _zeta_like(s, kmax):
    if s <= 0.5:
        raise ValueError("needs s > 1/2")
    k = np.arange(1, kmax + 1, dtype=float)
    body = 1.0 + 2.0 * np.sum(1.0 / (1.0 + k ** (2 * s)))
    tail = 2.0 * kmax ** (1 - 2 * s) / (2 * s - 1)
    return body + tail


def sup_embedding_check(u: TimeFourierField, s: float, n_time: int | None = None) -> dict:
    """Compare ``max_t ||u(t)||_{H^1}`` with ``C(s) ||u||_s``."""
    M = n_time or max(64, 16 * (u.L + 1))
    samples = u.to_time(M)
    sup = float(np.sqrt(u.grid.h1_norm_sq(samples, axis=1)).max())
    bound = embedding_constant(s) * hs_norm(u, s)
    return {"sup": sup, "bound": bound, "slack": bound - sup, "holds": sup <= bound * (1 + 1e-12)}


@dataclass(frozen=True)
class EigenExpansion:
    """Coefficients ``h[l, j]`` (``0 <= l <= N``, ``0 <= j <= J``) against a basis."""

    coeffs: np.ndarray
    basis: object

    @property
    def N(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def J(self) -> int:
        return self.coeffs.shape[1] - 1


def to_eigen(u: TimeFourierField, basis, N: int | None = None) -> EigenExpansion:
    """Weighted least-squares projection onto ``span{psi_j}`` for each ``l``.

    For an orthonormal tabulation this is ``h_{l,j} = (u_l, psi_j)_{L^2_rho}``.
    """
    N = u.L if N is None else N
    U = u.truncate(N).coeffs
    rhs = (U * basis.quad_weights[None, :]) @ basis.psi.T
    coef = cho_solve(basis.gram_factor, rhs.T).T
    return EigenExpansion(coef, basis)


def from_eigen(e: EigenExpansion, grid: Grid | None = None, s: float = 1.0) -> TimeFourierField:
    return TimeFourierField(e.coeffs @ e.basis.psi, grid or e.basis.grid, s)


def weighted_hs_norm(e: EigenExpansion, s: float) -> float:
    """``(sum_{l,j} lambda_j |h_{l,j}|^2 (1 + |l|^{2s}))^{1/2}`` over ``l in Z``.

    Equivalent to ``||.||_s`` on ``span{psi_j}`` (constants ``L1``, ``L2``).
    """
    w = _weights(e.N, s)
    lam = e.basis.lambdas[: e.J + 1]
    return float(np.sqrt(np.sum(w[:, None] * lam[None, :] * np.abs(e.coeffs) ** 2)))


def save_field_csv(u: TimeFourierField, path, meta: dict | None = None) -> None:
    """CSV ``l, node_index, re, im`` plus a JSON sidecar ``<path>.meta.json``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["l", "node_index", "re", "im"])
        for l in range(u.L + 1):
            for k in range(u.grid.size):
                z = u.coeffs[l, k]
                w.writerow([l, k, repr(float(z.real)), repr(float(z.imag))])
    side = {"grid_size": u.grid.n, "s": u.s_reference, "N": u.L}
    side.update(meta or {})
    with open(str(path) + ".meta.json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)


def load_field_csv(path) -> TimeFourierField:
    with open(str(path) + ".meta.json") as fh:
        meta = json.load(fh)
    grid = Grid(int(meta["grid_size"]))
    c = np.zeros((int(meta["N"]) + 1, grid.size), complex)
    with open(path) as fh:
        r = csv.reader(fh)
        next(r)
        for l, k, re_, im_ in r:
            c[int(l), int(k)] = complex(float(re_), float(im_))
    return TimeFourierField(c, grid, float(meta["s"]))

"""Truncated linearized operator of the range equation and its inversion.

Unknowns are ``h = sum_{1<=|l|<=N} sum_j hhat[l, j] psi_j(x) e^{ilt}`` with
``hhat[-l] = conj(hhat[l])``; only ``l = 1..N`` is stored. Equations are
tested against ``psi_i`` with ``c^{-1} int . dx`` (the operator divided by
``rho``, written in the ``L^2_rho``-orthonormal basis), which gives

    (Lh)[k, i] = (omega^2 k^2 - lambda_i) hhat[k, i]
                 + eps sum_{l != k} (a_{k-l} psi_j, psi_i) hhat[l, j]
                 + eps^2 (a_k G Pi_V(a h), psi_i),

with ``a = f_u(t, x, v + w)``, ``G`` the inverse of
``-(p.)' + (m - eps a_0).`` and ``lambda_j`` the eigenvalues of that
operator (so the ``a_0`` block is absorbed into the diagonal).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import lapack, lu_factor, lu_solve
from scipy.sparse.linalg import LinearOperator, gmres

from .spaces import TimeFourierField

__all__ = [
    "LinearizedOperator", "varpi_table", "melnikov_check", "MelnikovReport",
    "invert_dense", "invert_series", "contraction_ratio", "tame_estimate_probe",
    "f1_product_bound_probe", "fit_N_constant", "NearResonance", "SeriesDiverges",
    "TruncationInsufficient", "save_varpi_csv", "fit_exponent", "empirical_omega_min",
]


class NearResonance(RuntimeError):
    pass


class SeriesDiverges(RuntimeError):
    pass


class TruncationInsufficient(RuntimeError):
    def __init__(self, msg, required_J=None):
        super().__init__(msg)
        self.required_J = required_J


def _sigma(tau):
    return tau * (tau - 1.0) / (2.0 - tau)


# ---------------------------------------------------------------- small divisors

def varpi_table(lambdas, omega: float, N: int) -> dict:
    """``varpi_l = min_j |omega^2 l^2 - lambda_j|`` and the minimizer ``j*`` for ``l = 1..N``.

    ``truncated`` flags rows whose minimizer is the last available index, so
    the true minimum may lie beyond the truncation.
    """
    lam = np.asarray(lambdas, dtype=float)
    l = np.arange(1, N + 1)
    D = np.abs((omega * l[:, None]) ** 2 - lam[None, :])
    j = D.argmin(axis=1)
    trunc = (j == lam.size - 1) | ((omega * l) ** 2 > lam[-1])
    return {"l": l, "varpi": D[np.arange(N), j], "j_star": j, "truncated": trunc}


@dataclass
class MelnikovReport:
    passed: bool
    lambda_violations: list
    jc_violations: list
    worst_lambda_margin: float
    worst_jc_margin: float
    required_J: int
    strict: bool = False

    @property
    def jc_passed(self) -> bool:
        return not self.jc_violations


def melnikov_check(lambdas, c: float, omega: float, gamma: float, tau: float, N: int,
                   strict: bool = False, shift: float = 0.0) -> MelnikovReport:
    """Check ``|omega^2 l^2 - lambda_j| > gamma omega / l^{tau-1}`` for ``1 <= l <= N``.

    The second family ``|omega l - (j + shift)/c| > gamma / l^tau`` is always
    evaluated and reported; it gates ``passed`` only with ``strict=True``.
    Indices beyond ``j > c omega N + 2`` satisfy both conditions because the
    divisors increase there, so the scan stops at that point.

    Raises
    ------
    TruncationInsufficient
        If the spectrum does not reach ``(omega N + 1)^2``.
    """
    if not (1 < tau < 2 and 0 < gamma < 1):
        raise ValueError("need 1 < tau < 2 and 0 < gamma < 1")
    lam = np.asarray(lambdas, dtype=float)
    need = int(np.ceil(c * omega * N + 2))
    if lam[-1] < (omega * N + 1) ** 2:
        raise TruncationInsufficient(
            f"spectrum ends at lambda={lam[-1]:.4g}; need beyond {(omega * N + 1) ** 2:.4g}",
            required_J=need)
    l = np.arange(1, N + 1, dtype=float)
    J1 = min(lam.size, need + 1)
    div = np.abs((omega * l[:, None]) ** 2 - lam[None, :J1])
    floor = gamma * omega / l ** (tau - 1)
    marg = div - floor[:, None]
    bad = np.argwhere(marg <= 0)
    j = np.arange(need + 1, dtype=float)
    jc = np.abs(omega * l[:, None] - (j[None, :] + shift) / c)
    jfloor = gamma / l ** tau
    jmarg = jc - jfloor[:, None]
    jbad = np.argwhere(jmarg <= 0)
    lv = [(int(a + 1), int(b)) for a, b in bad]
    jv = [(int(a + 1), int(b)) for a, b in jbad]
    ok = not lv and (not strict or not jv)
    return MelnikovReport(passed=ok, lambda_violations=lv, jc_violations=jv,
                          worst_lambda_margin=float(marg.min()),
                          worst_jc_margin=float(jmarg.min()), required_J=need, strict=strict)


def save_varpi_csv(path, lambdas, omega, gamma, tau, N) -> None:
    tab = varpi_table(lambdas, omega, N)
    with open(path, "w") as fh:
        fh.write("l,j_star,varpi_l,floor\n")
        for l, j, v in zip(tab["l"], tab["j_star"], tab["varpi"]):
            fh.write(f"{l},{j},{v!r},{gamma * omega / l ** (tau - 1)!r}\n")


def fit_N_constant(lambdas, omega: float, N: int) -> dict:
    """Largest ``frakN`` with ``j*(l) >= frakN * omega * l`` for ``2 <= l <= N``."""
    tab = varpi_table(lambdas, omega, N)
    l = tab["l"][1:]
    r = tab["j_star"][1:] / (omega * l)
    return {"frakN": float(r.min()) if r.size else np.nan, "ratios": r,
            "omega_min_ok": bool(np.all(tab["j_star"] >= 1))}


def empirical_omega_min(lambdas) -> float:
    """Smallest ``omega`` with ``j*(l) >= 1`` for every ``l >= 1``.

    ``j*(l)`` leaves ``0`` once ``omega^2 l^2`` passes the midpoint of
    ``lambda_0`` and ``lambda_1``; ``l = 1`` is the binding case. Ties go to
    the lower index, so the bound itself is excluded.
    """
    lam = np.asarray(lambdas, dtype=float)
    return float(np.sqrt(0.5 * (lam[0] + lam[1])))


def fit_exponent(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------- operator

@dataclass
class LinearizedOperator:
    """``L_N`` at fixed ``(eps, omega, w)`` on ``l = 1..N``, ``j = 0..J``.

    Parameters
    ----------
    basis : SpectralBasis
        Eigenpairs for ``d = m - eps a_0``.
    a : TimeFourierField
        Time coefficients of ``f_u(t, x, v + w)``.
    include_response : bool
        Include the ``D_w v`` correction.
    """

    basis: object
    a: TimeFourierField
    epsilon: float
    omega: float
    N: int
    include_response: bool = True
    J: int | None = None
    stats: dict = field(default_factory=lambda: {"applies": 0})

    def __post_init__(self):
        if self.J is None:
            self.J = self.basis.J
        self.J = min(self.J, self.basis.J)
        Ka = min(self.a.L, 2 * self.N)
        self._a = self.a.truncate(Ka)
        self._psi = self.basis.psi[: self.J + 1]
        self._wq = self.basis.grid.weights / self.basis.c
        self._lam = self.basis.lambdas[: self.J + 1]

    # shapes ---------------------------------------------------------
    @property
    def shape2(self):
        return (self.N, self.J + 1)

    @property
    def size(self) -> int:
        return 2 * self.N * (self.J + 1)

    def to_vec(self, H) -> np.ndarray:
        return np.concatenate([H.real.ravel(), H.imag.ravel()])

    def from_vec(self, x) -> np.ndarray:
        n = x.size // 2
        return (x[:n] + 1j * x[n:]).reshape(self.shape2)

    # diagonal -------------------------------------------------------
    @cached_property
    def diag(self) -> np.ndarray:
        l = np.arange(1, self.N + 1)
        return (self.omega * l[:, None]) ** 2 - self._lam[None, :]

    @property
    def signs(self) -> np.ndarray:
        return np.sign(self.diag)

    @cached_property
    def varpi(self) -> dict:
        return varpi_table(self.basis.lambdas, self.omega, self.N)

    def weights(self, s: float) -> np.ndarray:
        """Norm weights ``2 lambda_j (1 + l^{2s})`` (both signs of ``l`` folded)."""
        l = np.arange(1, self.N + 1, dtype=float)
        return 2.0 * self._lam[None, :] * (1.0 + l[:, None] ** (2 * s))

    def norm(self, H, s: float) -> float:
        return float(np.sqrt(np.sum(self.weights(s) * np.abs(H) ** 2)))

    # application ----------------------------------------------------
    def synthesize(self, H) -> TimeFourierField:
        c = np.zeros((self.N + 1, self._psi.shape[1]), complex)
        c[1:] = H @ self._psi
        return TimeFourierField(c, self.basis.grid)

    def project(self, G) -> np.ndarray:
        """``c^{-1} int g_k psi_i dx`` for each row ``g_k`` of ``G``."""
        return (G * self._wq) @ self._psi.T

    def apply_offdiag(self, H) -> np.ndarray:
        """``eps`` times the coupling part (no diagonal)."""
        if self.epsilon == 0 or self._a.L == 0 and not self.include_response:
            return np.zeros(self.shape2, complex)
        self.stats["applies"] += 1
        N, Ka = self.N, self._a.L
        hx = np.zeros((N + 1, self._psi.shape[1]), complex)
        hx[1:] = H @ self._psi
        M = 2 * (2 * N + Ka) + 2
        ht = np.fft.irfft(_pad(hx, M // 2 + 1) * M, n=M, axis=0)
        at = np.fft.irfft(_pad(self._a.coeffs, M // 2 + 1) * M, n=M, axis=0)
        prod = np.fft.rfft(at * ht, axis=0) / M
        G = prod[1: N + 1] - self._a.coeffs[0][None, :] * hx[1:]
        out = self.epsilon * self.project(G)
        if self.include_response:
            mean = prod[0].real
            q = self.epsilon * (mean * self.basis.grid.weights) @ self.basis.psi.T / self.basis.c
            dv = (q / self.basis.lambdas) @ self.basis.psi
            ak = np.zeros((N, self._psi.shape[1]), complex)
            k = min(N, Ka)
            ak[:k] = self._a.coeffs[1: k + 1]
            out += self.epsilon * self.project(ak * dv[None, :])
        return out

    def apply(self, H) -> np.ndarray:
        return self.diag * H + self.apply_offdiag(H)

    # dense assembly (small sizes) ------------------------------------
    def dense(self, max_size: int = 6000) -> np.ndarray:
        """Real ``size x size`` matrix acting on ``[Re hhat, Im hhat]``."""
        n = self.size
        if n > max_size:
            raise MemoryError(f"dense assembly of size {n} exceeds {max_size}")
        Nn, J1 = self.shape2
        P, wq = self._psi, self._wq
        Ka = self._a.L
        A = {}
        for m in range(0, min(Ka, 2 * Nn) + 1):
            A[m] = (P * (wq * self._a.coeffs[m])) @ P.T
        zero = np.zeros((J1, J1), complex)

        def Am(m):
            if abs(m) > Ka:
                return zero
            return A[m] if m >= 0 else A[-m].conj()

        # complex blocks: X couples hhat[l], Y couples conj(hhat[l])
        X = np.zeros((Nn, J1, Nn, J1), complex)
        Y = np.zeros_like(X)
        for k in range(1, Nn + 1):
            for l in range(1, Nn + 1):
                if l != k:
                    X[k - 1, :, l - 1, :] = self.epsilon * Am(k - l)
                Y[k - 1, :, l - 1, :] = self.epsilon * Am(k + l)
        if self.include_response and self.epsilon != 0:
            Pf = self.basis.psi
            lamf = self.basis.lambdas
            # B_m[q, j] = c^{-1} int a_m psi_q(full) psi_j(trunc); G diagonal 1/lambda
            Bm = {m: (Pf * (wq * self._a.coeffs[m])) @ P.T for m in range(0, min(Ka, Nn) + 1)}

            def B(m):
                if abs(m) > Ka:
                    return np.zeros((Pf.shape[0], J1), complex)
                return Bm[m] if m >= 0 else Bm[-m].conj()

            e2 = self.epsilon ** 2
            for k in range(1, Nn + 1):
                left = B(k).T / lamf[None, :] if k <= Ka else None
                if left is None:
                    continue
                for l in range(1, Nn + 1):
                    X[k - 1, :, l - 1, :] += e2 * left @ B(-l)
                    Y[k - 1, :, l - 1, :] += e2 * left @ B(l)
        X = X.reshape(Nn * J1, Nn * J1)
        Y = Y.reshape(Nn * J1, Nn * J1)
        X[np.diag_indices_from(X)] += self.diag.ravel()
        # (X h + Y conj h) split into real/imag parts
        top = np.hstack([X.real + Y.real, -X.imag + Y.imag])
        bot = np.hstack([X.imag + Y.imag, X.real - Y.real])
        return np.vstack([top, bot])


def _pad(c, n):
    out = np.zeros((n,) + c.shape[1:], complex)
    k = min(n, c.shape[0])
    out[:k] = c[:k]
    return out


# ---------------------------------------------------------------- inversion

@dataclass
class InverseResult:
    H: np.ndarray
    backward_error: float
    info: dict = field(default_factory=dict)


def invert_dense(op: LinearizedOperator, rhs, cond_limit: float = 1e12) -> InverseResult:
    """Reference solve by LU with partial pivoting; reports the 1-norm condition estimate.

    Raises
    ------
    NearResonance
        If the condition estimate exceeds ``cond_limit``.
    """
    A = op.dense()
    b = op.to_vec(np.asarray(rhs, dtype=complex))
    lu, piv = lu_factor(A)
    anorm = np.abs(A).sum(axis=0).max()
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    cond = 1.0 / max(rcond, 1e-300)
    if cond > cond_limit:
        raise NearResonance(f"condition estimate {cond:.3e} exceeds {cond_limit:.1e}")
    x = lu_solve((lu, piv), b)
    be = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300))
    return InverseResult(op.from_vec(x), be, {"condition": cond})


def _R(op: LinearizedOperator, H):
    """``R h = -S |D|^{-1/2} (offdiag) |D|^{-1/2} h``."""
    r = 1.0 / np.sqrt(np.abs(op.diag))
    return -op.signs * r * op.apply_offdiag(r * H)


def _RT(op: LinearizedOperator, H):
    # transpose in the real pairing: the coupling part is symmetric
    r = 1.0 / np.sqrt(np.abs(op.diag))
    return -r * op.apply_offdiag(r * op.signs * H)


def contraction_ratio(op: LinearizedOperator, s: float = 1.0, iters: int = 30, seed: int = 0,
                      tol: float = 1e-3) -> float:
    """``sup_h ||R h||_s / ||h||_s`` by power iteration on ``R^T R`` in the weighted norm."""
    if op.epsilon == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    w = np.sqrt(op.weights(s))
    H = rng.standard_normal(op.shape2) + 1j * rng.standard_normal(op.shape2)
    H /= np.linalg.norm(H)
    est = 0.0
    for _ in range(iters):
        # K = W^{1/2} R W^{-1/2};  K^T K
        y = w * _R(op, H / w)
        z = _RT(op, y * w) / w
        nz = np.linalg.norm(z)
        new = np.sqrt(nz)
        if nz == 0:
            return 0.0
        H = z / nz
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(est)


def invert_series(op: LinearizedOperator, rhs, max_terms: int = 60, tol: float = 1e-14,
                  s: float = 1.0, ratio: float | None = None, check_ratio: bool = True
                  ) -> InverseResult:
    """``L^{-1} = |D|^{-1/2} (sum_k R^k) S |D|^{-1/2}`` summed until terms drop below ``tol``.

    Raises
    ------
    SeriesDiverges
        If the measured contraction ratio is ``>= 1`` or the terms stop decreasing.
    """
    rhs = np.asarray(rhs, dtype=complex)
    if check_ratio and ratio is None:
        ratio = contraction_ratio(op, s)
    if ratio is not None and ratio >= 1.0:
        raise SeriesDiverges(f"contraction ratio {ratio:.3f} >= 1")
    r = 1.0 / np.sqrt(np.abs(op.diag))
    term = op.signs * r * rhs
    acc = term.copy()
    nb = np.linalg.norm(acc)
    terms = 1
    history = [nb]
    while terms < max_terms and np.linalg.norm(term) > tol * max(nb, 1e-300):
        term = _R(op, term)
        acc += term
        terms += 1
        history.append(float(np.linalg.norm(term)))
        if terms > 4 and history[-1] > history[-2] > history[-3]:
            raise SeriesDiverges("series terms are growing")
    H = r * acc
    res = op.apply(H) - rhs
    be = float(np.linalg.norm(res) / max(np.linalg.norm(rhs), 1e-300))
    return InverseResult(H, be, {"terms": terms, "ratio": ratio, "term_norms": history})


def invert_gmres(op: LinearizedOperator, rhs, tol: float = 1e-13, maxiter: int = 200
                 ) -> InverseResult:
    """Matrix-free GMRES with the diagonal as preconditioner (fallback path)."""
    rhs = np.asarray(rhs, dtype=complex)
    n = op.size
    dinv = 1.0 / np.concatenate([op.diag.ravel(), op.diag.ravel()])
    A = LinearOperator((n, n), matvec=lambda x: op.to_vec(op.apply(op.from_vec(x))), dtype=float)
    Mp = LinearOperator((n, n), matvec=lambda x: dinv * x, dtype=float)
    b = op.to_vec(rhs)
    x, info = gmres(A, b, M=Mp, rtol=tol, atol=0.0, restart=60, maxiter=maxiter)
    H = op.from_vec(x)
    be = float(np.linalg.norm(op.apply(H) - rhs) / max(np.linalg.norm(rhs), 1e-300))
    return InverseResult(H, be, {"gmres_info": info})


# ---------------------------------------------------------------- probes

def tame_estimate_probe(make_op, Ns=(4, 8, 16, 32), s: float = 1.0, tau: float = 1.5,
                        gamma: float = 0.1, iters: int = 25, seed: int = 0) -> dict:
    """Fitted ``N``-exponent of ``sup_h ||L_N^{-1} h||_s / ||h||_s``.

    ``make_op(N)`` returns the operator at truncation ``N``. The supremum is
    estimated by power iteration on ``(W^{1/2} L^{-1} W^{-1/2})^T (...)``,
    using the symmetry of ``L``.
    """
    rng = np.random.default_rng(seed)
    sups, Ks = [], []
    for N in Ns:
        op = make_op(N)
        w = np.sqrt(op.weights(s))
        H = rng.standard_normal(op.shape2) + 1j * rng.standard_normal(op.shape2)
        H /= np.linalg.norm(H)
        inv = (lambda b: invert_series(op, b, s=s, check_ratio=False).H) if op.epsilon else \
              (lambda b: b / op.diag)
        est = 0.0
        for _ in range(iters):
            y = w * inv(H / w)
            # L symmetric => (W^{1/2} L^{-1} W^{-1/2})^T = W^{-1/2} L^{-1} W^{1/2}
            z = inv(y * w) / w
            nz = np.linalg.norm(z)
            new = np.sqrt(nz)
            H = z / nz
            if abs(new - est) <= 1e-4 * new:
                est = new
                break
            est = new
        sups.append(est)
        Ks.append(est * gamma * op.omega / N ** (tau - 1))
    Ns = np.asarray(Ns, dtype=float)
    sups = np.asarray(sups)
    return {"N": Ns, "sup_ratio": sups, "exponent": fit_exponent(Ns, sups),
            "K": np.asarray(Ks), "bound_exponent": tau - 1}


def f1_product_bound_probe(lambdas, gamma: float, tau: float, omega: float, N: int) -> dict:
    """Empirical ``1/L = max gamma^3 omega / (sqrt(varpi_l varpi_k) |k-l|^sigma)`` over ``l != k``.

    Also checks the far-pair branch: for ``2|k-l| > max(k,l)^varsigma``,
    ``varpi_l varpi_k >= (gamma omega)^2 / (2^{2(tau-1)/varsigma} |k-l|^{2(tau-1)/varsigma})``
    whenever both ``varpi`` satisfy the divisor floor.
    """
    vs = (2.0 - tau) / tau
    sigma = (tau - 1.0) / vs
    tab = varpi_table(lambdas, omega, N)
    v = tab["varpi"]
    l = tab["l"]
    K, Lg = np.meshgrid(l, l, indexing="ij")
    off = K != Lg
    dist = np.abs(K - Lg).astype(float)
    prod = np.sqrt(v[:, None] * v[None, :])
    with np.errstate(divide="ignore"):
        q = np.where(off, gamma ** 3 * omega / (prod * np.where(off, dist, 1.0) ** sigma), 0.0)
    inv_L = float(q.max())
    far = off & (2 * dist > np.maximum(K, Lg) ** vs)
    expo = 2 * (tau - 1) / vs
    rhs = (gamma * omega) ** 2 / (2 ** expo * np.where(far, dist, 1.0) ** expo)
    floor_ok = v > gamma * omega / l ** (tau - 1)
    both = far & floor_ok[:, None] & floor_ok[None, :]
    branch_ok = bool(np.all((v[:, None] * v[None, :])[both] >= rhs[both] * (1 - 1e-12)))
    L = 1.0 / inv_L if inv_L > 0 else np.inf
    viol = np.argwhere(off & (1.0 / prod > dist ** sigma / (L * gamma ** 3 * omega) * (1 + 1e-12)))
    return {"L": L, "inv_L": inv_L, "sigma": sigma, "varsigma": vs, "violations": viol.tolist(),
            "far_pairs": int(far.sum()), "far_branch_ok": branch_ok,
            "argmax": tuple(int(i) + 1 for i in np.unravel_index(q.argmax(), q.shape))}

"""Independent reference computations used only by the test suite."""
import numpy as np
from scipy.linalg import eigh_tridiagonal


def fd_normal_form(varrho, bc, M):
    """Symmetric tridiagonal FD discretization of ``-z'' + varrho z`` on ``[0, pi]``.

    Ghost-point Robin rows, symmetrized with trapezoid weights. Returns the
    diagonal, off-diagonal, node coordinates and the node weights.
    """
    a1, b1, a2, b2 = bc
    h = np.pi / M
    x = np.linspace(0.0, np.pi, M + 1)
    q = varrho(x)
    d = 2.0 / h ** 2 + q
    e = -np.ones(M) / h ** 2
    w = np.ones(M + 1)
    keep = np.ones(M + 1, bool)
    if b1 != 0:
        d[0] = (1.0 + h * a1 / b1) / h ** 2 + 0.5 * q[0]
        w[0] = 0.5
    else:
        keep[0] = False
    if b2 != 0:
        d[-1] = (1.0 + h * a2 / b2) / h ** 2 + 0.5 * q[-1]
        w[-1] = 0.5
    else:
        keep[-1] = False
    idx = np.flatnonzero(keep)
    d, w = d[idx], w[idx]
    e = e[idx[:-1]]
    # W^{-1/2} A W^{-1/2}
    s = 1.0 / np.sqrt(w)
    return d * s * s, e * s[:-1] * s[1:], x[idx], s


def fd_eigenvalues(varrho, bc, n_max, M=8000, extrapolate=True):
    """First ``n_max + 1`` eigenvalues, Richardson-extrapolated from ``M`` and ``2M``."""
    def solve(m):
        d, e, _, _ = fd_normal_form(varrho, bc, m)
        return eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, n_max))
    coarse = solve(M)
    if not extrapolate:
        return coarse
    fine = solve(2 * M)
    return (4.0 * fine - coarse) / 3.0


def fd_eigenvectors(varrho, bc, n_max, M=8000):
    """Eigenvectors on the FD nodes, normalized to unit L2 norm and ``z > 0`` near 0."""
    d, e, x, s = fd_normal_form(varrho, bc, M)
    lam, V = eigh_tridiagonal(d, e, select="i", select_range=(0, n_max))
    V = V * s[:, None]
    h = np.pi / M
    wts = np.full(x.size, h)
    wts[0] = wts[-1] = h / 2
    V /= np.sqrt((V ** 2 * wts[:, None]).sum(axis=0))
    for k in range(V.shape[1]):
        j = np.flatnonzero(np.abs(V[:, k]) > 1e-8 * np.abs(V[:, k]).max())[0]
        # first clearly nonzero sample decides the sign, matching the shooting convention
        if V[min(j + 1, x.size - 1), k] < 0:
            V[:, k] *= -1
    return lam, x, V


def cosine_basis(n_x, J):
    """Eigenpairs of ``-y'' + y = lambda y`` with Neumann conditions on ``[0, pi]``.

    ``psi_j`` are orthonormal for ``(1/c) int psi_i psi_j`` with ``c = 1``.
    Returns ``(lambdas, x, psi)`` with ``psi`` shaped ``(J+1, n_x+1)``.
    """
    x = np.linspace(0.0, np.pi, n_x + 1)
    j = np.arange(J + 1)
    psi = np.cos(np.outer(j, x)) * np.sqrt(2.0 / np.pi)
    psi[0] = 1.0 / np.sqrt(np.pi)
    return j ** 2 + 1.0, x, psi


def galerkin_newton(lambdas, psi, x, c, omega, eps, f, fu, N, M=None, tol=1e-14,
                    max_newton=20):
    """Monolithic Galerkin solve of ``omega^2 rho u_tt - (p u_x)_x + m u = eps f(t, x, u)``.

    ``u(t, x) = U_0(x) + 2 Re sum_{l=1}^N U_l(x) e^{ilt}`` with ``U_l = sum_j C[l, j] psi_j``,
    where ``psi_j`` are eigenfunctions for the given ``lambdas``. Tested with
    ``psi_i`` the equations read ``(omega^2 l^2 - lambda_i) C[l, i] + (eps/c) int f_l psi_i = 0``.
    Newton steps use matrix-free GMRES with a diagonal preconditioner.

    Returns ``(C, residual_history)``.
    """
    from scipy.sparse.linalg import LinearOperator, gmres

    J1, nx = psi.shape
    M = M or 4 * (N + 1)
    wts = np.full(nx, x[1] - x[0])
    wts[0] = wts[-1] = 0.5 * wts[0]
    t = 2 * np.pi * np.arange(M) / M
    l = np.arange(N + 1)
    D = (omega * l[:, None]) ** 2 - np.asarray(lambdas)[None, :J1]
    shape = (N + 1, J1)

    def test(g):
        G = np.fft.rfft(g, axis=0)[: N + 1] / M
        return (G * wts[None, :]) @ psi.T / c

    def pack(C):
        return np.concatenate([C.real.ravel(), C.imag.ravel()])

    def unpack(z):
        n = z.size // 2
        return (z[:n] + 1j * z[n:]).reshape(shape)

    # irfft with doubled interior modes reproduces U_0 + 2 Re sum U_l e^{ilt}
    def synth(C):
        full = np.zeros((M // 2 + 1, nx), complex)
        full[: N + 1] = C @ psi
        return np.fft.irfft(full, n=M, axis=0) * M

    T = t[:, None]
    X = x[None, :]
    C = np.zeros(shape, complex)
    hist = []
    for _ in range(max_newton):
        u = synth(C)
        R = D * C + eps * test(f(T, X, u))
        hist.append(float(np.abs(R).max()))
        if hist[-1] <= tol:
            break
        a = fu(T, X, u)

        def jac(z):
            dC = unpack(z)
            return pack(D * dC + eps * test(a * synth(dC)))

        n = 2 * C.size
        A = LinearOperator((n, n), matvec=jac, dtype=float)
        P = LinearOperator((n, n), matvec=lambda z: z / np.concatenate([D.ravel(), D.ravel()]),
                           dtype=float)
        dz, info = gmres(A, -pack(R), M=P, rtol=1e-13, atol=0.0, restart=50, maxiter=50)
        if info != 0:
            raise RuntimeError(f"GMRES failed with info={info}")
        C = C + unpack(dz)
    return C, hist

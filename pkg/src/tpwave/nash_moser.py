"""Nash-Moser iteration for the range equation on growing truncations ``N_n``.

The range equation is written as ``Phi_N(w) = 0`` with

    Phi_N(w) = -L_omega w + eps P_N Pi_W f(t, x, v(w) + w),
    L_omega u = omega^2 rho u_tt - (p u_x)_x + m u,

and ``v(w)`` the solution of the (Q) problem. Stage ``n+1`` looks for
``h`` with ``Phi_{N_{n+1}}(w_n + h) = 0`` through the fixed point

    h = -L_{N_{n+1}}^{-1} (Phi_{N_{n+1}}(w_n) + R(h)),
    R(h) = Phi(w_n + h) - Phi(w_n) - L h,

where ``L`` is the linearized operator frozen at ``w_n``. Iterating this
map is the chord iteration ``h <- h - L^{-1} Phi(w_n + h)``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .bifurcation import DegenerateSolution, QSolution, QOperator, solve_Q, time_mean_forcing
from .coefficients import CoefficientSet, time_fourier_of_forcing
from .grid import Grid
from .linearized import (LinearizedOperator, NearResonance, SeriesDiverges, contraction_ratio,
                         invert_dense, invert_gmres, invert_series, melnikov_check)
from .liouville import InsufficientGrid, build_transform
from .resonance import jc_shift
from .spaces import TimeFourierField
from .sturm_liouville import SpectralBasis, build_basis, default_J

log = logging.getLogger(__name__)

__all__ = ["NashMoserParams", "IterationState", "SolutionBundle", "StageRejected",
           "ResonanceViolation", "NashMoserSolver", "run", "parameter_sensitivity",
           "save_checkpoint", "load_checkpoint", "pde_residual", "largest_workable_eps"]


class StageRejected(RuntimeError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


class ResonanceViolation(StageRejected):
    pass


@dataclass(frozen=True)
class NashMoserParams:
    gamma: float = 0.1
    tau: float = 1.5
    chi: float = 1.5
    N0: int = 8
    s: float = 1.0
    n_max: int = 4
    N_cap: int = 512
    grid_size: int = 4096
    J: int | None = None
    tol_inner: float = 1e-13
    max_inner: int = 50
    max_series_terms: int = 60
    K2: float | None = None
    strict_melnikov: bool = False
    residual_tol: float = 0.0
    collocation: tuple = (64, 256)
    trust_radius: float = 1.0
    omega_min: float = 0.0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 1 < self.tau < 2:
            raise ValueError("tau must lie in (1, 2)")
        if not 1 < self.chi <= 2:
            raise ValueError("chi must lie in (1, 2]")
        if self.chi > (self.sigma + 3) / self.tau:
            raise ValueError(f"chi={self.chi} exceeds (sigma+3)/tau={(self.sigma + 3) / self.tau}")
        if self.N0 < 1 or self.s <= 0.5:
            raise ValueError("need N0 >= 1 and s > 1/2")
        if not self.trust_radius > 0 or self.omega_min < 0:
            raise ValueError("need trust_radius > 0 and omega_min >= 0")

    @property
    def sigma(self) -> float:
        return self.tau * (self.tau - 1) / (2 - self.tau)

    @property
    def beta(self) -> float:
        t, c, s = self.tau, self.chi, self.sigma
        return c * (3 * t + s) + c / (c - 1) * (t - 1 + s) + 1

    @property
    def d_frak(self) -> float:
        return float(np.log(self.N0))

    def N_uncapped(self, n: int) -> int:
        if n == 0:
            return self.N0
        return int(np.floor(np.exp(self.d_frak * self.chi ** n) + 1e-9))

    def N(self, n: int) -> int:
        return min(self.N_uncapped(n), self.N_cap)

    def schedule(self):
        return [self.N(n) for n in range(self.n_max + 1)]

    def resolved_J(self, omega: float, c: float) -> int:
        return self.J if self.J is not None else default_J(self.N(self.n_max), omega, c)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["collocation"] = list(self.collocation)
        d.update(sigma=self.sigma, beta=self.beta, d_frak=self.d_frak, schedule=self.schedule())
        return d


@dataclass
class IterationState:
    n: int
    N: int
    w: TimeFourierField
    h_norm: float
    q: QSolution
    residual_P: float
    residual_full: float
    ledger: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def v(self):
        return self.q.v


@dataclass
class SolutionBundle:
    u: TimeFourierField
    w: TimeFourierField
    v: np.ndarray
    ledger: list
    residual_full: float
    state: IterationState
    params: NashMoserParams


def _record(n, N, h_norm, w_s, w_ss, rP, rF, inner, ratio, **extra):
    rec = {"n": n, "N_n": N, "h_norm": h_norm, "w_norm_s": w_s, "w_norm_s_sigma": w_ss,
           "residual_P": rP, "residual_full": rF, "inner_iters": inner,
           "contraction_ratio": ratio}
    rec.update(extra)
    return rec


class _Stage:
    """Everything frozen within one stage: ``v``-solver data, ``a``, basis and operator."""

    def __init__(self, solver, w_grid: TimeFourierField, N: int):
        self.solver = solver
        pr = solver.problem
        self.N = N
        self.eps = pr.epsilon
        self.q = solver.solve_v(w_grid)
        a = time_fourier_of_forcing(pr, w_grid.truncate(N) + _as_field(self.q.v, w_grid.grid),
                                    2 * N, fn=lambda t, x, u: pr.forcing.du(t, x, u),
                                    n_time=solver.n_time(2 * N))
        self.a = a
        d = solver.transform.m - self.eps * a.coeffs[0].real
        self.basis = solver.basis_for(d)
        self.a0 = a.coeffs[0].real
        self.op = LinearizedOperator(self.basis, a, self.eps, pr.omega, N)

    # coefficient <-> grid
    def coeffs_of(self, w: TimeFourierField) -> np.ndarray:
        b = self.basis
        U = w.truncate(self.N).coeffs[1:]
        rhs = (U * b.quad_weights[None, :]) @ b.psi.T
        return cho_solve(b.gram_factor, rhs.T).T

    def field_of(self, H) -> TimeFourierField:
        return self.op.synthesize(H)

    def phi(self, H, q_init=None):
        """``Phi_N(w)`` in tested coefficients, and the (Q) solution used."""
        pr, op = self.solver.problem, self.op
        w = self.field_of(H)
        q = self.solver.solve_v(w, v_init=q_init)
        u = w + _as_field(q.v, w.grid)
        F = time_fourier_of_forcing(pr, u, self.N, n_time=self.solver.n_time(self.N))
        G = self.eps * (F.coeffs[1:] - self.a0[None, :] * w.coeffs[1:])
        return op.diag * H + op.project(G), q


def _inner_done(incs, scale, tol, floor=1e-10):
    """Converged, or stalled at round-off (no further decrease below ``floor * scale``)."""
    if incs[-1] <= tol * scale or incs[-1] == 0.0:
        return True
    return len(incs) > 1 and incs[-1] <= floor * scale and incs[-1] >= 0.5 * incs[-2]


def _as_field(v, grid):
    return TimeFourierField.constant_in_time(v, grid)


class NashMoserSolver:
    def __init__(self, problem: CoefficientSet, params: NashMoserParams | None = None):
        self.problem = problem
        self.params = params or NashMoserParams()
        if problem.omega < self.params.omega_min:
            raise ValueError(f"omega={problem.omega} below configured omega_min="
                             f"{self.params.omega_min}")
        self.grid = Grid(self.params.grid_size)
        self.transform = build_transform(problem, self.params.grid_size)
        self.J = self.params.resolved_J(problem.omega, self.transform.c)
        if 4 * self.J > self.params.grid_size:
            raise InsufficientGrid(f"J={self.J} eigenfunctions need grid_size >= {4 * self.J}; "
                                   f"got {self.params.grid_size} (lower N_cap or refine the grid)")
        self._bases = {}
        self.timings = {}

    # -- helpers ---------------------------------------------------------
    def n_time(self, K):
        M = 6 * (K + 1)
        return M + M % 2

    def solve_v(self, w: TimeFourierField | None, v_init=None) -> QSolution:
        if self.problem.epsilon == 0:
            z = np.zeros(self.grid.size)
            return QSolution(z, self.grid, 0.0, np.nan, [0.0])
        return solve_Q(self.problem, w, v_init=v_init, grid=self.grid, check_margin=False)

    def basis_for(self, d) -> SpectralBasis:
        key = hashlib.sha256(np.ascontiguousarray(d).tobytes()).hexdigest()
        if key not in self._bases:
            self._bases.clear()
            self._bases[key] = build_basis(self.problem, self.J, self.params.grid_size, d=d,
                                           transform=self.transform)
        return self._bases[key]

    def norm_s(self, H, basis, s, v=None) -> float:
        """``||w||_s`` (plus ``v`` at ``l = 0`` if given) from eigen-coefficients."""
        G = basis.h1_gram
        l = np.arange(1, H.shape[0] + 1, dtype=float)
        per = np.einsum("lj,jk,lk->l", H.conj(), G, H).real
        tot = float(np.sum(2.0 * (1.0 + l ** (2 * s)) * np.maximum(per, 0.0)))
        if v is not None:
            tot += float(self.grid.h1_norm_sq(v))
        return float(np.sqrt(tot))

    def _check_resonance(self, stage: _Stage, n):
        p = self.params
        rep = melnikov_check(stage.basis.lambdas, stage.basis.c, self.problem.omega, p.gamma,
                             p.tau, stage.N, strict=p.strict_melnikov,
                             shift=jc_shift(stage.basis.case))
        if not rep.passed:
            raise ResonanceViolation(
                f"stage {n}: Melnikov conditions fail at {rep.lambda_violations[:5]}"
                f"{' / ' + str(rep.jc_violations[:5]) if p.strict_melnikov else ''}")
        return rep

    def _inverse(self, stage: _Stage):
        op = stage.op
        if op.epsilon == 0:
            return (lambda b: b / op.diag), 0.0, "diagonal"
        ratio = contraction_ratio(op, self.params.s)
        if ratio < 1.0:
            return (lambda b: invert_series(op, b, max_terms=self.params.max_series_terms,
                                            ratio=ratio).H), ratio, "series"
        log.warning("series contraction ratio %.3f >= 1; falling back to a direct solve", ratio)
        if op.size <= 6000:
            return (lambda b: invert_dense(op, b).H), ratio, "dense"
        return (lambda b: invert_gmres(op, b).H), ratio, "gmres"

    # -- stages ----------------------------------------------------------
    def init_stage(self) -> IterationState:
        """Picard iteration at ``N0`` using the diagonal inverse of ``L_omega``."""
        p, pr = self.params, self.problem
        t0 = time.perf_counter()
        N = p.N(0)
        w0 = TimeFourierField.zeros(self.grid, N)
        stage = _Stage(self, w0, N)
        mel = self._check_resonance(stage, 0)
        H = np.zeros(stage.op.shape2, complex)
        it, q = 0, stage.q
        incs = []
        for it in range(1, p.max_inner + 1):
            Phi, q = stage.phi(H, q.v)
            dH = -Phi / stage.op.diag
            H = H + dH
            incs.append(self.norm_s(dH, stage.basis, p.s))
            if _inner_done(incs, self.norm_s(H, stage.basis, p.s), p.tol_inner):
                break
            if it > 3 and incs[-1] > incs[-2] > incs[-3]:
                raise StageRejected("initial Picard iteration diverges: "
                                    "eps/(gamma omega) too large")
        else:
            raise StageRejected("initial Picard iteration did not converge")
        lip = float(np.max(np.array(incs[1:]) / np.array(incs[:-1]))) if len(incs) > 1 else 0.0
        state = self._finish(stage, H, q, n=0, h_norm=self.norm_s(H, stage.basis, p.s), inner=it,
                             ratio=lip, t0=t0, melnikov=mel)
        wn = state.ledger[-1]["w_norm_s"]
        state.ledger[-1]["K1"] = wn * p.gamma * pr.omega / pr.epsilon if pr.epsilon else 0.0
        return state

    def advance_stage(self, state: IterationState) -> IterationState:
        p, pr = self.params, self.problem
        t0 = time.perf_counter()
        n = state.n + 1
        N = p.N(n)
        stage = _Stage(self, state.w, N)
        mel = self._check_resonance(stage, n)
        Hw = stage.coeffs_of(state.w)
        inv, ratio, path = self._inverse(stage)
        h = np.zeros_like(Hw)
        q = stage.q
        incs, it = [], 0
        for it in range(1, p.max_inner + 1):
            Phi, q = stage.phi(Hw + h, q.v)
            dh = -inv(Phi)
            h = h + dh
            incs.append(self.norm_s(dh, stage.basis, p.s))
            log.debug("stage %d inner %d increment %.3e", n, it, incs[-1])
            if _inner_done(incs, self.norm_s(Hw + h, stage.basis, p.s), p.tol_inner):
                break
            if it > 3 and incs[-1] > incs[-2] > incs[-3]:
                raise StageRejected(f"stage {n}: fixed-point iteration diverges", state)
        else:
            raise StageRejected(f"stage {n}: fixed-point iteration did not converge", state)
        lip = float(np.max(np.array(incs[1:]) / np.array(incs[:-1]))) if len(incs) > 1 else 0.0
        h_norm = self.norm_s(h, stage.basis, p.s)
        if p.K2 is not None and pr.epsilon:
            radius = p.K2 * pr.epsilon / (p.gamma * pr.omega) * N ** (-p.sigma - 3)
            if h_norm > radius:
                raise StageRejected(f"stage {n}: increment {h_norm:.3e} outside ball {radius:.3e}",
                                    state)
        new = self._finish(stage, Hw + h, q, n=n, h_norm=h_norm, inner=it, ratio=ratio, t0=t0,
                           melnikov=mel, ledger=state.ledger, lipschitz=lip, inverse=path)
        if new.ledger[-1]["w_norm_s_sigma"] > p.trust_radius:
            raise StageRejected(f"stage {n}: ||w||_(s+sigma) exceeds {p.trust_radius:g}", new)
        return new

    def _finish(self, stage, H, q, n, h_norm, inner, ratio, t0, melnikov, ledger=(), **extra):
        p, pr = self.params, self.problem
        basis = stage.basis
        Phi, q = stage.phi(H, q.v)
        w = stage.field_of(H)
        # after the final Phi evaluation q is consistent with w
        res = pde_residual(self, stage, H, q)
        w_s = self.norm_s(H, basis, p.s)
        w_ss = self.norm_s(H, basis, p.s + p.sigma)
        S_n = 1.0 + self.norm_s(H, basis, p.s + p.beta)
        rP = self.norm_s(Phi, basis, p.s)
        scale = pr.epsilon / (p.gamma * pr.omega) if pr.epsilon else 1.0
        rec = _record(n, stage.N, h_norm, w_s, w_ss, rP, res["relative"], inner, ratio,
                      pointwise_residual=res["pointwise_relative"], S_n=S_n,
                      K2_fit=h_norm / scale * stage.N ** (p.sigma + 3),
                      melnikov_margin=melnikov.worst_lambda_margin,
                      jc_condition=melnikov.jc_passed, q_residual=q.residual_norm,
                      seconds=time.perf_counter() - t0, **extra)
        return IterationState(n=n, N=stage.N, w=w, h_norm=h_norm, q=q, residual_P=rP,
                              residual_full=res["relative"], ledger=list(ledger) + [rec],
                              diagnostics={"basis": basis, "H": H, "residual": res})

    def run(self, state: IterationState | None = None, stages: int | None = None,
            checkpoint=None) -> SolutionBundle:
        p = self.params
        if state is None:
            state = self.init_stage()
            if checkpoint:
                save_checkpoint(state, checkpoint, self)
        last = p.n_max if stages is None else min(p.n_max, state.n + stages)
        while state.n < last:
            if p.residual_tol and state.residual_full <= p.residual_tol:
                break
            state = self.advance_stage(state)
            if checkpoint:
                save_checkpoint(state, checkpoint, self)
        u = state.w + _as_field(state.v, state.w.grid)
        return SolutionBundle(u=u, w=state.w, v=state.v, ledger=state.ledger,
                              residual_full=state.residual_full, state=state, params=p)


def pde_residual(solver: NashMoserSolver, stage: _Stage, H, q: QSolution) -> dict:
    """Residual of ``omega^2 rho u_tt - (p u_x)_x + m u - eps f`` on the collocation grid.

    ``relative`` uses the Galerkin projection of every time mode of ``f``
    onto ``span{psi_j}`` (the equation actually solved); ``pointwise_relative``
    keeps ``f`` unprojected, so it also contains the spatial truncation
    error of the basis. Both are sup-norms over ``n_t x n_x`` samples
    divided by ``eps * sup |f(t, x, u)|``.
    """
    pr = solver.problem
    eps = pr.epsilon
    nt, nx = solver.params.collocation
    grid = solver.grid
    stride = max(1, grid.n // nx)
    xs = slice(0, grid.size, stride)
    op, basis = stage.op, stage.basis
    w = stage.field_of(H)
    u = w + _as_field(q.v, grid)
    Lf = stage.N * 3 + 2
    F = time_fourier_of_forcing(pr, u, Lf, n_time=solver.n_time(Lf))
    # tested coefficients of eps f for every stored time mode
    Pf = eps * op.project(F.coeffs)
    # -L_omega w on the basis (l >= 1) in tested form
    lin = np.zeros_like(Pf)
    lin[1: stage.N + 1] = op.diag * H - eps * op.project(stage.a0[None, :] * w.coeffs[1:])
    proj = lin + Pf
    proj[0] = 0.0
    # back to functions: rho * sum_i coeff_i psi_i
    R = basis.transform.rho[None, :] * (proj @ basis.psi)
    # l = 0: discrete (Q) residual
    qop = QOperator(pr, grid)
    r0 = qop.apply(q.v)
    if eps:
        r0[1:-1] -= eps * time_mean_forcing(pr, q.v, w)[1:-1]
    R[0] = -r0
    # unprojected version
    Rp = np.zeros_like(R)
    Rp[1: stage.N + 1] = basis.transform.rho[None, :] * ((op.diag * H) @ basis.psi) \
        - eps * stage.a0[None, :] * w.coeffs[1:]
    Rp += eps * F.coeffs * (np.arange(F.L + 1) > 0)[:, None]
    Rp[0] = -r0
    t = 2 * np.pi * np.arange(nt) / nt
    l = np.arange(R.shape[0])
    E = np.exp(1j * np.outer(t, l))
    E[:, 1:] *= 2.0

    def sample(C):
        return (E @ C[:, xs]).real

    ft = time_fourier_of_forcing(pr, u, Lf, n_time=solver.n_time(Lf))
    fmax = float(np.abs(sample(ft.coeffs)).max())
    denom = eps * fmax if eps and fmax > 0 else 1.0
    r = float(np.abs(sample(R)).max())
    rp = float(np.abs(sample(Rp)).max())
    return {"absolute": r, "relative": r / denom if eps else r, "pointwise": rp,
            "pointwise_relative": rp / denom if eps else rp, "f_sup": fmax}


def run(problem: CoefficientSet, params: NashMoserParams | None = None, **kw) -> SolutionBundle:
    return NashMoserSolver(problem, params).run(**kw)


def parameter_sensitivity(problem: CoefficientSet, params: NashMoserParams, d_omega: float = 1e-4,
                          d_eps: float = None, base: SolutionBundle | None = None) -> dict:
    """Central finite differences of ``w`` in ``omega`` and ``eps`` (``||.||_s`` norms)."""
    from .spaces import hs_norm

    base = base or run(problem, params)
    eps = problem.epsilon
    out = {"w_norm": hs_norm(base.w, params.s)}
    if eps == 0:
        out.update(d_omega=0.0, d_eps=0.0, w_over_eps=0.0)
        return out
    d_eps = d_eps if d_eps is not None else 1e-2 * eps
    wp = run(problem.with_(omega=problem.omega + d_omega), params).w
    wm = run(problem.with_(omega=problem.omega - d_omega), params).w
    out["d_omega"] = hs_norm((wp - wm) * (1 / (2 * d_omega)), params.s)
    wp = run(problem.with_(epsilon=eps + d_eps), params).w
    wm = run(problem.with_(epsilon=eps - d_eps), params).w
    dw = (wp - wm) * (1 / (2 * d_eps))
    out["d_eps"] = hs_norm(dw, params.s)
    out["w_over_eps"] = out["w_norm"] / eps
    out["d_eps_minus_w_over_eps"] = hs_norm(dw - base.w * (1 / eps), params.s)
    return out


def largest_workable_eps(problem: CoefficientSet, params: NashMoserParams, eps_values) -> dict:
    """Run the solver at increasing ``eps`` and stop at the first failure.

    Returns the rows ``(eps, status, residual_full)`` and the largest ``eps``
    that completed every stage (``nan`` if none did).
    """
    rows, best = [], np.nan
    for eps in sorted(float(e) for e in eps_values):
        try:
            b = run(problem.with_(epsilon=eps), params)
        except (StageRejected, SeriesDiverges, NearResonance, DegenerateSolution) as exc:
            rows.append((eps, type(exc).__name__, np.nan))
            break
        rows.append((eps, "ok", b.residual_full))
        best = eps
    return {"rows": rows, "largest": best}


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"TPWCKPT\x00"
_VERSION = 1
_FIELDS = ("w_re", "w_im", "v")


def save_checkpoint(state: IterationState, path, solver: NashMoserSolver | None = None) -> None:
    """Versioned binary checkpoint.

    Layout: 8-byte magic, ``<u4`` version, ``<u4`` header length, UTF-8 JSON
    header, then the arrays listed in ``header["fields"]`` in that order as
    little-endian float64 (shapes in the header).
    """
    arrays = {"w_re": state.w.coeffs.real, "w_im": state.w.coeffs.imag, "v": state.v}
    header = {
        "fields": list(_FIELDS),
        "shapes": {k: list(arrays[k].shape) for k in _FIELDS},
        "dtype": "<f8",
        "n": state.n, "N": state.N, "h_norm": state.h_norm,
        "residual_P": state.residual_P, "residual_full": state.residual_full,
        "grid_size": state.w.grid.n, "s": state.w.s_reference,
        "ledger": state.ledger,
        "q_history": state.q.history, "q_residual": state.q.residual_norm,
    }
    if solver is not None:
        header["params"] = solver.params.to_dict()
        header["problem"] = solver.problem.describe()
    blob = json.dumps(header, sort_keys=True, default=_json_default).encode()
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        for k in _FIELDS:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(IterationState, header)``."""
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a checkpoint file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        arrays = {}
        for k in header["fields"]:
            shape = tuple(header["shapes"][k])
            n = int(np.prod(shape))
            arrays[k] = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
    grid = Grid(header["grid_size"])
    w = TimeFourierField(arrays["w_re"] + 1j * arrays["w_im"], grid, header["s"])
    q = QSolution(arrays["v"], grid, header["q_residual"], np.nan, header["q_history"])
    state = IterationState(n=header["n"], N=header["N"], w=w, h_norm=header["h_norm"], q=q,
                           residual_P=header["residual_P"], residual_full=header["residual_full"],
                           ledger=header["ledger"])
    return state, header


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))

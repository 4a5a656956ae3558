"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Every criterion is an ``emit_*`` function that writes its CSV data to a
directory and returns ``(passed, detail)``. The determinism criterion runs
all emitters a second time into a fresh directory and compares the files
byte for byte.
"""
import csv
import filecmp
import os
import time

import numpy as np
import pytest
from scipy.special import mathieu_a

from conftest import E2E_PARAMS, SEED, e2e_problem
from oracles import cosine_basis, fd_eigenvalues, galerkin_newton
from tpwave.bifurcation import newton_order_probe, solve_Q
from tpwave.coefficients import (COEFFICIENT_PRESETS, BoundaryCase, CoefficientSet, Forcing,
                                 preset_problem)
from tpwave.grid import Grid
from tpwave.linearized import (contraction_ratio, f1_product_bound_probe, fit_exponent,
                               invert_dense, invert_series, tame_estimate_probe, varpi_table)
from tpwave.liouville import build_transform, potential_from_function, transformed_potential
from tpwave.nash_moser import NashMoserParams, NashMoserSolver
from tpwave.resonance import measure_scan, save_scan_csv
from tpwave.spaces import TimeFourierField, hs_norm
from tpwave.sturm_liouville import (asymptotic_report, bracket_constants, build_basis,
                                    eigenvalues, gap_report, spectral_bounds_check)
from tpwave.verify import algebra_ratios, make_operator_factory, smoothing_defects

MATHIEU_Q = 0.5
NEUMANN = (0.0, 1.0, 0.0, 1.0)
ROBIN = (1.0, 1.0, 1.0, 1.0)


def varrho(x):
    return 2.0 + np.cos(2.0 * x)


def _r(x):
    return repr(float(x))


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_r(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _constant(alpha1=0.0, beta1=1.0):
    return CoefficientSet(rho="1", p="1", m="1", forcing=Forcing("0"), alpha1=alpha1,
                          beta1=beta1, alpha2=0.0, beta2=1.0)


# ---------------------------------------------------------------- emitters

def _exact_spectrum(out, name, problem, shape):
    t0 = time.perf_counter()
    tr = build_transform(problem, 4096)
    mus = eigenvalues(transformed_potential(tr), tr.boundary, np.arange(31))
    secs = time.perf_counter() - t0
    n = np.arange(31)
    exact = shape(n) + 1.0
    err = np.abs(mus - exact)
    _write(os.path.join(out, name), ["n", "mu_n", "exact", "abs_error"],
           zip(n, mus, exact, err))
    return err.max(), secs


def emit_c1(out):
    err, secs = _exact_spectrum(out, "c01_neumann.csv", _constant(), lambda n: n ** 2.0)
    return err <= 1e-8 and secs < 10, f"max |mu_n - (n^2+1)| = {err:.2e}, {secs:.2f} s"


def emit_c2(out):
    err, secs = _exact_spectrum(out, "c02_dirichlet_neumann.csv", _constant(1.0, 0.0),
                                lambda n: (n + 0.5) ** 2)
    return err <= 1e-8, f"max |mu_n - ((n+1/2)^2+1)| = {err:.2e}, {secs:.2f} s"


def emit_c3(out):
    tp = potential_from_function(varrho, 4096)
    n = np.arange(41)
    mus = eigenvalues(tp, NEUMANN, n)
    # -z'' + (2 + cos 2xi) z = mu z with Neumann data is Mathieu's equation with q = 1/2
    ref = np.array([mathieu_a(k, MATHIEU_Q) for k in n]) + 2.0
    fd = fd_eigenvalues(varrho, NEUMANN, 40, M=4000)
    fit = asymptotic_report(mus, BoundaryCase.NEUMANN, bracket_constants(tp, NEUMANN))
    rel_fd = float(np.max(np.abs(mus - fd) / fd))
    rel_m = float(np.max(np.abs(mus - ref) / ref))
    r = np.zeros(n.size)
    r[fit.n] = fit.residual
    _write(os.path.join(out, "c03_asymptotics.csv"),
           ["n", "mu_n", "mathieu", "fd", "residual"], zip(n, mus, ref, fd, r))
    ok = fit.in_bracket and fit.bounded and rel_fd <= 1e-4 and rel_m <= 1e-6
    return ok, (f"c0_hat={fit.c_hat:.6f} in [{fit.lower:.3f}, {fit.upper:.3f}], residual bounded="
                f"{fit.bounded}, rel err vs FD {rel_fd:.1e}, vs Mathieu {rel_m:.1e}")


def emit_c4(out):
    tp = potential_from_function(varrho, 4096)
    n = np.arange(41)
    mus = eigenvalues(tp, ROBIN, n)
    const = bracket_constants(tp, ROBIN)
    fit = asymptotic_report(mus, BoundaryCase.GENERAL, const)
    chk = spectral_bounds_check(mus, BoundaryCase.GENERAL, const, n_range=range(0, 41))
    fd = fd_eigenvalues(varrho, ROBIN, 40, M=4000)
    rel_fd = float(np.max(np.abs(mus - fd) / np.abs(fd)))
    r = np.zeros(n.size)
    r[fit.n] = fit.residual
    _write(os.path.join(out, "c04_general_case.csv"), ["n", "mu_n", "fd", "residual"],
           zip(n, mus, fd, r))
    upper = (2 / np.pi) * (1 + 1 + 1 + tp.integral)
    ok = (fit.in_bracket and chk["N_hat"] is not None and chk["N_hat"] <= fit.n[0]
          and abs(upper - const["rho2"]) < 1e-9 and rel_fd <= 1e-4)
    return ok, (f"c_hat={fit.c_hat:.4f} in [{fit.lower:.3f}, {fit.upper:.3f}], "
                f"N_hat={chk['N_hat']}, rel err vs FD {rel_fd:.1e}")


def emit_c5(out):
    basis = build_basis(preset_problem("variable"), 20, 4096)
    G = basis.gram
    dev = float(np.abs(G - np.eye(21)).max())
    _write(os.path.join(out, "c05_gram.csv"), ["i", "j", "gram"],
           ((i, j, G[i, j]) for i in range(21) for j in range(21)))
    return dev <= 1e-6, f"variable preset: max |G - I| = {dev:.2e}"


def emit_c6(out):
    rows, ok, worst = [], True, np.inf
    for name in sorted(COEFFICIENT_PRESETS):
        basis = build_basis(preset_problem(name), 31, 4096)
        rep = gap_report(basis.lambdas, basis.c, 30, j_onset=10)
        ok &= rep["floor_holds"]
        worst = min(worst, rep["tail_min"] - rep["floor"])
        rows += [(name, j, g, rep["floor"]) for j, g in enumerate(rep["gaps"])]
    _write(os.path.join(out, "c06_gaps.csv"), ["preset", "j", "gap", "floor"], rows)
    return ok, f"{len(COEFFICIENT_PRESETS)} presets, smallest gap-minus-floor (j>=10) {worst:.3f}"


def emit_c7(out):
    rng = np.random.default_rng(SEED)
    alg = algebra_ratios(rng, 200)
    sm = smoothing_defects(rng)
    _write(os.path.join(out, "c07_algebra.csv"), ["s", "max_ratio", "C_s"],
           ((s, r, c) for s, (r, c) in sorted(alg.items())))
    ok = all(r <= c for r, c in alg.values()) and sm <= 1.0 + 1e-12
    worst = max(r / c for r, c in alg.values())
    return ok, f"max ratio/C(s) = {worst:.3f}, worst smoothing lhs/rhs = {sm:.12f}"


def emit_c8(out):
    pr = CoefficientSet(rho="1", p="1", m="1", forcing=Forcing("u^3 + sin(x)"), epsilon=0.01)
    g = Grid(4096)
    sol = solve_Q(pr, grid=g)
    probe = newton_order_probe(pr, sol)
    zero = solve_Q(pr.with_(epsilon=0.0), grid=g)
    _write(os.path.join(out, "c08_q_newton.csv"), ["iteration", "residual"],
           enumerate(sol.history))
    ok = probe["order"] >= 1.9 and sol.residual_norm <= 1e-10 and not np.any(zero.v)
    return ok, (f"order {probe['order']:.2f}, residual {sol.residual_norm:.1e}, "
                f"eps=0 gives v=0: {not np.any(zero.v)}")


def _c9_ops(eps):
    pr = preset_problem("constant", "cos_sin_affine", epsilon=eps, omega=2.5)
    make, _ = make_operator_factory(pr, 32, grid_size=2048)
    return make(8)


def emit_c9(out):
    rng = np.random.default_rng(SEED)
    rows, ok = [], True
    op = _c9_ops(1e-3)
    rhs = rng.standard_normal(op.shape2) + 1j * rng.standard_normal(op.shape2)
    Hs, Hd = invert_series(op, rhs).H, invert_dense(op, rhs).H
    rel = op.norm(Hs - Hd, 1.0) / op.norm(Hd, 1.0)
    op0 = _c9_ops(0.0)
    H0s, H0d = invert_series(op0, rhs).H, invert_dense(op0, rhs).H
    rel0 = op0.norm(H0s - H0d, 1.0) / op0.norm(H0d, 1.0)
    epss = np.array([1e-4, 3e-4, 1e-3])
    ratios = np.array([contraction_ratio(_c9_ops(e), 1.0, seed=SEED) for e in epss])
    slope = fit_exponent(epss, ratios)
    rows = [(e, q) for e, q in zip(epss, ratios)]
    _write(os.path.join(out, "c09_contraction.csv"), ["eps", "contraction_ratio"], rows)
    ok = rel <= 1e-8 and rel0 <= 1e-14 and abs(slope - 1.0) <= 0.15
    return ok, f"series vs dense {rel:.1e} (eps=0: {rel0:.1e}), ratio exponent {slope:.3f}"


def emit_c10(out):
    pr = preset_problem("constant", "cos_sin_affine", epsilon=1e-3, omega=2.5)
    make, _ = make_operator_factory(pr, 160, grid_size=2048)
    res = tame_estimate_probe(make, (4, 8, 16, 32), s=1.0, tau=1.5, gamma=0.1, seed=SEED)
    _write(os.path.join(out, "c10_tame.csv"), ["N", "sup_ratio"], zip(res["N"], res["sup_ratio"]))
    return res["exponent"] <= 0.6, f"fitted N-exponent {res['exponent']:.4f} (limit 0.6)"


def emit_c11(out):
    lam = np.arange(200) ** 2 + 1.0
    res = f1_product_bound_probe(lam, 0.1, 1.5, 2.5, 32)
    tab = varpi_table(lam, 2.5, 32)
    _write(os.path.join(out, "c11_varpi.csv"), ["l", "j_star", "varpi"],
           zip(tab["l"], tab["j_star"], tab["varpi"]))
    ok = np.isfinite(res["L"]) and res["L"] > 0 and not res["violations"]
    return ok, f"L = {res['L']:.4g}, violations {len(res['violations'])}"


def _solution_csv(path, bundle):
    nt, nx = bundle.params.collocation
    u = bundle.u
    stride = max(1, u.grid.n // nx)
    M = nt
    while M <= 2 * u.L:
        M *= 2
    samples = u.to_time(M)[:: M // nt]
    idx = np.arange(0, u.grid.size, stride)
    _write(path, ["t_index", "x_index", "u"],
           ((ti, int(k), samples[ti, k]) for ti in range(nt) for k in idx))


def _ledger_csv(path, ledger):
    keys = ["n", "N_n", "h_norm", "w_norm_s", "w_norm_s_sigma", "residual_P", "residual_full",
            "inner_iters", "contraction_ratio", "K2_fit"]
    _write(path, keys, ([rec[k] for k in keys] for rec in ledger))


def _e2e():
    t0 = time.perf_counter()
    solver = NashMoserSolver(e2e_problem(), NashMoserParams(**E2E_PARAMS))
    bundle = solver.run()
    return {"solver": solver, "bundle": bundle, "seconds": time.perf_counter() - t0}


def emit_c12(out, run=None):
    run = run or _e2e()
    solver, bundle, secs = run["solver"], run["bundle"], run["seconds"]
    _solution_csv(os.path.join(out, "c12_solution.csv"), bundle)
    _ledger_csv(os.path.join(out, "c12_ledger.csv"), bundle.ledger)
    N3 = bundle.state.N
    lam, x, psi = cosine_basis(bundle.u.grid.n, solver.J)
    C, hist = galerkin_newton(lam, psi, x, 1.0, 2.5, 1e-3,
                              lambda t, x, u: np.cos(t) * np.sin(x) * (1 + u),
                              lambda t, x, u: np.cos(t) * np.sin(x) + 0 * u, N3)
    u_or = TimeFourierField(C @ psi, bundle.u.grid, 1.0)
    diff = hs_norm(bundle.u - u_or, 1.0)
    res = max(rec["residual_full"] for rec in bundle.ledger)
    ok = res <= 1e-6 and diff <= 1e-6 and secs < 300 and len(bundle.ledger) == 4
    return ok, (f"residual {bundle.residual_full:.1e} (max over stages {res:.1e}), "
                f"||u - u_oracle||_s = {diff:.1e}, schedule "
                f"{[r['N_n'] for r in bundle.ledger]}, {secs:.1f} s")


def emit_c13(out, run=None):
    ledger = (run or _e2e())["bundle"].ledger
    k2 = np.array([rec["K2_fit"] for rec in ledger])
    _write(os.path.join(out, "c13_increments.csv"), ["n", "K2_fit"], enumerate(k2))
    bounded = np.all(np.isfinite(k2)) and k2[1:].max() <= k2[0]
    monotone_growth = np.all(np.diff(k2) > 0)
    detail = f"scaled increments {np.array2string(k2, precision=3)}"
    return bool(bounded and not monotone_growth), detail


def emit_c14(out):
    t0 = time.perf_counter()
    tr = build_transform(preset_problem("constant"), 4096)
    lam = eigenvalues(transformed_potential(tr), tr.boundary, np.arange(120)) / tr.c ** 2
    scan = measure_scan(lam, tr.c, (0.0005, 0.002), (2.2, 3.2), [0.02, 0.04, 0.08],
                        grid=(200, 400), tau=1.5, l_max=32)
    secs = time.perf_counter() - t0
    save_scan_csv(os.path.join(out, "c14_scan.csv"), scan)
    ok = scan.increasing and scan.bounded and scan.r2 >= 0.9 and secs < 120
    return ok, (f"fractions {np.array2string(scan.fractions, precision=4)}, Q_hat={scan.Q_hat:.3f},"
                f" R^2={scan.r2:.3f}, {secs:.1f} s")


EMITTERS = [emit_c1, emit_c2, emit_c3, emit_c4, emit_c5, emit_c6, emit_c7, emit_c8, emit_c9,
            emit_c10, emit_c11, emit_c12, emit_c13, emit_c14]


# ---------------------------------------------------------------- tests

@pytest.fixture(scope="module")
def out_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("acceptance"))


def _report(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.mark.parametrize("k", range(1, 12))
def test_criterion(k, out_dir, capsys):
    ok, detail = EMITTERS[k - 1](out_dir)
    _report(capsys, k, ok, detail)


def test_criterion_12_end_to_end(out_dir, e2e_run, capsys):
    ok, detail = emit_c12(out_dir, e2e_run)
    _report(capsys, 12, ok, detail)


def test_criterion_13_increment_decay(out_dir, e2e_run, capsys):
    ok, detail = emit_c13(out_dir, e2e_run)
    _report(capsys, 13, ok, detail)


def test_criterion_14_measure_law(out_dir, capsys):
    ok, detail = emit_c14(out_dir)
    _report(capsys, 14, ok, detail)


def test_criterion_15_determinism(out_dir, tmp_path, capsys):
    first = sorted(f for f in os.listdir(out_dir) if f.endswith(".csv"))
    if len(first) < 14:
        for emit in EMITTERS:
            emit(out_dir)
        first = sorted(f for f in os.listdir(out_dir) if f.endswith(".csv"))
    second = str(tmp_path)
    for emit in EMITTERS:
        emit(second)
    again = sorted(f for f in os.listdir(second) if f.endswith(".csv"))
    match, mismatch, errors = filecmp.cmpfiles(out_dir, second, first, shallow=False)
    ok = first == again and not mismatch and not errors
    _report(capsys, 15, ok,
            f"{len(match)} CSV files byte-identical, mismatched {mismatch + errors}")

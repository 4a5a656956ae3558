"""Command-line front end.

Exit codes: 0 success, 1 property failure, 2 configuration error,
3 numerical-regime failure (resonance, contraction or degeneracy aborts).
Heavy modules are imported only after ``--threads`` has been applied.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys

log = logging.getLogger("tpwave")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_REGIME = 0, 1, 2, 3
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS")


# ---------------------------------------------------------------- io helpers

def _atomic_write(path, data: str | bytes) -> None:
    tmp = f"{path}.tmp"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _r(x) -> str:
    return repr(float(x))


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _json(obj) -> str:
    import numpy as np

    def default(o):
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if hasattr(o, "value"):
            return o.value
        return str(o)

    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


class _Run:
    """Per-invocation context: resolved config, output directory, artifact list."""

    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg
        self.out = args.out_dir or cfg.output.get("dir", "out")
        os.makedirs(self.out, exist_ok=True)
        self.artifacts = []

    def path(self, name):
        return os.path.join(self.out, name)

    def write(self, name, data):
        p = self.path(name)
        _atomic_write(p, data)
        self.artifacts.append(name)
        return p


def _write_manifest(run: _Run, command: str, status: int, started: str) -> None:
    from . import __version__
    from .config import config_hash
    import numpy, scipy, sympy

    path = run.path("manifest.json")
    h = config_hash(run.cfg)
    man = {}
    if os.path.exists(path):
        try:
            with open(path) as fh:
                man = json.load(fh)
        except (OSError, ValueError):
            man = {}
    if man.get("config_hash") != h:
        man = {"config_hash": h, "commands": {}}
    arts = {}
    for name in sorted(set(run.artifacts)):
        with open(run.path(name), "rb") as fh:
            arts[name] = hashlib.sha256(fh.read()).hexdigest()
    man["commands"][command] = {"exit_status": status, "started": started,
                                "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                                "seed": run.args.seed, "artifacts": arts}
    man["versions"] = {"tpwave": __version__, "numpy": numpy.__version__,
                       "scipy": scipy.__version__, "sympy": sympy.__version__,
                       "python": sys.version.split()[0]}
    man["resolved_config"] = run.cfg.resolved()
    _atomic_write(path, _json(man))


# ---------------------------------------------------------------- commands

def cmd_spectrum(run: _Run) -> int:
    import numpy as np
    from .coefficients import validate
    from .liouville import build_transform
    from .sturm_liouville import _shape, asymptotic_report, build_basis, oscillation_count

    cfg, sc = run.cfg, run.cfg.spectrum
    problem = cfg.problem.build()
    rep = validate(problem, sc.grid_size)
    if not rep.passed:
        raise _ConfigFailure(f"coefficient validation failed: {rep.failures()}")
    tr = build_transform(problem, sc.grid_size)
    basis = build_basis(problem, sc.n_modes - 1, sc.grid_size, transform=tr)
    fit = asymptotic_report(basis, n_min=sc.n_min, n_max=sc.n_max)
    n = np.arange(basis.mus.size)
    resid = (basis.mus - _shape(n, basis.case) - fit.c_hat) * n.astype(float) ** 2
    osc = oscillation_count(basis.psi)
    rows = [(k, _r(basis.mus[k]), _r(basis.lambdas[k]), _r(resid[k]), int(osc[k])) for k in n]
    run.write("spectrum.csv", _csv(["n", "mu_n", "lambda_n", "asymptotic_residual",
                                    "oscillation_count"], rows))
    if run.args.dump_transform:
        tp = basis.potential
        rows = [(_r(x), _r(g), _r(s), _r(q), _r(v))
                for x, g, s, q, v in zip(tr.grid.x, tr.g, tr.s_factor, tr.Q, tp.varrho)]
        run.write("transform.csv", _csv(["x", "xi", "s_factor", "Q", "varrho"], rows))
    report = {"case": basis.case.value, "c": tr.c, "c_hat": fit.c_hat, "c_hat_raw": fit.c_hat_raw,
              "bracket": [fit.lower, fit.upper], "in_bracket": fit.in_bracket,
              "residual_bounded": fit.bounded, "constants": basis.constants,
              "oscillation_ok": bool(np.all(osc == n))}
    run.write("spectrum_report.json", _json(report))
    print(f"case {basis.case.value}: c_hat={fit.c_hat:.6g} in [{fit.lower:.6g}, {fit.upper:.6g}]"
          f" -> {'ok' if fit.passed else 'FAIL'}")
    return EXIT_OK


def cmd_solve_q(run: _Run) -> int:
    from .bifurcation import newton_order_probe, solve_Q
    from .grid import Grid

    problem = run.cfg.problem.build()
    p = run.cfg.params()
    grid = Grid(p.grid_size)
    sol = solve_Q(problem, grid=grid)
    rows = [(_r(x), _r(v)) for x, v in zip(grid.x, sol.v)]
    run.write("solve_q.csv", _csv(["x", "v"], rows))
    info = {"residual": sol.residual_norm, "history": sol.history,
            "nondegeneracy_margin": sol.nondegeneracy_margin,
            "boundary_residual": sol.boundary_residual, "iterations": sol.iterations}
    if problem.epsilon and sol.iterations >= 1:
        info["newton_order"] = newton_order_probe(problem, sol)["order"]
    run.write("solve_q.json", _json(info))
    print(f"Q solve: residual {sol.residual_norm:.3e} after {sol.iterations} Newton steps, "
          f"margin {sol.nondegeneracy_margin:.4g}")
    return EXIT_OK


def _solution_rows(bundle):
    import numpy as np

    nt, nx = bundle.params.collocation
    u = bundle.u
    grid = u.grid
    stride = max(1, grid.n // nx)
    M = nt
    while M <= 2 * u.L:
        M *= 2
    samples = u.to_time(M)[:: M // nt]
    idx = np.arange(0, grid.size, stride)
    for ti in range(nt):
        row = samples[ti]
        for k in idx:
            yield ti, int(k), _r(row[k])


def cmd_solve(run: _Run) -> int:
    from .nash_moser import NashMoserSolver, load_checkpoint

    args = run.args
    problem = run.cfg.problem.build()
    params = run.cfg.params()
    solver = NashMoserSolver(problem, params)
    ck = args.checkpoint or run.path("checkpoint.bin")
    state = None
    if args.resume:
        if not os.path.exists(ck):
            raise _ConfigFailure(f"no checkpoint at {ck}")
        state, header = load_checkpoint(ck)
        if header.get("params") != json.loads(json.dumps(params.to_dict())):
            raise _ConfigFailure("checkpoint was written with different solver parameters")
        if header.get("problem") != json.loads(_json(problem.describe())):
            raise _ConfigFailure("checkpoint was written for a different problem")
    bundle = solver.run(state=state, stages=args.stages, checkpoint=ck)
    if ck.startswith(run.out):
        run.artifacts.append(os.path.relpath(ck, run.out))
    lines = [json.dumps(rec, sort_keys=True, default=float) for rec in bundle.ledger]
    run.write("ledger.jsonl", "\n".join(lines) + "\n")
    for rec in bundle.ledger:
        print(json.dumps({k: rec[k] for k in ("n", "N_n", "h_norm", "w_norm_s", "w_norm_s_sigma",
                                              "residual_P", "residual_full", "inner_iters",
                                              "contraction_ratio")}))
    run.write("solution.csv", _csv(["t_index", "x_index", "u"], _solution_rows(bundle)))
    return EXIT_OK


def _scan_spectrum(problem, scan, grid_size):
    import numpy as np
    from .liouville import build_transform, transformed_potential
    from .sturm_liouville import eigenvalues

    tr = build_transform(problem, grid_size)
    tp = transformed_potential(tr)
    top = scan.omega_range[1] * scan.l_max + 2 * max(scan.gammas)
    J = int(np.ceil(tr.c * top)) + 8
    mus = eigenvalues(tp, tr.boundary, np.arange(J + 1))
    return tr, mus / tr.c ** 2


def cmd_resonance_scan(run: _Run) -> int:
    from .liouville import classify_case
    from .resonance import (excluded_intervals, jc_shift, measure_scan, save_intervals_csv,
                            save_scan_csv, section_statistics)

    sc = run.cfg.scan
    problem = run.cfg.problem.build()
    tr, lam = _scan_spectrum(problem, sc, run.cfg.spectrum.grid_size)
    shift = jc_shift(classify_case(*tr.boundary))
    scan = measure_scan(lam, tr.c, sc.eps_range, sc.omega_range, sc.gammas, tuple(sc.grid),
                        sc.tau, sc.l_max, shift)
    save_scan_csv(run.path("scan.csv"), scan)
    run.artifacts.append("scan.csv")
    reports = []
    for i, g in enumerate(sc.gammas):
        rep = excluded_intervals(lam, tr.c, g, sc.tau, sc.omega_range, sc.l_max, shift=shift)
        name = f"intervals_{i}.csv"
        save_intervals_csv(run.path(name), rep)
        run.artifacts.append(name)
        reports.append({"gamma": g, "file": name, "excluded_fraction": rep.excluded_fraction,
                        "max_width_ratio": rep.max_width_ratio, "counts_ok": rep.counts_ok,
                        "tail_bound": rep.tail_bound, "delta1": rep.delta1})
    summary = {"label": scan.label, "gammas": scan.gammas, "fractions": scan.fractions,
               "Q_hat": scan.Q_hat, "slope_through_origin": scan.slope, "r2_linear": scan.r2,
               "r2_through_origin": scan.r2_origin, "increasing": scan.increasing,
               "bounded": scan.bounded, "delta0": scan.delta0, "intervals": reports,
               "sections": [section_statistics(scan, sc.gamma1, i)
                            for i in range(len(sc.gammas)) if sc.gammas[i] > 0]}
    run.write("scan_report.json", _json(summary))
    print(f"{scan.label}: fractions {[round(float(f), 4) for f in scan.fractions]}, "
          f"Q_hat={scan.Q_hat:.4g}, R2={scan.r2:.4f}")
    return EXIT_OK


def cmd_verify(run: _Run) -> int:
    from .verify import run_suites

    rows = run_suites(run.cfg, seed=run.args.seed)
    out = [(r["suite"], "skip" if r["skipped"] else "pass" if r["passed"] else "fail",
            _r(r["value"]), _r(r["threshold"])) for r in rows]
    run.write("verify.csv", _csv(["suite", "status", "value", "threshold"], out))
    for s, st, v, t in out:
        print(f"{s:<22} {st:<5} value={v} threshold={t}")
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_FAIL


def cmd_report(run: _Run) -> int:
    import numpy as np
    from .bifurcation import check_nondegeneracy, solve_Q
    from .grid import Grid
    from .linearized import empirical_omega_min, fit_N_constant, save_varpi_csv
    from .resonance import fit_M_constant, is_in_A0, jc_shift
    from .sturm_liouville import build_basis, default_J, gap_report

    cfg = run.cfg
    problem = cfg.problem.build()
    p = cfg.params()
    omega = problem.omega
    from .liouville import build_transform
    tr = build_transform(problem, p.grid_size)
    J = default_J(p.N0, omega, tr.c)
    basis = build_basis(problem, J, p.grid_size, transform=tr)
    lam = basis.lambdas
    save_varpi_csv(run.path("varpi.csv"), lam, omega, p.gamma, p.tau, p.N0)
    run.artifacts.append("varpi.csv")
    L1, L2 = basis.equivalence_constants
    a0 = is_in_A0(problem.epsilon, omega, lam, p.gamma, p.tau, p.N0)
    gap = gap_report(lam, basis.c, min(30, J - 1))
    q = solve_Q(problem, grid=Grid(p.grid_size), check_margin=False)
    rep = {"resolved_config": cfg.resolved(), "c": basis.c, "case": basis.case.value,
           "hypothesis2": basis.report["hypothesis"].passed, "rho0": basis.rho0,
           "L1": L1, "L2": L2, "delta1": gap["delta1"], "gap_floor": gap["floor"],
           "gap_floor_holds": gap["floor_holds"],
           "frakM": fit_M_constant(lam, basis.c, jc_shift(basis.case))["frakM"],
           "frakN": fit_N_constant(lam, omega, p.N0)["frakN"],
           "in_A0": a0.member, "A0_margin": a0.worst_margin,
           "q_margin": check_nondegeneracy(problem, q.v, grid=Grid(p.grid_size)),
           "eps_over_gamma_omega": problem.epsilon / (p.gamma * omega),
           "omega_min_empirical": empirical_omega_min(lam), "omega_min_configured": p.omega_min,
           "trust_radius": p.trust_radius,
           "lambdas": np.asarray(lam[:20])}
    if run.args.probe_eps:
        from .nash_moser import largest_workable_eps

        try:
            eps_values = [float(e) for e in run.args.probe_eps.split(",")]
        except ValueError as exc:
            raise _ConfigFailure(f"--probe-eps expects comma-separated numbers: {exc}")
        probe = largest_workable_eps(problem, p, eps_values)
        run.write("eps_probe.csv", _csv(["epsilon", "status", "residual_full"],
                                        ((_r(e), s, _r(r)) for e, s, r in probe["rows"])))
        rep["largest_workable_eps"] = probe["largest"]
    run.write("report.json", _json(rep))
    print(f"c={basis.c:.6g} case={basis.case.value} in_A0={a0.member} "
          f"delta1={gap['delta1']:.4g}")
    return EXIT_OK


COMMANDS = {"spectrum": cmd_spectrum, "solve-q": cmd_solve_q, "solve": cmd_solve,
            "resonance-scan": cmd_resonance_scan, "verify": cmd_verify, "report": cmd_report}


class _ConfigFailure(Exception):
    pass


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML run configuration")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed for all randomized probes")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="BLAS/OpenMP thread count")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    ap = argparse.ArgumentParser(prog="tpwave", parents=[common],
                                 description="Time-periodic solutions of variable-coefficient "
                                             "wave equations")
    sub = ap.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("spectrum", parents=[common], help="Sturm-Liouville spectrum")
    sp.add_argument("--dump-transform", action="store_true",
                    help="also write the Liouville transform table")
    sub.add_parser("solve-q", parents=[common], help="time-independent bifurcation equation")
    so = sub.add_parser("solve", parents=[common], help="Nash-Moser solve")
    so.add_argument("--stages", type=int, default=None, help="stages to run after the current one")
    so.add_argument("--checkpoint", default=None, help="checkpoint path")
    so.add_argument("--resume", action="store_true", help="continue from --checkpoint")
    sub.add_parser("resonance-scan", parents=[common], help="non-resonance measure scan")
    sub.add_parser("verify", parents=[common], help="property suite pass/fail matrix")
    rp = sub.add_parser("report", parents=[common], help="constants and diagnostics report")
    rp.add_argument("--probe-eps", default=None,
                    help="comma-separated eps values; report the largest that completes")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for k, v in (("config", None), ("out_dir", None), ("seed", 0), ("threads", None),
                 ("verbose", 0)):
        if not hasattr(args, k):
            setattr(args, k, v)
    if args.threads:
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    from .config import ConfigError, load_config

    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = _Run(args, cfg)
    status = _dispatch(run)
    _write_manifest(run, args.command, status, started)
    return status


def _dispatch(run: _Run) -> int:
    from .bifurcation import DegenerateSolution
    from .coefficients import ExpressionError, MalformedInput
    from .config import ConfigError
    from .linearized import NearResonance, SeriesDiverges, TruncationInsufficient
    from .liouville import InsufficientGrid
    from .nash_moser import StageRejected
    from .sturm_liouville import BracketFailure, HypothesisFailure

    try:
        return COMMANDS[run.args.command](run)
    except (ConfigError, _ConfigFailure, MalformedInput, ExpressionError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageRejected, DegenerateSolution, SeriesDiverges, NearResonance,
            TruncationInsufficient, HypothesisFailure, BracketFailure, InsufficientGrid) as exc:
        print(f"numerical regime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_REGIME


if __name__ == "__main__":
    sys.exit(main())

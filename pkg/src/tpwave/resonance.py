"""Non-resonance sets in the ``(eps, omega)`` plane and their measure.

Two families of conditions are tracked for ``1 <= l <= l_max``:

    |omega l - sqrt(lambda_j)| > g / l^tau      (spectrum of the operator)
    |omega l - (j + shift) / c| > g / l^tau     (Weyl comparison sequence)

with ``g = gamma`` for the stagewise sets and ``g = 2 gamma`` for the
Cantor-like set. Scans without a computed solution use the unperturbed
spectrum; they are labelled "a-priori" and do not depend on ``eps``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .linearized import TruncationInsufficient
from .sturm_liouville import gap_report

__all__ = ["A0Report", "ResonanceReport", "ScanResult", "is_in_A0", "delta_mask",
           "excluded_intervals", "union_measure", "measure_scan", "section_statistics",
           "fit_M_constant", "replay_ledger", "jc_shift", "save_intervals_csv", "save_scan_csv",
           "KINDS"]

KINDS = ("lambda", "unperturbed", "jc")


def jc_shift(case) -> float:
    """Offset of the Weyl comparison sequence ``(j + shift)/c`` for a boundary case."""
    from .coefficients import BoundaryCase

    if case in (BoundaryCase.DN_LEFT, BoundaryCase.DN_RIGHT):
        return 0.5
    if case is BoundaryCase.DIRICHLET:
        return 1.0
    return 0.0


def _roots(lambdas):
    return np.sqrt(np.maximum(np.asarray(lambdas, dtype=float), 0.0))


def _nearest(r, x):
    """Distance from each ``x`` to the sorted set ``r`` and the index of the nearest point."""
    k = np.searchsorted(r, x).clip(1, r.size - 1)
    lo, hi = np.abs(x - r[k - 1]), np.abs(x - r[k])
    idx = np.where(lo <= hi, k - 1, k)
    return np.minimum(lo, hi), idx


# ---------------------------------------------------------------- membership

@dataclass
class A0Report:
    member: bool
    worst_margin: float
    worst_l: int
    worst_j: int


def is_in_A0(eps, omega, lambdas, gamma, tau, N0) -> A0Report:
    """``|omega l - sqrt(lambda_j)| > gamma / l^tau`` for ``l <= N0`` over every given ``j``.

    ``eps`` only labels the point: the set is defined with the unperturbed spectrum.
    """
    r = _roots(lambdas)
    if r[-1] < omega * N0:
        raise TruncationInsufficient(f"spectrum ends at sqrt(lambda)={r[-1]:.4g} < omega N0",
                                     required_J=int(np.ceil(2 * omega * N0)) + 2)
    l = np.arange(1, N0 + 1, dtype=float)
    marg = np.abs(omega * l[:, None] - r[None, :]) - gamma / l[:, None] ** tau
    a, b = np.unravel_index(np.argmin(marg), marg.shape)
    m = float(marg[a, b])
    return A0Report(member=m > 0, worst_margin=m, worst_l=int(a + 1), worst_j=int(b))


def delta_mask(lambdas, c, omegas, gamma, tau, N, shift=0.0, kinds=("lambda", "jc")) -> np.ndarray:
    """Boolean mask of ``omegas`` satisfying every selected condition for ``l = 1..N``."""
    r = _roots(lambdas)
    om = np.asarray(omegas, dtype=float)
    ok = np.ones(om.shape, bool)
    for l in range(1, N + 1):
        th = gamma / l ** tau
        x = om * l
        if "lambda" in kinds or "unperturbed" in kinds:
            ok &= _nearest(r, x)[0] > th
        if "jc" in kinds:
            y = x * c - shift
            ok &= np.abs(y - np.round(y)) / c > th
    return ok


# ---------------------------------------------------------------- intervals

@dataclass
class ResonanceReport:
    intervals: list          # (l, j, kind, omega_lo, omega_hi)
    total_excluded_measure: float
    omega_range: tuple
    gamma: float
    tau: float
    N: int
    delta1: float
    counts: dict = field(default_factory=dict)
    count_bounds: dict = field(default_factory=dict)
    max_width_ratio: float = 0.0
    tail_bound: float = 0.0
    slope: float = np.nan

    @property
    def counts_ok(self) -> bool:
        return all(self.counts[k] <= self.count_bounds[k] for k in self.counts)

    @property
    def excluded_fraction(self) -> float:
        lo, hi = self.omega_range
        return self.total_excluded_measure / (hi - lo)


def union_measure(segments) -> float:
    """Lebesgue measure of a union of closed intervals ``[(lo, hi), ...]``."""
    segs = sorted((a, b) for a, b in segments if b > a)
    tot, cur_lo, cur_hi = 0.0, None, None
    for a, b in segs:
        if cur_hi is None or a > cur_hi:
            if cur_hi is not None:
                tot += cur_hi - cur_lo
            cur_lo, cur_hi = a, b
        else:
            cur_hi = max(cur_hi, b)
    if cur_hi is not None:
        tot += cur_hi - cur_lo
    return tot


def _perturbed_interval(root_of, j, l, th, lo, hi, iters=50):
    """Endpoints of ``{omega: |omega l - r_j(omega)| <= th}`` by fixed-point iteration."""
    ends = []
    for sgn in (-1.0, 1.0):
        w = 0.5 * (lo + hi)
        for _ in range(iters):
            new = (root_of(w)[j] + sgn * th) / l
            if abs(new - w) <= 1e-15 * max(1.0, abs(w)):
                w = new
                break
            w = new
        ends.append(w)
    return ends[0], ends[1]


def excluded_intervals(lambdas, c, gamma, tau, omega_range, l_max, kinds=("unperturbed", "jc"),
                       shift=0.0, perturbed=None, factor=2.0) -> ResonanceReport:
    """Excluded ``omega``-intervals for ``1 <= l <= l_max``, threshold ``factor*gamma/l^tau``.

    ``perturbed`` (``omega -> lambdas``) enables the ``"lambda"`` kind with an
    ``omega``-dependent spectrum; otherwise that kind coincides with
    ``"unperturbed"`` and is skipped.

    Raises
    ------
    TruncationInsufficient
        If ``sqrt(lambda_J)`` does not reach ``omega'' l_max + factor*gamma``.
    """
    lo, hi = map(float, omega_range)
    if not hi > lo:
        raise ValueError("empty omega range")
    r = _roots(lambdas)
    top = hi * l_max + factor * gamma
    if ("unperturbed" in kinds or perturbed is not None) and r[-1] < top:
        raise TruncationInsufficient(f"spectrum ends at sqrt(lambda)={r[-1]:.4g} < {top:.4g}",
                                     required_J=int(np.ceil(c * top)) + 2)
    gaps = gap_report(r ** 2, c, r.size - 1, j_onset=0)
    d1 = gaps["delta1"]
    out, counts, bounds = [], {}, {}
    width_ratio = 0.0
    for l in range(1, l_max + 1):
        th = factor * gamma / l ** tau
        span = l * (hi - lo) + 2 * th
        if "unperturbed" in kinds or ("lambda" in kinds and perturbed is None):
            js = np.flatnonzero((r >= lo * l - th) & (r <= hi * l + th))
            for j in js:
                a, b = (r[j] - th) / l, (r[j] + th) / l
                out.append((l, int(j), "unperturbed", max(a, lo), min(b, hi)))
                width_ratio = max(width_ratio, (b - a) * l ** (tau + 1) / gamma)
            counts[(l, "unperturbed")] = int(js.size)
            bounds[(l, "unperturbed")] = span / d1 + 1
        if "lambda" in kinds and perturbed is not None:
            rr = lambda w: _roots(perturbed(w))
            r_mid = rr(0.5 * (lo + hi))
            js = np.flatnonzero((r_mid >= lo * l - 2 * th) & (r_mid <= hi * l + 2 * th))
            n = 0
            for j in js:
                a, b = _perturbed_interval(rr, j, l, th, lo, hi)
                if b < lo or a > hi:
                    continue
                n += 1
                out.append((l, int(j), "lambda", max(a, lo), min(b, hi)))
                width_ratio = max(width_ratio, (b - a) * l ** (tau + 1) / gamma)
            counts[(l, "lambda")] = n
            bounds[(l, "lambda")] = span / d1 + 1
        if "jc" in kinds:
            j0 = int(np.ceil(c * (lo * l - th) - shift))
            j1 = int(np.floor(c * (hi * l + th) - shift))
            js = range(max(j0, 0), j1 + 1)
            for j in js:
                ctr = (j + shift) / c
                a, b = (ctr - th) / l, (ctr + th) / l
                out.append((l, j, "jc", max(a, lo), min(b, hi)))
                width_ratio = max(width_ratio, (b - a) * l ** (tau + 1) / gamma)
            counts[(l, "jc")] = len(js)
            bounds[(l, "jc")] = span * c + 1
    meas = union_measure((a, b) for _, _, _, a, b in out)
    # analytic bound for the discarded l > l_max, per family
    l_tail = np.arange(l_max + 1, l_max + 200001, dtype=float)
    per = 4 * factor * gamma / l_tail ** (tau + 1) * (l_tail * (hi - lo) / d1 + 1)
    nfam = len({k for _, k in counts})
    return ResonanceReport(intervals=out, total_excluded_measure=meas, omega_range=(lo, hi),
                           gamma=gamma, tau=tau, N=l_max, delta1=d1, counts=counts,
                           count_bounds=bounds, max_width_ratio=width_ratio,
                           tail_bound=float(nfam * per.sum()))


# ---------------------------------------------------------------- scans

@dataclass
class ScanResult:
    gammas: np.ndarray
    fractions: np.ndarray
    Q_hat: float
    slope: float
    r2: float
    r2_origin: float
    eps: np.ndarray
    omega: np.ndarray
    masks: list
    delta0: float
    label: str = "a-priori scan"

    @property
    def increasing(self) -> bool:
        return bool(np.all(np.diff(self.fractions) > 0))

    @property
    def bounded(self) -> bool:
        # gamma = 0 excludes a null set, which a grid can still hit exactly
        pos = self.gammas > 0
        return bool(np.all(self.fractions[pos] <= self.Q_hat * self.gammas[pos] * (1 + 1e-12)))


def _fit(g, y):
    g, y = np.asarray(g, float), np.asarray(y, float)
    slope = float(g @ y / (g @ g)) if g @ g > 0 else np.nan
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if g.size >= 2 and np.ptp(g) > 0 and ss_tot > 0:
        b, a = np.polyfit(g, y, 1)
        r2 = 1.0 - float(((y - a - b * g) ** 2).sum()) / ss_tot
        r2o = 1.0 - float(((y - slope * g) ** 2).sum()) / ss_tot
    else:
        r2 = r2o = np.nan
    return slope, r2, r2o


def measure_scan(spectrum, c, eps_range, omega_range, gammas, grid=(200, 400), tau=1.5,
                 l_max=32, shift=0.0, factor=2.0, kinds=("unperturbed", "jc")) -> ScanResult:
    """Excluded fraction of a midpoint grid on ``eps_range x omega_range`` for each ``gamma``.

    ``spectrum`` is an array of eigenvalues (a-priori scan) or a callable
    ``eps -> lambdas`` evaluated once per ``eps`` row. ``Q_hat`` is the
    smallest ``Q`` with ``fraction <= Q gamma`` on every tested ``gamma``;
    ``r2`` is the coefficient of determination of the ordinary linear fit,
    ``r2_origin`` that of the fit through the origin with slope ``slope``.
    """
    (e0, e1), (w0, w1) = map(float, eps_range), map(float, omega_range)
    ne, nw = grid
    if not (e1 > e0 and w1 > w0):
        raise ValueError("empty parameter rectangle")
    if ne < 1 or nw < 1:
        raise ValueError("grid must be positive")
    eps = e0 + (np.arange(ne) + 0.5) * (e1 - e0) / ne
    om = w0 + (np.arange(nw) + 0.5) * (w1 - w0) / nw
    if callable(spectrum):
        rows = [np.asarray(spectrum(e), float) for e in eps]
    else:
        lam = np.asarray(spectrum, float)
        rows = None
    gammas = np.asarray(gammas, float)
    masks, fr = [], []
    delta0 = float(min(r[0] for r in rows)) if rows is not None else float(lam[0])
    for g in gammas:
        if rows is None:
            ok = delta_mask(lam, c, om, factor * g, tau, l_max, shift, kinds)
            m = np.broadcast_to(ok, (ne, nw))
        else:
            m = np.array([delta_mask(r, c, om, factor * g, tau, l_max, shift, kinds)
                          for r in rows])
        masks.append(np.asarray(m))
        fr.append(1.0 - float(np.mean(m)))
    fr = np.array(fr)
    pos = gammas > 0
    Q = float(np.max(fr[pos] / gammas[pos])) if pos.any() else 0.0
    slope, r2, r2o = _fit(gammas, fr)
    return ScanResult(gammas=gammas, fractions=fr, Q_hat=Q, slope=slope, r2=r2, r2_origin=r2o,
                      eps=eps, omega=om, masks=masks, delta0=delta0,
                      label="a-priori scan" if rows is None else "spectrum provider scan")


def section_statistics(scan: ScanResult, gamma1: float, index: int = -1) -> dict:
    """Fraction of ``omega`` columns whose ``eps``-section keeps measure ``>= 1 - gamma1``."""
    if not 0 < gamma1 <= 1:
        raise ValueError("gamma1 must lie in (0, 1]")
    m = scan.masks[index]
    kept = m.mean(axis=0)
    frac = float(np.mean(kept >= 1 - gamma1 - 1e-15))
    g = float(scan.gammas[index])
    bound = 1.0 - scan.Q_hat * g / gamma1
    return {"gamma": g, "gamma1": gamma1, "fraction": frac, "bound": bound,
            "holds": frac >= bound - 1e-12}


def fit_M_constant(lambdas, c, shift=0.0, j_min=1) -> dict:
    """``frakM = max_j j |sqrt(lambda_j) - (j + shift)/c|`` over the given spectrum."""
    r = _roots(lambdas)
    j = np.arange(r.size, dtype=float)
    v = j * np.abs(r - (j + shift) / c)
    return {"frakM": float(v[j_min:].max()), "profile": v}


def replay_ledger(ledger) -> dict:
    """Every recorded stage must have passed its Melnikov check (positive margin)."""
    bad = [rec["n"] for rec in ledger if not rec.get("melnikov_margin", -1.0) > 0]
    return {"stages": len(ledger), "violations": bad, "ok": not bad}


# ---------------------------------------------------------------- output

def _fmt(x):
    return repr(float(x))


def save_intervals_csv(path, report: ResonanceReport) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["l", "j", "kind", "omega_lo", "omega_hi"])
        for l, j, kind, a, b in report.intervals:
            wr.writerow([l, j, kind, _fmt(a), _fmt(b)])


def save_scan_csv(path, scan: ScanResult) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["gamma", "excluded_fraction", "fitted_Q"])
        for g, f in zip(scan.gammas, scan.fractions):
            wr.writerow([_fmt(g), _fmt(f), _fmt(scan.Q_hat)])

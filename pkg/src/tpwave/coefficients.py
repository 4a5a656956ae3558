"""Physical problem definition: coefficients, forcing, boundary data.

The wave equation handled by the package is

    omega^2 rho(x) u_tt - (p(x) u_x)_x + m(x) u = eps f(t, x, u),

2*pi-periodic in t, on 0 < x < pi, with

    alpha1 u(0) - beta1 u_x(0) = 0,   alpha2 u(pi) + beta2 u_x(pi) = 0.

Coefficients are given either as closed-form expressions over a small
grammar or as tabulated samples interpolated by a cubic spline.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace

import numpy as np
import sympy as sp
from scipy.interpolate import CubicSpline
from sympy.parsing.sympy_parser import (convert_xor, parse_expr,
                                        standard_transformations)

from .grid import Grid

__all__ = [
    "Expression", "ExprCoefficient", "TabulatedCoefficient", "Forcing",
    "CoefficientSet", "BoundaryCase", "ValidationReport", "validate",
    "time_fourier_of_forcing", "smoothness_probe", "COEFFICIENT_PRESETS",
    "FORCING_PRESETS", "preset_problem", "ExpressionError",
]


class ExpressionError(ValueError):
    """Raised for text that is not in the expression grammar."""


_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                    r"|([A-Za-z_][A-Za-z_0-9]*)|(\*\*|[-+*/^(),]))")
_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
_CONSTS = {"pi": sp.pi, "e": sp.E}
# the parser emits these constructor names for literals; nothing else is reachable
_PARSER_GLOBALS = {"Integer": sp.Integer, "Float": sp.Float, "Rational": sp.Rational,
                   "Symbol": sp.Symbol}


def _tokenize_check(text: str, variables) -> None:
    pos = 0
    text = text.strip()
    if not text:
        raise ExpressionError("empty expression")
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character {text[pos]!r} in {text!r}")
        name = m.group(2)
        if name is not None and name not in variables and name not in _FUNCS \
                and name not in _CONSTS:
            raise ExpressionError(f"unknown name {name!r} in {text!r}")
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1


class Expression:
    """Closed-form expression over ``{vars, + - * / ^, sin, cos, exp, consts}``.

    Derivatives are taken symbolically, evaluation is vectorized through
    ``sympy.lambdify``.
    """

    def __init__(self, text, variables=("x",)):
        self.variables = tuple(variables)
        if isinstance(text, (int, float)):
            text = repr(float(text))
        self.text = str(text)
        _tokenize_check(self.text, self.variables)
        syms = {v: sp.Symbol(v, real=True) for v in self.variables}
        local = dict(_FUNCS, **_CONSTS, **syms)
        try:
            expr = parse_expr(self.text, local_dict=local, global_dict=_PARSER_GLOBALS,
                              transformations=standard_transformations + (convert_xor,),
                              evaluate=True)
        except Exception as exc:  # sympy raises a zoo of exception types
            raise ExpressionError(f"cannot parse {self.text!r}: {exc}") from None
        self._symbols = tuple(syms[v] for v in self.variables)
        self.expr = expr
        self._check_tree(expr)
        self._fn = sp.lambdify(self._symbols, expr, modules="numpy")
        self._cache = {}

    def _check_tree(self, e):
        allowed = (sp.Add, sp.Mul, sp.Pow, sp.sin, sp.cos, sp.exp, sp.Symbol, sp.Number,
                   sp.NumberSymbol)
        for node in sp.preorder_traversal(e):
            if not isinstance(node, allowed):
                raise ExpressionError(f"{self.text!r}: unsupported construct {node.func}")

    def __call__(self, *args):
        args = [np.asarray(a, dtype=float) for a in args]
        out = self._fn(*args)
        shape = np.broadcast_shapes(*(a.shape for a in args)) if args else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def diff(self, var: str, order: int = 1) -> "Expression":
        key = (var, order)
        if key not in self._cache:
            sym = self._symbols[self.variables.index(var)]
            d = sp.diff(self.expr, sym, order)
            new = Expression.__new__(Expression)
            new.variables = self.variables
            new.text = str(d)
            new._symbols = self._symbols
            new.expr = d
            new._fn = sp.lambdify(self._symbols, d, modules="numpy")
            new._cache = {}
            self._cache[key] = new
        return self._cache[key]

    def __repr__(self):
        return f"Expression({self.text!r})"


class ExprCoefficient:
    """Spatial coefficient given by an :class:`Expression` in ``x``."""

    def __init__(self, text):
        self.expr = Expression(text, ("x",))
        self.source = self.expr.text

    def __call__(self, x, order: int = 0):
        e = self.expr if order == 0 else self.expr.diff("x", order)
        return e(x)


class TabulatedCoefficient:
    """Spatial coefficient from samples, interpolated by a C2 cubic spline."""

    def __init__(self, x, values):
        x = np.asarray(x, dtype=float)
        values = np.asarray(values, dtype=float)
        if x.ndim != 1 or x.shape != values.shape or x.size < 4:
            raise ValueError("tabulated coefficient needs matching 1-D arrays of >= 4 samples")
        if not np.all(np.diff(x) > 0):
            raise ValueError("tabulated abscissae must be strictly increasing")
        self.spline = CubicSpline(x, values)
        self.source = f"table[{x.size}]"

    def __call__(self, x, order: int = 0):
        return self.spline(np.asarray(x, dtype=float), order)


def as_coefficient(value):
    if isinstance(value, (ExprCoefficient, TabulatedCoefficient)):
        return value
    if isinstance(value, (int, float, str)):
        return ExprCoefficient(value)
    if isinstance(value, dict) and "x" in value and "values" in value:
        return TabulatedCoefficient(value["x"], value["values"])
    raise TypeError(f"cannot build a coefficient from {value!r}")


class Forcing:
    """Nonlinearity ``f(t, x, u)``, 2*pi-periodic in ``t``."""

    def __init__(self, text):
        self.expr = Expression(text, ("t", "x", "u"))
        self.source = self.expr.text

    def __call__(self, t, x, u):
        return self.expr(t, x, u)

    def du(self, t, x, u, order: int = 1):
        return self.expr.diff("u", order)(t, x, u)

    def dt(self, t, x, u):
        return self.expr.diff("t", 1)(t, x, u)

    @property
    def is_affine_in_u(self) -> bool:
        return sp.diff(self.expr.expr, self.expr._symbols[2], 2) == 0


class BoundaryCase(enum.Enum):
    """Classification of the transformed boundary coefficients."""

    NEUMANN = "case1"        # a1 = 0, b1 > 0, a2 = 0, b2 > 0
    DN_LEFT = "case2"        # a1 > 0, b1 = 0, a2 = 0, b2 > 0
    DN_RIGHT = "case3"       # a1 = 0, b1 > 0, a2 > 0, b2 = 0
    GENERAL = "case4"        # all four positive
    DIRICHLET = "dirichlet"  # b1 = b2 = 0, outside the four covered cases
    OTHER = "other"          # any remaining sign pattern

    @property
    def covered(self) -> bool:
        return self in (BoundaryCase.NEUMANN, BoundaryCase.DN_LEFT,
                        BoundaryCase.DN_RIGHT, BoundaryCase.GENERAL)


@dataclass(frozen=True)
class CoefficientSet:
    """The physical problem. Immutable."""

    rho: object
    p: object
    m: object
    forcing: Forcing
    alpha1: float = 0.0
    beta1: float = 1.0
    alpha2: float = 0.0
    beta2: float = 1.0
    epsilon: float = 0.0
    omega: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        for key in ("rho", "p", "m"):
            object.__setattr__(self, key, as_coefficient(getattr(self, key)))
        if not isinstance(self.forcing, Forcing):
            object.__setattr__(self, "forcing", Forcing(self.forcing))
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not self.omega > 0:
            raise ValueError("omega must be > 0")

    def with_(self, **kw) -> "CoefficientSet":
        return replace(self, **kw)

    def describe(self) -> dict:
        return {"rho": self.rho.source, "p": self.p.source, "m": self.m.source,
                "forcing": self.forcing.source, "alpha1": self.alpha1, "beta1": self.beta1,
                "alpha2": self.alpha2, "beta2": self.beta2, "epsilon": self.epsilon,
                "omega": self.omega, "name": self.name}


@dataclass
class ValidationReport:
    passed: bool
    checks: dict = field(default_factory=dict)

    def failures(self):
        return {k: v for k, v in self.checks.items() if not v["ok"]}


class MalformedInput(ValueError):
    pass


def validate(problem: CoefficientSet, grid_size: int) -> ValidationReport:
    """Check positivity of rho, p, m on the grid and the boundary constraint.

    Raises
    ------
    MalformedInput
        If a coefficient sample is not finite.
    """
    if grid_size < 16:
        raise ValueError("grid_size must be >= 16")
    x = np.linspace(0.0, np.pi, grid_size + 1)
    checks = {}
    for key in ("rho", "p", "m"):
        vals = getattr(problem, key)(x)
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise MalformedInput(f"{key} is not finite at x={x[bad]!r}")
        bad = np.flatnonzero(vals <= 0)
        checks[f"{key}_positive"] = {
            "ok": bad.size == 0,
            "min": float(vals.min()),
            "nodes": bad.tolist()[:20],
            "x": x[bad].tolist()[:20],
        }
    for i, (a, b) in enumerate([(problem.alpha1, problem.beta1),
                                (problem.alpha2, problem.beta2)], start=1):
        checks[f"boundary{i}"] = {"ok": a * a + b * b != 0.0, "alpha": a, "beta": b}
    return ValidationReport(all(c["ok"] for c in checks.values()), checks)


def time_fourier_of_forcing(problem: CoefficientSet, u, K: int, grid: Grid | None = None,
                            n_time: int | None = None, fn=None):
    """Time-Fourier coefficients ``f_l(x)``, ``0 <= l <= K`` of ``f(t, x, u(t, x))``.

    Evaluates the forcing on an equispaced collocation grid of at least
    ``4K`` points (or ``2*(max(K, L_u)) * 2``) and applies a real FFT, so
    the conjugate symmetry ``f_{-l} = conj(f_l)`` holds by construction.

    Parameters
    ----------
    u : TimeFourierField
    fn : callable, optional
        Replacement for ``problem.forcing`` (e.g. its ``u``-derivative).
    """
    from .spaces import TimeFourierField

    K = int(K)
    M = n_time or max(4 * K, 4 * u.L, 8)
    M += M % 2
    t = 2 * np.pi * np.arange(M) / M
    ut = u.to_time(M)
    x = u.grid.x
    f = fn if fn is not None else problem.forcing
    vals = f(t[:, None], x[None, :], ut)
    if not np.all(np.isfinite(vals)):
        raise MalformedInput("forcing evaluation returned non-finite values")
    return TimeFourierField.from_time(vals, u.grid, K)


def smoothness_probe(problem: CoefficientSet, u, K: int = 32) -> dict:
    """Decay rate of ``||f_l||_{H^1}`` in ``l`` (fitted power law)."""
    F = time_fourier_of_forcing(problem, u, K)
    norms = np.sqrt(F.grid.h1_norm_sq(F.coeffs))
    ls = np.arange(1, K + 1)
    keep = norms[1:] > 1e-14 * max(norms.max(), 1e-300)
    if keep.sum() < 2:
        return {"decay_exponent": np.inf, "norms": norms}
    slope = np.polyfit(np.log(ls[keep]), np.log(norms[1:][keep]), 1)[0]
    return {"decay_exponent": float(-slope), "norms": norms}


COEFFICIENT_PRESETS = {
    # constant coefficients, Neumann at both ends (Case 1)
    "constant": dict(rho="1", p="1", m="1", alpha1=0.0, beta1=1.0, alpha2=0.0, beta2=1.0),
    # constant coefficients, u(0) = 0 and u_x(pi) = 0 (Case 2)
    "dn_left": dict(rho="1", p="1", m="1", alpha1=1.0, beta1=0.0, alpha2=0.0, beta2=1.0),
    # smooth bump density, Neumann data; transformed coefficients fall in Case 4
    "variable": dict(rho="1 + 0.3*sin(x)", p="1", m="1", alpha1=0.0, beta1=1.0,
                     alpha2=0.0, beta2=1.0),
    # density and stiffness both varying, Robin data (Case 4)
    "graded": dict(rho="(1 + x/pi)^2", p="1 + 0.2*cos(x)", m="1.5", alpha1=1.0, beta1=1.0,
                   alpha2=1.0, beta2=1.0),
}

FORCING_PRESETS = {
    "cos_sin_affine": "cos(t)*sin(x)*(1 + u)",
    "cubic": "cos(t)*sin(x) + u^3",
    "mixed": "(1 + 0.5*cos(2*t))*cos(x)*u + cos(t)*sin(x)",
    "zero": "0",
}


def preset_problem(name: str = "constant", forcing: str = "cos_sin_affine",
                   epsilon: float = 1e-3, omega: float = 2.5) -> CoefficientSet:
    """Build a :class:`CoefficientSet` from the named presets."""
    if name not in COEFFICIENT_PRESETS:
        raise KeyError(f"unknown coefficient preset {name!r}")
    ftext = FORCING_PRESETS.get(forcing, forcing)
    return CoefficientSet(forcing=Forcing(ftext), epsilon=epsilon, omega=omega, name=name,
                          **COEFFICIENT_PRESETS[name])

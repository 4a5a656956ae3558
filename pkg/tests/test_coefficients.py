import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tpwave.coefficients import (CoefficientSet, Expression, ExpressionError, Forcing,
                                 MalformedInput, TabulatedCoefficient, preset_problem,
                                 time_fourier_of_forcing, validate)
from tpwave.grid import Grid
from tpwave.spaces import TimeFourierField, hs_norm


def test_expression_evaluates_and_differentiates():
    e = Expression("sin(x)^2 + 2*exp(-x)")
    x = np.linspace(0, np.pi, 7)
    assert np.allclose(e(x), np.sin(x) ** 2 + 2 * np.exp(-x))
    assert np.allclose(e.diff("x")(x), 2 * np.sin(x) * np.cos(x) - 2 * np.exp(-x))
    assert np.allclose(e.diff("x", 2)(x), 2 * np.cos(2 * x) + 2 * np.exp(-x))


def test_constant_expression_broadcasts():
    assert Expression("3")(np.zeros(5)).shape == (5,)


@pytest.mark.parametrize("text", ["log(x)", "__import__('os')", "x +", "y*x", "abs(x)",
                                  "x.real"])
def test_expression_rejects_outside_grammar(text):
    with pytest.raises(ExpressionError):
        Expression(text)


def test_forcing_derivatives():
    f = Forcing("cos(t)*sin(x)*(1 + u) + u^3")
    t, x, u = 0.3, 1.1, 0.7
    assert f.du(t, x, u) == pytest.approx(np.cos(t) * np.sin(x) + 3 * u ** 2)
    assert f.du(t, x, u, 2) == pytest.approx(6 * u)
    assert not f.is_affine_in_u
    assert Forcing("cos(t)*sin(x)*(1 + u)").is_affine_in_u


def test_coefficient_set_is_immutable_and_validated():
    pr = preset_problem("constant")
    with pytest.raises(dataclasses.FrozenInstanceError):
        pr.epsilon = 1.0
    with pytest.raises(ValueError):
        pr.with_(epsilon=-1.0)
    with pytest.raises(ValueError):
        pr.with_(omega=0.0)
    assert pr.with_(epsilon=0.5).epsilon == 0.5 and pr.epsilon == 1e-3


def test_validate_reports_nonpositive_nodes():
    pr = CoefficientSet(rho="cos(x)", p="1", m="1", forcing="0")
    rep = validate(pr, 64)
    assert not rep.passed
    bad = rep.failures()["rho_positive"]
    assert min(bad["x"]) >= np.pi / 2 - 1e-12


def test_validate_boundary_and_nonfinite():
    pr = CoefficientSet(rho="1", p="1", m="1", forcing="0", alpha1=0.0, beta1=0.0)
    assert "boundary1" in validate(pr, 32).failures()
    with np.errstate(divide="ignore"):
        with pytest.raises(MalformedInput):
            validate(CoefficientSet(rho="1/x", p="1", m="1", forcing="0"), 32)


def test_tabulated_coefficient_spline():
    x = np.linspace(0, np.pi, 50)
    c = TabulatedCoefficient(x, np.cos(x))
    assert c(1.0) == pytest.approx(np.cos(1.0), abs=1e-5)
    assert c(1.0, 1) == pytest.approx(-np.sin(1.0), abs=1e-4)
    with pytest.raises(ValueError):
        TabulatedCoefficient(x[::-1], x)


def test_presets_build():
    for name in ("constant", "dn_left", "variable", "graded"):
        assert validate(preset_problem(name), 256).passed
    with pytest.raises(KeyError):
        preset_problem("nope")


@settings(max_examples=25, deadline=None)
@given(k=st.integers(0, 6), a=st.floats(-3, 3), K=st.integers(7, 12))
def test_time_fourier_single_mode(k, a, K):
    g = Grid(32)
    pr = CoefficientSet(rho="1", p="1", m="1", forcing=f"{a!r}*cos({k}*t)*sin(x)")
    F = time_fourier_of_forcing(pr, TimeFourierField.zeros(g, 0), K)
    expect = np.zeros((K + 1, g.size))
    expect[k] = (a if k == 0 else a / 2) * np.sin(g.x)
    assert np.allclose(F.coeffs, expect, atol=1e-12)
    assert F.conj_symmetry_defect() == 0.0


@pytest.mark.parametrize("s", [1.0, 1.5, 2.0])
def test_composition_is_lipschitz_near_a_field(s):
    g = Grid(128)
    pr = CoefficientSet(rho="1", p="1", m="1", forcing="cos(t)*sin(x) + u^3 + sin(u)")
    c = np.zeros((3, g.size), complex)
    c[0], c[1], c[2] = 0.2 * np.cos(g.x), 0.4, 0.1j * np.cos(2 * g.x)
    u = TimeFourierField(c, g)
    d = np.zeros_like(c)
    d[1] = np.cos(g.x)
    du = TimeFourierField(d, g)
    base = time_fourier_of_forcing(pr, u, 24)
    ratios = [hs_norm(time_fourier_of_forcing(pr, u + du * h, 24) - base, s) / hs_norm(du * h, s)
              for h in (1e-2, 1e-3, 1e-4)]
    # difference quotients settle to the norm of the derivative
    assert np.all(np.isfinite(ratios))
    assert abs(ratios[2] - ratios[1]) < 0.1 * abs(ratios[1] - ratios[0]) + 1e-9

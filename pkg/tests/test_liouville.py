import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import eigh

from tpwave.coefficients import BoundaryCase, CoefficientSet, preset_problem
from tpwave.liouville import (build_transform, check_hypothesis2, classify_case,
                              potential_from_function, transformed_potential)
from tpwave.sturm_liouville import eigenvalues


@settings(max_examples=20, deadline=None)
@given(rho=st.floats(0.2, 5), p=st.floats(0.2, 5), m=st.floats(0.1, 3))
def test_constant_coefficients_have_trivial_transform(rho, p, m):
    pr = CoefficientSet(rho=repr(rho), p=repr(p), m=repr(m), forcing="0")
    tr = build_transform(pr, 256)
    assert tr.c == pytest.approx(np.sqrt(rho / p), rel=1e-12)
    assert np.allclose(tr.g, tr.grid.x, atol=1e-12)
    assert np.allclose(tr.Q, 0.0, atol=1e-12)
    tp = transformed_potential(tr)
    # vartheta = c^2 m / rho = m / p
    assert np.allclose(tp.varrho, m / p)


def test_coordinate_map_is_monotone_onto():
    tr = build_transform(preset_problem("graded"), 2048)
    assert tr.g[0] == 0.0 and tr.g[-1] == pytest.approx(np.pi, abs=1e-14)
    assert np.all(np.diff(tr.g) > 0)
    assert np.allclose(tr.psi(tr.g), tr.grid.x, atol=1e-10)


@pytest.mark.parametrize("bc,case", [
    ((0, 1, 0, 1), BoundaryCase.NEUMANN), ((1, 0, 0, 1), BoundaryCase.DN_LEFT),
    ((0, 1, 1, 0), BoundaryCase.DN_RIGHT), ((1, 1, 1, 1), BoundaryCase.GENERAL),
    ((1, 0, 1, 0), BoundaryCase.DIRICHLET), ((1, 1, 0, 1), BoundaryCase.OTHER)])
def test_classify_case(bc, case):
    assert classify_case(*bc) is case
    assert case.covered == (case not in (BoundaryCase.DIRICHLET, BoundaryCase.OTHER))


def test_hypothesis_report_flags_negative_potential():
    pr = CoefficientSet(rho="1", p="1", m="-2", forcing="0")
    tr = build_transform(pr, 256)
    rep = check_hypothesis2(transformed_potential(tr), tr)
    assert not rep.passed and rep.rho0 == pytest.approx(-2.0)
    ok = check_hypothesis2(transformed_potential(build_transform(preset_problem("variable"), 256)),
                           build_transform(preset_problem("variable"), 256))
    assert ok.passed


def test_potential_from_function_integral():
    tp = potential_from_function(lambda x: 2 + np.cos(2 * x), 512)
    assert tp.integral == pytest.approx(2 * np.pi, rel=1e-12)
    assert tp.rho0 == pytest.approx(1.0)


def _fe_eigenvalues(pr, n_el, k):
    """Linear finite elements for -(p y')' + m y = lambda rho y, natural (Neumann) data."""
    x = np.linspace(0, np.pi, n_el + 1)
    h = np.diff(x)
    xm = 0.5 * (x[:-1] + x[1:])
    p, m, rho = pr.p(xm), pr.m(xm), pr.rho(xm)
    K = np.zeros((n_el + 1, n_el + 1))
    Mm = np.zeros_like(K)
    for e in range(n_el):
        i = slice(e, e + 2)
        K[i, i] += p[e] / h[e] * np.array([[1, -1], [-1, 1]]) \
            + m[e] * h[e] / 6 * np.array([[2, 1], [1, 2]])
        Mm[i, i] += rho[e] * h[e] / 6 * np.array([[2, 1], [1, 2]])
    return eigh(K, Mm, eigvals_only=True, subset_by_index=(0, k))


def test_eigenvalues_invariant_under_transform():
    # spectrum of the original problem equals mu_n / c^2 of the normal form
    pr = preset_problem("variable")
    tr = build_transform(pr, 4096)
    lam = eigenvalues(transformed_potential(tr), tr.boundary, np.arange(11)) / tr.c ** 2
    # the FE error is O(h^2): extrapolate from two meshes
    fe = (4 * _fe_eigenvalues(pr, 1600, 10) - _fe_eigenvalues(pr, 800, 10)) / 3
    assert np.allclose(lam, fe, rtol=1e-7)

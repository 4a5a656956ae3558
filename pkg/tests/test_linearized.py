import numpy as np
import pytest

from conftest import SEED
from tpwave.coefficients import preset_problem
from tpwave.linearized import (SeriesDiverges, TruncationInsufficient, contraction_ratio,
                               f1_product_bound_probe, fit_exponent, fit_N_constant, invert_dense,
                               invert_gmres, invert_series, melnikov_check, save_varpi_csv,
                               varpi_table, empirical_omega_min)
from tpwave.verify import make_operator_factory

LAM = np.arange(200) ** 2 + 1.0


@pytest.fixture(scope="module")
def factory():
    pr = preset_problem("constant", "cos_sin_affine", epsilon=1e-3, omega=2.5)
    return make_operator_factory(pr, 32, grid_size=1024)


def _rhs(op):
    rng = np.random.default_rng(SEED)
    return rng.standard_normal(op.shape2) + 1j * rng.standard_normal(op.shape2)


def test_three_inverses_agree(factory):
    op = factory[0](8)
    b = _rhs(op)
    Hd = invert_dense(op, b).H
    for H in (invert_series(op, b).H, invert_gmres(op, b).H):
        assert op.norm(H - Hd, 1.0) <= 1e-9 * op.norm(Hd, 1.0)
    assert np.linalg.norm(op.apply(Hd) - b) <= 1e-10 * np.linalg.norm(b)


def test_diagonal_inverse_at_zero_epsilon():
    pr = preset_problem("constant", "cos_sin_affine", epsilon=0.0, omega=2.5)
    op = make_operator_factory(pr, 32, grid_size=1024)[0](8)
    b = _rhs(op)
    assert contraction_ratio(op) == 0.0
    assert np.allclose(invert_series(op, b).H, b / op.diag, rtol=1e-14)


def test_series_refuses_non_contraction(factory):
    op = factory[0](8)
    with pytest.raises(SeriesDiverges):
        invert_series(op, _rhs(op), ratio=1.2)


def test_melnikov_detects_resonance():
    ok = melnikov_check(LAM, 1.0, 2.5, 0.1, 1.5, 8)
    assert ok.passed and ok.worst_lambda_margin > 0
    bad = melnikov_check(LAM, 1.0, np.sqrt(10.0), 0.1, 1.5, 8)
    assert not bad.passed and (1, 3) in bad.lambda_violations
    with pytest.raises(TruncationInsufficient):
        melnikov_check(LAM[:10], 1.0, 2.5, 0.1, 1.5, 8)


def test_varpi_table_by_hand():
    tab = varpi_table(LAM, 2.5, 4)
    # omega^2 l^2 = 6.25, 25, 56.25, 100 against j^2 + 1
    assert np.allclose(tab["varpi"], [1.25, 1.0, 6.25, 1.0])
    assert list(tab["j_star"]) == [2, 5, 7, 10]


def test_f1_probe_and_far_branch():
    res = f1_product_bound_probe(LAM, 0.1, 1.5, 2.5, 32)
    assert res["L"] > 0 and not res["violations"] and res["far_branch_ok"]
    assert res["sigma"] == pytest.approx(1.5)


def test_fit_helpers(tmp_path):
    x = np.array([1.0, 2.0, 4.0, 8.0])
    assert fit_exponent(x, 3 * x ** 0.7) == pytest.approx(0.7)
    # j* is the integer nearest omega l, so the ratio stays close to one
    assert 0.8 <= fit_N_constant(LAM, 2.5, 16)["frakN"] <= 1.0
    save_varpi_csv(tmp_path / "v.csv", LAM, 2.5, 0.1, 1.5, 8)
    assert (tmp_path / "v.csv").read_text().count("\n") == 9


def test_empirical_omega_min():
    w = empirical_omega_min(LAM)
    assert w == pytest.approx(np.sqrt(1.5))
    assert varpi_table(LAM, w * (1 + 1e-9), 6)["j_star"].min() >= 1
    assert varpi_table(LAM, w * (1 - 1e-6), 6)["j_star"][0] == 0

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from fbmlab import asymlab as A
from fbmlab.asymlab import AppendixIntegralId as I
from fbmlab.hinner import tensor_cell_averages, tensor_ip_grid_oracle
from fbmlab.specfun import norm_slope

H = 0.3


def _apow(x, beta):
    return 0.0 if x == 0 else math.copysign(abs(x) ** beta, x)


@given(st.floats(-1.0, 0.9), st.floats(0.05, 2.0), st.floats(-1.0, 2.0), st.booleans())
def test_window_exp_integral_vs_scipy(p, width, c, signed):
    q = min(p + width, 1.0)
    beta = 2 * H - 1
    f = lambda x: _apow(x, beta) * math.exp(-abs(x - c)) * (math.copysign(1.0, x - c) if signed else 1.0)
    # one quad call per piece, graded geometrically toward the singular point 0;
    # points= alone misjudges pieces that end within 1e-9 of it
    grade = [s * 10.0**-k for k in range(1, 16) for s in (-1.0, 1.0)]
    cuts = [p] + sorted({x for x in [0.0, c] + grade if p < x < q}) + [q]
    ref = sum(integrate.quad(f, a, b, limit=200, epsabs=1e-13, epsrel=1e-12)[0] for a, b in zip(cuts[:-1], cuts[1:]))
    got = float(A.window_exp_integral(np.array([p]), np.array([q]), np.array([c]), beta, signed)[0])
    assert got == pytest.approx(ref, abs=1e-9, rel=1e-8)


def test_q_slope_constant():
    assert A.closed_form_slope(I.Q, 0.3) == 6 * math.exp(-2) + 2
    assert A.closed_form_slope(I.Q, 0.4) == 6 * math.exp(-2) + 2


@pytest.mark.parametrize("h", [0.3, 0.4])
def test_paired_slopes_equal(h):
    assert A.closed_form_slope(I.U, h) == pytest.approx(A.closed_form_slope(I.N, h), rel=1e-12)
    assert A.closed_form_slope(I.Utilde, h) == pytest.approx(A.closed_form_slope(I.Ntilde, h), rel=1e-12)


@pytest.mark.parametrize("h", [0.2, 0.3, 0.4])
def test_n_slope_dual_path(h):
    assert A.n_slope_series(h) == pytest.approx(A.closed_form_slope(I.N, h), rel=1e-9)


def test_frozen_slopes():
    # values from independent quadrature at H = 0.3
    frozen = {
        I.M11: 1.1433895029,
        I.M12: 0.14320755520,
        I.N: 0.10935485110,
        I.Ntilde: 1.04292253453,
        I.L: 0.69167779666,
        I.P: 0.14524459135,
        I.D: 2.42889440880,
    }
    for ident, v in frozen.items():
        assert A.closed_form_slope(ident, H) == pytest.approx(v, rel=1e-9), ident


@pytest.mark.parametrize("ident", [i for i in I if i is not I.M11])
def test_bulk_density_matches_closed_slope(ident):
    assert A.bulk_density(ident, H) == pytest.approx(A.closed_form_slope(ident, H), rel=1e-8)


def test_m11_bulk_slope():
    assert A.m11_bulk_slope(H) == pytest.approx(A.closed_form_slope(I.M11, H), rel=1e-8)


def test_m11_raw_oracle():
    assert A.eval_appendix_integral(I.M11, 6.0, H) == pytest.approx(A.m11_raw_oracle(6.0, H), rel=1e-4)


@pytest.mark.parametrize("ident, ref, rel", [(I.Q, 14.0952339, 1e-6), (I.P, -0.0507309, 2e-5), (I.D, 8.98158, 2e-5)])
def test_localized_terms_vs_brute_force(ident, ref, rel):
    # references from chunked brute-force quadrature of the raw double integrals at T = 4
    assert A.eval_appendix_integral(ident, 4.0, H) == pytest.approx(ref, rel=rel)


def test_split_and_direct_modes_agree():
    # T = 50 runs the edge/bulk split, slightly below it the direct rule
    for ident in (I.L, I.Q):
        a = A.eval_appendix_integral(ident, 50.0, H)
        b = A.eval_appendix_integral(ident, 49.999, H)
        assert a - b == pytest.approx(0.001 * A.closed_form_slope(ident, H), abs=2e-6)


def test_eval_requires_horizon():
    with pytest.raises(ValueError):
        A.eval_appendix_integral(I.Q, 1.0, H)


def test_fit_asymptote_exact_line():
    fit = A.fit_asymptote([(t, 3 * t + 5) for t in (10, 20, 40, 80)])
    assert fit.slope == pytest.approx(3.0, abs=1e-12)
    assert fit.intercept == pytest.approx(5.0, abs=1e-10)


def test_fit_asymptote_decaying_perturbation():
    fit = A.fit_asymptote([(t, 3 * t + 5 + math.exp(-t)) for t in (10, 20, 40, 80)])
    assert fit.slope == pytest.approx(3.0, abs=1e-6)


def test_fit_asymptote_errors():
    with pytest.raises(A.AsymptoteError):
        A.fit_asymptote([(1, 1), (2, 2), (3, 3)])
    with pytest.raises(A.AsymptoteError):
        A.fit_asymptote([(1, 1), (1, 2), (3, 3), (4, 4)])


def test_q_numeric_slope():
    fit = A.fit_asymptote([(t, A.eval_appendix_integral(I.Q, t, H)) for t in (8.0, 16.0, 32.0, 64.0)])
    assert fit.slope == pytest.approx(6 * math.exp(-2) + 2, rel=1e-2)


@pytest.fixture(scope="module")
def norm_t4():
    return A.norm_ft_sq(A.FtKernelParams(4.0, 1.0, H))


def test_norm_vs_grid_oracle(norm_t4):
    n = 1024
    F = tensor_cell_averages(lambda t, s: np.exp(-np.abs(t - s)), 4.0, n)
    oracle = tensor_ip_grid_oracle(F, F, H, n, 4.0 / n)
    assert norm_t4.total > 0
    assert norm_t4.total == pytest.approx(oracle, rel=1e-2)


def test_norm_breakdown_composition(norm_t4):
    b = norm_t4
    al = H * (2 * H - 1)
    assert b.total == pytest.approx(b.m33 + 2 * (al**2 * (b.m11 + b.m12) - al * (b.m31 + b.m32)), rel=1e-14)


def test_norm_without_diagonal_is_smaller():
    p = A.FtKernelParams(4.0, 1.0, H)
    full = A.norm_ft_sq(p)
    bare = A.norm_ft_sq(p, include_diagonal=False)
    assert full.total - bare.total == pytest.approx(H * H * full.parts["D"], rel=1e-12)


def test_theta_scaling():
    p1 = A.norm_ft_sq(A.FtKernelParams(8.0, 1.0, H)).total
    p2 = A.norm_ft_sq(A.FtKernelParams(4.0, 2.0, H)).total
    assert p2 == pytest.approx(2.0 ** (-4 * H) * p1, rel=1e-12)


@pytest.mark.parametrize("h", [0.3, 0.35, 0.45])
def test_identity_with_diagonal(h):
    assert A.identity_check(h).rel_err <= 1e-4


def test_identity_fails_without_diagonal():
    # the decomposition without the diagonal term misses part of the slope
    assert A.identity_check(H, A.composite_slopes(H, include_diagonal=False)).rel_err > 0.5


@pytest.mark.parametrize("h", [0.3, 0.35, 0.45])
def test_stated_expressions_diagnostic(h):
    comp = A.composite_slopes(h)
    bare = A.composite_slopes(h, include_diagonal=False)
    stated = A.stated_composite_expressions(h)
    assert stated.a1 == pytest.approx(comp.a1, rel=1e-6)
    # the single-formula a3 is the composition without the diagonal term
    assert stated.a3 == pytest.approx(bare.a3, rel=1e-6)
    assert comp.a3 - bare.a3 == pytest.approx(h * h * A.closed_form_slope(I.D, h), rel=1e-12)
    # the single-formula a2 does not reproduce H (N - Ntilde + U - Utilde)
    assert abs(stated.a2 - comp.a2) > 1e-2


def test_cross_term_vs_grid():
    T, n = 2.0, 1024
    F = tensor_cell_averages(lambda t, s: np.exp(-np.abs(t - s)), T, n)
    G = tensor_cell_averages(lambda t, s: np.exp(-(T - t) - (T - s)), T, n)
    oracle = tensor_ip_grid_oracle(F, G, H, n, T / n)
    assert A.cross_ip_ft_ht(A.FtKernelParams(T, 1.0, H)) == pytest.approx(oracle, rel=1e-2)


def test_cross_term_nesting_orders():
    p = A.FtKernelParams(2.0, 1.0, H)
    assert A.cross_ip_ft_ht(p, "ts") == pytest.approx(A.cross_ip_ft_ht(p, "st"), abs=1e-8)
    with pytest.raises(ValueError):
        A.cross_ip_ft_ht(p, "xx")


def test_kernels():
    assert A.ft_kernel(1.0, 3.0) == pytest.approx(math.exp(-2))
    assert A.ht_kernel(1.0, 3.0, 3.0) == pytest.approx(math.exp(-2))


def test_norm_slope_target():
    assert norm_slope(H) == pytest.approx(0.33819482331669, rel=1e-12)

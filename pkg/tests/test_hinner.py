import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbmlab.bvfunc import BVFunction, ExpPolyTerm
from fbmlab.hinner import (
    OverlapError,
    cell_averages,
    grid_cov,
    inner_product,
    ip_disjoint,
    ip_fourier,
    ip_grid_oracle,
    ip_jolis,
    ip_window,
    standard_battery,
    tensor_ip_grid_oracle,
)
from fbmlab.specfun import fbm_cov

T = 4.0
ind = lambda a, b: BVFunction.indicator(a, b, T)


@given(st.floats(0.05, 0.49), st.floats(0.2, 4.0))
def test_jolis_variance(h, t):
    f = ind(0, t)
    assert ip_jolis(f, f, h) == pytest.approx(t ** (2 * h), rel=1e-9)


@given(st.floats(0.05, 0.49), st.floats(0.2, 4.0), st.floats(0.2, 4.0))
def test_jolis_covariance(h, a, b):
    assert ip_jolis(ind(0, a), ind(0, b), h) == pytest.approx(fbm_cov(a, b, h), rel=1e-9, abs=1e-12)


def test_jolis_vs_grid_exp_pair():
    T3 = 3.0
    f = BVFunction.exp(0, 2, -1.0, T3)
    g = BVFunction.exp(1, 3, 1.0, T3)
    v = ip_jolis(f, g, 0.3)
    assert v == pytest.approx(ip_grid_oracle(f, g, 0.3, 8192), rel=5e-3)


@pytest.mark.parametrize("h", [0.1, 0.3, 0.45])
def test_disjoint_four_term(h):
    v = ip_disjoint(ind(0, 1), ind(2, 3), h)
    ref = 0.5 * (3 ** (2 * h) - 2 * 2 ** (2 * h) + 1)
    assert v == pytest.approx(ref, rel=1e-10)
    assert v < 0
    assert ip_jolis(ind(0, 1), ind(2, 3), h) == pytest.approx(v, abs=1e-8)


def test_disjoint_overlap_error():
    with pytest.raises(OverlapError):
        ip_disjoint(ind(0, 2), ind(1, 3), 0.3)


@pytest.mark.parametrize("eps", [(1.0, 1.0), (0.5, 1.5), (0.25, 0.25)])
def test_window_eps_invariance(eps):
    f = BVFunction.single(0, 3, (ExpPolyTerm(1.0, 1, -0.5),), T)
    g = BVFunction.single(1, T, (ExpPolyTerm(2.0, 0, -0.25), ExpPolyTerm(-1.0, 1)), T)
    assert ip_window(f, g, 0.3, *eps) == pytest.approx(ip_window(f, g, 0.3), abs=1e-7)


def test_window_indicator_and_exp():
    T2 = 2.0
    f = BVFunction.indicator(0, T2, T2)
    assert ip_window(f, f, 0.3) == pytest.approx(T2**0.6, rel=1e-10)
    f = BVFunction.exp(0, T, -1.0, T)
    g = BVFunction.single(0, T, (ExpPolyTerm(math.exp(-T), 0, 1.0),), T)
    assert ip_window(f, g, 0.35) == pytest.approx(ip_jolis(f, g, 0.35), rel=1e-6)


def test_fourier_examples():
    f = BVFunction.indicator(0, 1, T)
    assert ip_fourier(f, f, 0.3) == pytest.approx(1.0, rel=1e-8)
    g = BVFunction.exp(0.5, 3, -1.0, T)
    assert ip_fourier(f, g, 0.3) == ip_fourier(g, f, 0.3)


def test_grid_cov_examples():
    c = grid_cov(0.5, 8, 0.25).c
    assert np.allclose(c, 0.25 * np.eye(8))
    cov = grid_cov(0.3, 16, 0.25)
    assert cov.c[0, 0] == pytest.approx(0.25**0.6)
    rows = cov.c.sum(axis=1)
    t = np.arange(17) * 0.25
    assert np.allclose(rows, fbm_cov(t[1:], 4.0, 0.3) - fbm_cov(t[:-1], 4.0, 0.3), atol=1e-10)


@pytest.mark.parametrize("n", [7, 64, 500])
def test_grid_oracle_indicator_exact(n):
    f = ind(0, T)
    assert ip_grid_oracle(f, f, 0.3, n) == pytest.approx(T**0.6, rel=1e-12)


def test_grid_oracle_aligned_disjoint():
    ref = 0.5 * (3**0.6 - 2 * 2**0.6 + 1)
    assert ip_grid_oracle(ind(0, 1), ind(2, 3), 0.3, 64) == pytest.approx(ref, rel=1e-11)


def test_grid_oracle_self_convergence():
    f = BVFunction.exp(0, T, -1.0, T)
    g = BVFunction.single(0.5, 3.5, (ExpPolyTerm(0.5, 2),), T)
    ref = ip_jolis(f, g, 0.3)
    errs = [abs(ip_grid_oracle(f, g, 0.3, n) - ref) for n in (256, 512, 1024)]
    assert errs[0] > errs[1] > errs[2]


def test_tensor_oracle_basics():
    n, d = 8, 0.5
    c = grid_cov(0.3, n, d).c
    E = np.zeros((n, n))
    E[0, 0] = 1.0
    assert tensor_ip_grid_oracle(E, E, 0.3, n, d) == pytest.approx(c[0, 0] ** 2)
    u = np.random.default_rng(1).standard_normal(n)
    U = np.outer(u, u)
    assert tensor_ip_grid_oracle(U, U, 0.3, n, d) == pytest.approx((u @ c @ u) ** 2)


def test_cell_averages_indicator():
    assert np.allclose(cell_averages(ind(1, 2), 4), [0.0, 1.0, 0.0, 0.0])


def test_battery_shape_and_dispatch():
    bat = standard_battery()
    assert len(bat) == 12
    _, f, g = bat[1]
    assert inner_product(f, g, 0.3, "window") == pytest.approx(inner_product(f, g, 0.3), abs=1e-9)

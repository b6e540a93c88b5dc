import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbmlab.fbmsim import (
    CHOLESKY_MAX,
    ToeplitzKernel,
    build_fou,
    chaos2_form,
    chaos2_form_batch,
    cholesky_fgn,
    cholesky_fgn_batch,
    derive_seed,
    fou_from_increments,
    ft_kernel_row,
    sample_fgn,
    sample_fgn_any,
    sample_fgn_batch,
    trapezoid_sq,
)
from fbmlab.hinner import grid_cov, tensor_ip_grid_oracle
from fbmlab.specfun import fgn_autocov, gamma_fn


def seeds(master, n):
    return [derive_seed(master, i) for i in range(n)]


def test_derive_seed_distinct_and_stable():
    s = seeds(5, 1000)
    assert len(set(s)) == 1000
    assert derive_seed(5, 17) == s[17]
    assert all(0 <= x < 2**64 for x in s)


def test_determinism():
    a = sample_fgn(0.3, 100, 0.1, 42).increments
    assert np.array_equal(a, sample_fgn(0.3, 100, 0.1, 42).increments)
    assert not np.array_equal(a, sample_fgn(0.3, 100, 0.1, 43).increments)


@given(st.integers(2, 300), st.integers(0, 2**64 - 1))
def test_batch_rows_equal_single_draws(n, seed):
    row = sample_fgn_batch(0.3, n, 0.5, [seed, seed + 1])
    assert np.array_equal(row[0], sample_fgn(0.3, n, 0.5, seed).increments)


def test_n_one():
    z = sample_fgn(0.3, 1, 0.25, 3).increments
    assert z.shape == (1,)


def test_brownian_case_uncorrelated():
    z = sample_fgn_batch(0.5, 2, 1.0, seeds(11, 100000))
    r = np.corrcoef(z[:, 0], z[:, 1])[0, 1]
    assert abs(r) < 4 / math.sqrt(1e5)


def test_variance_of_sum():
    n, d, reps = 50, 0.2, 20000
    s = sample_fgn_batch(0.3, n, d, seeds(3, reps)).sum(axis=1)
    target = (n * d) ** 0.6
    se = target * math.sqrt(2.0 / reps)
    assert abs(np.var(s) - target) < 4 * se


def test_cholesky_matches_covariance():
    n, reps = 16, 40000
    z = cholesky_fgn_batch(0.3, n, 1.0, seeds(9, reps))
    emp = z.T @ z / reps
    ref = fgn_autocov(np.abs(np.arange(n)[:, None] - np.arange(n)[None, :]), 0.3)
    se = np.sqrt((ref**2 + np.outer(np.diag(ref), np.diag(ref))) / reps)
    assert np.all(np.abs(emp - ref) < 5 * se)
    assert np.array_equal(cholesky_fgn(0.3, n, 1.0, 5).increments, cholesky_fgn_batch(0.3, n, 1.0, [5])[0])


def test_cholesky_size_limit():
    with pytest.raises(ValueError):
        cholesky_fgn(0.3, CHOLESKY_MAX + 1, 1.0, 0)
    assert sample_fgn_any(0.3, 10, 1.0, 0).increments.shape == (10,)


def test_fou_limits():
    z = sample_fgn(0.3, 64, 0.1, 1).increments
    x = fou_from_increments(z, 1e-14, 1.0, 0.1)
    assert np.allclose(x, np.concatenate([[0.0], np.cumsum(z)]))
    assert np.all(fou_from_increments(z, 1.0, 0.0, 0.1) == 0.0)


def test_fou_recursion():
    z = sample_fgn(0.3, 20, 0.1, 2).increments
    x = build_fou(sample_fgn(0.3, 20, 0.1, 2), 0.7, 1.3).values
    ref = [0.0]
    for dz in z:
        ref.append(math.exp(-0.07) * ref[-1] + 1.3 * dz)
    assert np.allclose(x, ref)


def test_trapezoid():
    assert trapezoid_sq(np.array([1.0, 2.0, 3.0]), 0.5) == pytest.approx(0.5 * (0.5 + 4 + 4.5))


def test_stationary_second_moment():
    # a fine grid keeps the O(delta) bias of the recursion below the MC band
    T, d, reps = 200.0, 1 / 256, 300
    z = sample_fgn_batch(0.3, int(T / d), d, seeds(21, reps))
    m = trapezoid_sq(fou_from_increments(z, 1.0, 1.0, d), d) / T
    target = 0.3 * gamma_fn(0.6)
    assert abs(m.mean() - target) < 3 * m.std(ddof=1) / math.sqrt(reps) + 0.005 * target


def test_chaos_diagonal_kernel():
    n = 10
    kern = ToeplitzKernel(np.r_[1.0, np.zeros(n - 1)], n)
    cov = grid_cov(0.3, n, 0.5)
    z = sample_fgn(0.3, n, 0.5, 4)
    assert chaos2_form(kern, z, cov) == pytest.approx(float(np.sum(z.increments**2 - np.diag(cov.c))))


@given(st.integers(2, 80))
def test_chaos_fft_equals_dense(n):
    kern = ft_kernel_row(n, 0.3, 1.0)
    cov = grid_cov(0.3, n, 0.3)
    z = sample_fgn_batch(0.3, n, 0.3, [1, 2])
    F = kern.dense
    dense = np.einsum("ri,ij,rj->r", z, F, z) - np.trace(F @ cov.c)
    assert np.allclose(chaos2_form_batch(kern, z, cov), dense, rtol=1e-11, atol=1e-11)


def test_chaos_dimension_mismatch():
    with pytest.raises(ValueError):
        chaos2_form_batch(ft_kernel_row(8, 0.1), np.zeros((1, 9)), grid_cov(0.3, 8, 0.1))


def test_chaos_mean_and_variance():
    n, d, reps = 64, 1 / 8, 100000
    kern = ft_kernel_row(n, d, 1.0)
    cov = grid_cov(0.3, n, d)
    q = chaos2_form_batch(kern, sample_fgn_batch(0.3, n, d, seeds(8, reps)), cov)
    se = q.std() / math.sqrt(reps)
    assert abs(q.mean()) < 4 * se
    target = 2 * tensor_ip_grid_oracle(kern.dense, kern.dense, 0.3, n, d)
    # SE of a sample variance: sqrt((m4 - s^4) / N)
    se_var = math.sqrt((np.mean((q - q.mean()) ** 4) - q.var() ** 2) / reps)
    assert abs(q.var() - target) < 3 * se_var

"""Monte Carlo of the least-squares and moment drift estimators of fOU.

The least-squares numerator int X dB^H is realized as (sigma/2) times the
grid second-chaos form of f_T(t, s) = e^{-theta|t-s|}; a forward Riemann sum
would diverge for H < 1/2. The denominator is the trapezoid rule on X^2.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .fbmsim import chaos2_form_batch, derive_seed, fou_from_increments, ft_kernel_row, sample_fgn_batch, trapezoid_sq
from .hinner import grid_cov
from .specfun import ModelParams, gamma_fn, sigma_h_sq


class DenominatorError(ArithmeticError):
    pass


@dataclass(frozen=True)
class EstimatorSample:
    theta_hat: float
    theta_tilde: float
    numerator: float
    denominator: float
    seed: int


@dataclass(frozen=True)
class EstimatorBatch:
    theta_hat: np.ndarray
    theta_tilde: np.ndarray
    numerator: np.ndarray
    denominator: np.ndarray
    seeds: tuple


@dataclass(frozen=True)
class BESummary:
    t_grid: list
    n_reps: int
    dk_lse: list
    dk_mm: list
    var_norm_lse: list
    var_norm_mm: list
    mean_norm_lse: list
    beta_lse: float
    beta_lse_se: float
    beta_mm: float
    beta_mm_se: float
    mc_floor: float
    reliable: bool
    failures: dict


def normal_cdf(z):
    """Standard normal distribution function via erfc."""
    z = np.asarray(z, dtype=float)
    out = 0.5 * erfc(-z / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def kolmogorov_distance(samples, cdf=normal_cdf) -> float:
    """sup |F_N - F| for the empirical distribution of ``samples``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 1:
        raise ValueError("need at least one sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(np.abs(i / n - f)), np.max(np.abs((i - 1) / n - f))))


def moment_estimator(denominator, params: ModelParams):
    """theta_tilde = (int X^2 / (sigma^2 H Gamma(2H) T))^{-1/(2H)}."""
    h = params.h
    scale = params.sigma**2 * h * gamma_fn(2.0 * h) * params.t_horizon
    return (np.asarray(denominator) / scale) ** (-1.0 / (2.0 * h))


def _grid(params: ModelParams, n_grid: int) -> float:
    if n_grid < 1:
        raise ValueError("need n_grid >= 1")
    return params.t_horizon / n_grid


def draw_batch(params: ModelParams, n_grid: int, seeds) -> EstimatorBatch:
    """One estimator sample per seed, vectorized over the batch."""
    delta = _grid(params, n_grid)
    seeds = tuple(int(s) for s in seeds)
    z = sample_fgn_batch(params.h, n_grid, delta, seeds)
    x = fou_from_increments(z, params.theta, params.sigma, delta)
    den = trapezoid_sq(x, delta)
    if np.any(den <= 0):
        bad = [s for s, d in zip(seeds, den) if d <= 0]
        raise DenominatorError(f"non-positive denominator for seeds {bad[:5]}")
    kern = ft_kernel_row(n_grid, delta, params.theta)
    num = 0.5 * params.sigma * chaos2_form_batch(kern, z, grid_cov(params.h, n_grid, delta))
    return EstimatorBatch(params.theta - num / den, moment_estimator(den, params), num, den, seeds)


def draw_sample(params: ModelParams, n_grid: int, seed: int) -> EstimatorSample:
    b = draw_batch(params, n_grid, [seed])
    return EstimatorSample(float(b.theta_hat[0]), float(b.theta_tilde[0]), float(b.numerator[0]), float(b.denominator[0]), int(seed))


def draw_many(params: ModelParams, n_grid: int, seeds, threads: int = 1, chunk: int | None = None) -> EstimatorBatch:
    """Batches of draws gathered in seed order, independent of the thread count."""
    seeds = list(seeds)
    if chunk is None:
        # about 2e7 doubles of embedding normals per chunk
        m = 1 << max(1, math.ceil(math.log2(max(2, 2 * (n_grid - 1)))))
        chunk = max(16, int(2e7 // (2 * m)))
    parts = [seeds[i : i + chunk] for i in range(0, len(seeds), chunk)]
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(lambda p: draw_batch(params, n_grid, p), parts))
    else:
        res = [draw_batch(params, n_grid, p) for p in parts]
    cat = lambda name: np.concatenate([getattr(r, name) for r in res])
    return EstimatorBatch(cat("theta_hat"), cat("theta_tilde"), cat("numerator"), cat("denominator"), tuple(seeds))


def normalized_statistics(batch: EstimatorBatch, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """sqrt(T/(theta sigma_H^2)) (theta_hat - theta) and sqrt(4H^2 T/(theta sigma_H^2)) (theta_tilde - theta).

    Both carry an extra factor sigma so that they stay standardized for sigma != 1.
    """
    h, th, T = params.h, params.theta, params.t_horizon
    s2 = sigma_h_sq(h)
    lse = params.sigma * math.sqrt(T / (th * s2)) * (batch.theta_hat - th)
    mm = math.sqrt(4.0 * h * h * T / (th * s2)) * (batch.theta_tilde - th)
    return lse, mm


def _rate_fit(ts, dks, floor):
    keep = [(t, d) for t, d in zip(ts, dks) if d is not None and d >= 2.0 * floor]
    if len(keep) < 2:
        return float("nan"), float("nan")
    lt = np.log([t for t, _ in keep])
    ld = np.log([d for _, d in keep])
    A = np.vstack([lt, np.ones_like(lt)]).T
    coef, *_ = np.linalg.lstsq(A, ld, rcond=None)
    if len(keep) > 2:
        resid = ld - A @ coef
        s2 = float(resid @ resid) / (len(keep) - 2)
        se = math.sqrt(s2 / float(np.sum((lt - lt.mean()) ** 2)))
    else:
        se = float("nan")
    return float(-coef[0]), se


def be_experiment(
    params: ModelParams, t_grid, n_reps: int, delta: float, master_seed: int, threads: int = 1, allow_small: bool = False
) -> BESummary:
    """Kolmogorov distances of both normalized estimators over a T grid, and fitted rates.

    Runs with fewer than 1000 replications need ``allow_small``; their rate
    fits are always reported as unreliable (nan).
    """
    if n_reps < 1000 and not allow_small:
        raise ValueError("n_reps must be at least 1000")
    floor = 0.6 / math.sqrt(n_reps)
    cols = {k: [] for k in ("dk_lse", "dk_mm", "var_lse", "var_mm", "mean_lse")}
    failures = {}
    for T in t_grid:
        n_grid = T / delta
        if abs(n_grid - round(n_grid)) > 1e-9 * n_grid:
            raise ValueError(f"T = {T} is not a multiple of delta = {delta}")
        p = ModelParams(params.theta, params.sigma, params.h, float(T))
        # seeds depend on (master seed, T, replication) only
        tseed = derive_seed(master_seed, int(round(T * 1e6)))
        try:
            b = draw_many(p, int(round(n_grid)), (derive_seed(tseed, i) for i in range(n_reps)), threads)
        except (ArithmeticError, ValueError) as exc:
            failures[T] = str(exc)
            for v in cols.values():
                v.append(None)
            continue
        lse, mm = normalized_statistics(b, p)
        cols["dk_lse"].append(kolmogorov_distance(lse))
        cols["dk_mm"].append(kolmogorov_distance(mm))
        cols["var_lse"].append(float(np.var(lse)))
        cols["var_mm"].append(float(np.var(mm)))
        cols["mean_lse"].append(float(np.mean(lse)))
    ts = list(t_grid)
    nan = (float("nan"), float("nan"))
    bl, bls = _rate_fit(ts, cols["dk_lse"], floor) if n_reps >= 1000 else nan
    bm, bms = _rate_fit(ts, cols["dk_mm"], floor) if n_reps >= 1000 else nan
    return BESummary(
        ts, n_reps, cols["dk_lse"], cols["dk_mm"], cols["var_lse"], cols["var_mm"], cols["mean_lse"],
        bl, bls, bm, bms, floor, bool(np.isfinite(bl)), failures,
    )


def rate_table(summary: BESummary, h: float) -> list[dict]:
    """d_K scaled by sqrt(T) and by T^{1-2H}; the flatter column shows the realized rate."""
    rows = []
    for i, T in enumerate(summary.t_grid):
        row = {"T": T}
        for key in ("dk_lse", "dk_mm"):
            d = getattr(summary, key)[i]
            row[key] = d
            row[key + "_sqrtT"] = None if d is None else d * math.sqrt(T)
            row[key + "_T1m2H"] = None if d is None else d * T ** (1.0 - 2.0 * h)
        rows.append(row)
    return rows

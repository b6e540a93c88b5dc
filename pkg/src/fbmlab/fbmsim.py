"""Fractional Gaussian noise, fOU paths and grid second-chaos forms.

Increments are drawn by circulant embedding (Davies-Harte) with a Cholesky
path for small n. Every draw is a pure function of (seed, n, h, delta); the
batch routines produce exactly the rows the single-draw routines would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import lfilter

from .hinner import GridCovariance, grid_cov, toeplitz_matvec
from .specfun import ModelParams, _h, fgn_autocov

CHOLESKY_MAX = 4096
_MASK = (1 << 64) - 1


class EmbeddingError(ValueError):
    """Circulant embedding produced a significantly negative eigenvalue."""


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Seed of replication ``index``; independent of scheduling order."""
    return splitmix64((splitmix64(master_seed & _MASK) + index) & _MASK)


@dataclass(frozen=True)
class FgnSample:
    increments: np.ndarray
    h: float
    delta: float
    seed: int


@dataclass(frozen=True)
class FouPath:
    values: np.ndarray
    params: ModelParams
    delta: float


@dataclass(frozen=True)
class ToeplitzKernel:
    first_row: np.ndarray
    n: int

    @classmethod
    def from_function(cls, f, n: int, delta: float) -> "ToeplitzKernel":
        """Kernel f(|t_i - t_j|) sampled at cell midpoints (lags k * delta)."""
        row = np.asarray(f(np.arange(n) * delta), dtype=float)
        return cls(row, n)

    @property
    def dense(self) -> np.ndarray:
        i = np.arange(self.n)
        return self.first_row[np.abs(i[:, None] - i[None, :])]


def ft_kernel_row(n: int, delta: float, theta: float = 1.0) -> ToeplitzKernel:
    return ToeplitzKernel.from_function(lambda u: np.exp(-theta * u), n, delta)


# ------------------------------------------------------------------ fGn


@lru_cache(maxsize=32)
def _embedding(h: float, n: int, delta: float) -> np.ndarray:
    """sqrt of circulant eigenvalues / m for the fGn covariance of n increments."""
    m = 1 << max(1, math.ceil(math.log2(2 * (n - 1))))
    half = m // 2
    r = np.asarray(fgn_autocov(np.arange(half + 1), h, delta), dtype=float)
    circ = np.concatenate([r, r[1:half][::-1]])
    lam = np.fft.fft(circ).real
    if lam.min() < -1e-9 * lam.max():
        raise EmbeddingError(f"negative circulant eigenvalue {lam.min():.3e}")
    out = np.sqrt(np.clip(lam, 0.0, None) / m)
    out.setflags(write=False)
    return out


def _normals(seed: int, size: int) -> np.ndarray:
    return np.random.default_rng(seed & _MASK).standard_normal(size)


def circulant_from_normals(sq: np.ndarray, eps: np.ndarray, n: int) -> np.ndarray:
    """Increments from two normal vectors (last axis 2m) and sqrt eigenvalues."""
    m = sq.size
    w = sq * (eps[..., :m] + 1j * eps[..., m:])
    return np.fft.fft(w, axis=-1).real[..., :n]


def sample_fgn(h, n: int, delta: float, seed: int) -> FgnSample:
    """Exact fGn increments by circulant embedding."""
    h = _h(h)
    if n < 1:
        raise ValueError("need n >= 1")
    if n == 1:
        z = _normals(seed, 1) * delta**h
        return FgnSample(z, h, float(delta), int(seed))
    sq = _embedding(h, int(n), float(delta))
    z = circulant_from_normals(sq, _normals(seed, 2 * sq.size), n)
    return FgnSample(z, h, float(delta), int(seed))


def sample_fgn_batch(h, n: int, delta: float, seeds) -> np.ndarray:
    """Rows equal to sample_fgn(h, n, delta, seed).increments for each seed."""
    h = _h(h)
    seeds = list(seeds)
    if n == 1:
        return np.stack([_normals(s, 1) * delta**h for s in seeds])
    sq = _embedding(h, int(n), float(delta))
    eps = np.stack([_normals(s, 2 * sq.size) for s in seeds])
    return circulant_from_normals(sq, eps, n)


@lru_cache(maxsize=8)
def _cholesky(h: float, n: int, delta: float) -> np.ndarray:
    c = grid_cov(h, n, delta).c
    return np.linalg.cholesky(c)


def cholesky_fgn(h, n: int, delta: float, seed: int) -> FgnSample:
    """fGn increments from the Cholesky factor of the exact covariance (n <= 4096)."""
    h = _h(h)
    if not 1 <= n <= CHOLESKY_MAX:
        raise ValueError(f"Cholesky path needs 1 <= n <= {CHOLESKY_MAX}")
    L = _cholesky(h, int(n), float(delta))
    return FgnSample(L @ _normals(seed, n), h, float(delta), int(seed))


def cholesky_fgn_batch(h, n: int, delta: float, seeds) -> np.ndarray:
    h = _h(h)
    L = _cholesky(h, int(n), float(delta))
    eps = np.stack([_normals(s, n) for s in seeds])
    return eps @ L.T


def sample_fgn_any(h, n: int, delta: float, seed: int) -> FgnSample:
    """Circulant embedding, falling back to Cholesky if the embedding fails."""
    try:
        return sample_fgn(h, n, delta, seed)
    except EmbeddingError:
        return cholesky_fgn(h, n, delta, seed)


# ------------------------------------------------------------------ fOU


def fou_from_increments(dB, theta: float, sigma: float, delta: float) -> np.ndarray:
    """X_{k+1} = e^{-theta delta} X_k + sigma dB_k with X_0 = 0 (last axis)."""
    dB = np.asarray(dB, dtype=float)
    x = np.zeros(dB.shape[:-1] + (dB.shape[-1] + 1,))
    x[..., 1:] = lfilter([sigma], [1.0, -math.exp(-theta * delta)], dB, axis=-1)
    return x


def build_fou(fgn: FgnSample, theta: float, sigma: float) -> FouPath:
    n = fgn.increments.size
    params = ModelParams(theta, sigma, fgn.h, n * fgn.delta)
    return FouPath(fou_from_increments(fgn.increments, theta, sigma, fgn.delta), params, fgn.delta)


def trapezoid_sq(x, delta: float) -> np.ndarray:
    """Trapezoid rule for int X^2 dt on the path grid (last axis)."""
    x2 = np.asarray(x) ** 2
    return delta * (x2.sum(-1) - 0.5 * (x2[..., 0] + x2[..., -1]))


# ------------------------------------------------------------------ chaos forms


def chaos2_trace(kern: ToeplitzKernel, cov: GridCovariance) -> float:
    """trace(F C) for symmetric Toeplitz F and C."""
    n = kern.n
    k = np.arange(n)
    w = np.where(k == 0, n, 2 * (n - k)).astype(float)
    return float(np.sum(w * kern.first_row * cov.row))


def chaos2_form_batch(kern: ToeplitzKernel, z, cov: GridCovariance) -> np.ndarray:
    """z^T F z - trace(F C) for each row of z."""
    z = np.asarray(z, dtype=float)
    if not (kern.n == z.shape[-1] == cov.n):
        raise ValueError(f"dimension mismatch: kernel {kern.n}, sample {z.shape[-1]}, covariance {cov.n}")
    fz = toeplitz_matvec(kern.first_row, z)
    return np.sum(z * fz, axis=-1) - chaos2_trace(kern, cov)


def chaos2_form(kern: ToeplitzKernel, fgn: FgnSample, cov: GridCovariance) -> float:
    """Grid second-chaos form of the increments: z^T F z - trace(F C)."""
    return float(chaos2_form_batch(kern, fgn.increments, cov))

"""Special functions and model constants.

Gamma uses a Lanczos approximation (g = 7, nine coefficients) with the
reflection formula below 1/2. Everything else is closed-form arithmetic
on the fBm covariance R_H(t, s) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


class PoleError(ValueError):
    """Gamma evaluated at a non-positive integer."""


def _gamma_lanczos(x: float) -> float:
    # valid for x >= 0.5
    x -= 1.0
    acc = _LANCZOS_COEF[0]
    for k in range(1, 9):
        acc += _LANCZOS_COEF[k] / (x + k)
    t = x + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (x + 0.5) * math.exp(-t) * acc


def gamma_fn(x: float) -> float:
    """Euler Gamma function for real x outside the non-positive integers."""
    x = float(x)
    if x <= 0.0 and x == math.floor(x):
        raise PoleError(f"Gamma has a pole at {x}")
    if x < 0.5:
        return math.pi / (math.sin(math.pi * x) * _gamma_lanczos(1.0 - x))
    return _gamma_lanczos(x)


@dataclass(frozen=True)
class HurstParam:
    h: float

    def __post_init__(self):
        if not 0.0 < self.h <= 0.5:
            raise ValueError(f"Hurst parameter must lie in (0, 1/2], got {self.h}")

    @property
    def rough(self) -> bool:
        return self.h < 0.5


@dataclass(frozen=True)
class ModelParams:
    theta: float
    sigma: float
    h: float
    t_horizon: float

    def __post_init__(self):
        if self.theta <= 0 or self.sigma <= 0 or self.t_horizon <= 0:
            raise ValueError("theta, sigma and t_horizon must be positive")
        if not 0.0 < self.h < 0.5:
            raise ValueError(f"model paths need 0 < H < 1/2, got {self.h}")


def _h(h) -> float:
    return float(h.h if isinstance(h, HurstParam) else h)


def alpha_h(h) -> float:
    """alpha_H = H(2H - 1); negative for H < 1/2."""
    h = _h(h)
    return h * (2.0 * h - 1.0)


def sigma_h_sq(h) -> float:
    """Asymptotic variance constant (4H-1) + 2G(2-4H)G(4H)/(G(2H)G(1-2H))."""
    h = _h(h)
    if not 0.0 < h < 0.5:
        raise ValueError("sigma_h_sq needs 0 < H < 1/2")
    ratio = gamma_fn(2.0 - 4.0 * h) * gamma_fn(4.0 * h) / (gamma_fn(2.0 * h) * gamma_fn(1.0 - 2.0 * h))
    return (4.0 * h - 1.0) + 2.0 * ratio


def norm_slope(h) -> float:
    """Slope 2(H Gamma(2H))^2 sigma_H^2 of the asymptote of ||f_T||^2 at theta = 1."""
    h = _h(h)
    return 2.0 * (h * gamma_fn(2.0 * h)) ** 2 * sigma_h_sq(h)


def fbm_cov(t, s, h):
    """Covariance of fBm at times t, s >= 0."""
    h2 = 2.0 * _h(h)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    out = 0.5 * (t**h2 + s**h2 - np.abs(t - s) ** h2)
    return float(out) if out.ndim == 0 else out


def fbm_cov_dt(t, s, h):
    """Partial derivative of R_H(t, s) in t: H(t^{2H-1} - sgn(t-s)|t-s|^{2H-1})."""
    h = _h(h)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t <= 0) or np.any(t == s):
        raise ValueError("fbm_cov_dt is singular at t = 0 and t = s")
    b = 2.0 * h - 1.0
    out = h * (t**b - np.sign(t - s) * np.abs(t - s) ** b)
    return float(out) if out.ndim == 0 else out


def fgn_autocov(k, h, delta: float = 1.0):
    """Autocovariance of fractional Gaussian noise with step delta at lag k."""
    h2 = 2.0 * _h(h)
    k = np.abs(np.asarray(k, dtype=float))
    out = 0.5 * delta**h2 * (np.abs(k + 1) ** h2 - 2.0 * k**h2 + np.abs(k - 1) ** h2)
    return float(out) if out.ndim == 0 else out

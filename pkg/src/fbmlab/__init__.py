"""Numerical laboratory for fractional Brownian motion with H < 1/2.

Inner products on the fBm Hilbert space, asymptotes of the norm of the
exponential kernel e^{-theta|t-s|} in the tensor square, and Monte Carlo
Berry-Esseen experiments for fractional Ornstein-Uhlenbeck drift estimators.
"""

__version__ = "0.1.0"

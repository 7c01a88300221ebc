"""fbmxcov: cross-covariance machinery for divergence integrals of fBm coefficients."""

__version__ = "0.1.0"

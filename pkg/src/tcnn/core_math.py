"""Gaussian special functions, Gauss-Hermite quadrature, diagonal Gaussian
measures and the seeded random-stream helpers used by every other module."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import log_ndtr, ndtr

from .errors import ConfigurationError

SQRT_PI = math.sqrt(math.pi)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

MAX_QUADRATURE_ORDER = 512
DEFAULT_QUADRATURE_ORDER = 64


def std_normal_cdf(x):
    """Standard normal cdf, Phi(x)."""
    return ndtr(x)


def log_std_normal_cdf(x):
    """log(Phi(x)), accurate far into the lower tail (uses the asymptotic
    expansion below x = -20 internally)."""
    return log_ndtr(x)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - LOG_SQRT_2PI)


def log_std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - LOG_SQRT_2PI


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule for integrals of the form ``int f(s) exp(-s^2) ds``.

    ``weights`` may underflow to zero for the outermost nodes of very high
    orders (above ~200); ``log_weights`` stays finite and is what the
    likelihood code accumulates with.
    """

    nodes: np.ndarray
    log_weights: np.ndarray
    order: int

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def integrate(self, f) -> float:
        """Apply the rule to a vectorised integrand ``f(nodes)``."""
        return float(np.sum(self.weights * f(self.nodes)))


def _hermite_functions(x: np.ndarray, n: int):
    """Orthonormal Hermite functions psi_{n-1}(x), psi_n(x) by the stable
    three-term recurrence (the exp(-x^2/2) factor is built in)."""
    p_prev = np.zeros_like(x)
    p = np.exp(-0.5 * x * x) / math.pi**0.25
    for k in range(n):
        p_prev, p = p, math.sqrt(2.0 / (k + 1)) * x * p - math.sqrt(k / (k + 1)) * p_prev
    return p_prev, p


def gauss_hermite(order: int) -> QuadratureRule:
    """Nodes and weights of the ``order``-point Gauss-Hermite rule.

    Golub-Welsch eigenvalues, polished by Newton steps on the orthonormal
    Hermite function, with weights computed in the log domain as
    ``w_i = exp(-s_i^2) / (n psi_{n-1}(s_i)^2)``.
    """
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= MAX_QUADRATURE_ORDER:
        raise ConfigurationError(
            f"quadrature order must be an integer in [1, {MAX_QUADRATURE_ORDER}], got {order!r}"
        )
    n = int(order)
    if n == 1:
        return QuadratureRule(np.zeros(1), np.array([math.log(SQRT_PI)]), 1)
    off = np.sqrt(np.arange(1, n) / 2.0)
    s = eigh_tridiagonal(np.zeros(n), off, eigvals_only=True)
    for _ in range(3):
        p_prev, p = _hermite_functions(s, n)
        dp = math.sqrt(2.0 * n) * p_prev - s * p
        s = s - p / dp
    s = np.sort(s)
    s = 0.5 * (s - s[::-1])
    if n % 2:
        s[n // 2] = 0.0
    p_prev, _ = _hermite_functions(s, n)
    log_w = -s * s - math.log(n) - 2.0 * np.log(np.abs(p_prev))
    log_w = 0.5 * (log_w + log_w[::-1])
    return QuadratureRule(s, log_w, n)


@dataclass(frozen=True)
class DiagonalGaussian:
    """Centred Gaussian measure N(0, diag(variances)) on a truncated l2."""

    variances: np.ndarray
    trace: float = field(init=False)

    def __post_init__(self):
        var = np.ascontiguousarray(self.variances, dtype=float)
        if var.ndim != 1 or var.size == 0:
            raise ConfigurationError("variances must be a non-empty vector")
        if not np.all(np.isfinite(var)) or np.any(var <= 0):
            raise ConfigurationError("all prior variances must be finite and strictly positive")
        var.setflags(write=False)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "trace", float(np.sum(var)))
        std = np.sqrt(var)
        std.setflags(write=False)
        object.__setattr__(self, "_std", std)

    @property
    def dimension(self) -> int:
        return self.variances.size

    @property
    def std(self) -> np.ndarray:
        return self._std

    def log_density(self, x) -> float:
        """Unnormalised log density; only differences are meaningful."""
        x = np.asarray(x, dtype=float)
        return -0.5 * float(np.sum(x * x / self.variances))


def sample_gaussian(measure: DiagonalGaussian, rng: np.random.Generator) -> np.ndarray:
    return measure.std * rng.standard_normal(measure.dimension)


def make_rng(seed: int, stream: str | int | None = None) -> np.random.Generator:
    """Seeded generator for a named sub-stream.

    The same ``(seed, stream)`` pair always gives the same sequence; distinct
    stream names give statistically independent sequences (the name is folded
    into the SeedSequence spawn key).
    """
    if stream is None:
        key = ()
    elif isinstance(stream, (int, np.integer)):
        key = (int(stream),)
    else:
        key = (zlib.crc32(str(stream).encode("utf-8")),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def derive_seed(seed: int, *names) -> int:
    """Deterministic child seed for nested sub-tasks (e.g. one width-sweep cell)."""
    rng = make_rng(seed, "/".join(str(n) for n in names))
    return int(rng.integers(0, 2**31 - 1))

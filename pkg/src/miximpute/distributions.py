"""Exact samplers and density evaluators used by the Gibbs sweep and the
bootstrap, each covered by an analytic or quadrature oracle in the tests.

All callables are pure given an :class:`~miximpute.rng.RngStream`; distinct
streams may be used concurrently, a single stream must not be shared.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln

from . import kernels
from .errors import NumericalError, ValidationError
from .rng import RngStream

__all__ = [
    "TruncationInterval",
    "sample_polya_gamma",
    "sample_truncated_normal",
    "sample_inverse_wishart",
    "sample_matrix_normal",
    "sample_categorical",
    "sample_categorical_logits",
    "gaussian_logpdf",
    "chol_with_jitter",
    "gamma_log_moments",
]


@dataclass(frozen=True)
class TruncationInterval:
    """Open interval (lower, upper); either bound may be infinite."""

    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValidationError(
                f"invalid truncation interval: lower={self.lower} >= upper={self.upper}"
            )


def sample_polya_gamma(c: float, rng: RngStream) -> float:
    """Exact draw from PG(1, c) via the alternating-series rejection sampler."""
    c = float(c)
    if not math.isfinite(c):
        raise ValidationError(f"PG tilt must be finite, got {c}")
    return kernels.pg_draw(c, rng.gen)


def sample_truncated_normal(
    mu: float, sigma2: float, interval: TruncationInterval, rng: RngStream
) -> float:
    """Draw from N(mu, sigma2) conditioned to lie strictly inside the interval."""
    if not sigma2 > 0.0:
        raise ValidationError(f"sigma2 must be positive, got {sigma2}")
    return kernels.truncnorm_draw(
        float(mu), math.sqrt(sigma2), interval.lower, interval.upper, rng.gen
    )


def chol_with_jitter(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, with one diagonal-jitter retry before failing.

    The retry adds 1e-8 * trace/p to the diagonal; MCMC occasionally produces
    near-singular covariances for empty components.
    """
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    p = a.shape[0]
    jitter = 1e-8 * np.trace(a) / p
    if jitter <= 0.0:
        jitter = 1e-10
    try:
        return np.linalg.cholesky(a + jitter * np.eye(p))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"matrix not SPD after jitter retry (jitter={jitter:.3e})"
        ) from exc


def sample_inverse_wishart(nu: float, scale: np.ndarray, rng: RngStream) -> np.ndarray:
    """Draw from IW(nu, scale); mean is scale/(nu-p-1) for nu > p+1."""
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if scale.shape != (p, p):
        raise ValidationError(f"scale must be square, got {scale.shape}")
    if not nu > p - 1:
        raise ValidationError(f"need nu > p-1, got nu={nu}, p={p}")
    ls = chol_with_jitter(scale)
    gen = rng.gen
    # Bartlett factor of a Wishart(nu, I)
    a = np.zeros((p, p))
    for i in range(p):
        a[i, i] = math.sqrt(gen.chisquare(nu - i))
        for j in range(i):
            a[i, j] = gen.standard_normal()
    # X = L_S A^-T A^-1 L_S^T  ~  IW(nu, scale)
    from scipy.linalg import solve_triangular

    t = solve_triangular(a, ls.T, lower=True, check_finite=False)
    x = t.T @ t
    return 0.5 * (x + x.T)


def sample_matrix_normal(
    m: np.ndarray, u: np.ndarray, v: np.ndarray, rng: RngStream
) -> np.ndarray:
    """Draw from MN(m, u, v): vec(X) ~ N(vec(m), v (x) u)."""
    m = np.asarray(m, dtype=float)
    lu = chol_with_jitter(np.asarray(u, dtype=float))
    lv = chol_with_jitter(np.asarray(v, dtype=float))
    z = rng.gen.standard_normal(m.shape)
    return m + lu @ z @ lv.T


def sample_categorical(weights: np.ndarray, rng: RngStream) -> int:
    """Index g with probability weights_g / sum(weights)."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValidationError("weights must be a nonempty vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0.0):
        raise ValidationError("weights must be finite and nonnegative")
    if not np.any(w > 0.0):
        raise ValidationError("weights must not be all zero")
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    return int(kernels.categorical_from_logits(logw, rng.gen))


def sample_categorical_logits(logits: np.ndarray, rng: RngStream) -> int:
    """Index g with probability softmax(logits)_g; overflow-safe."""
    lw = np.asarray(logits, dtype=float)
    if lw.ndim != 1 or lw.size == 0:
        raise ValidationError("logits must be a nonempty vector")
    if np.all(np.isneginf(lw)) or np.any(np.isnan(lw)) or np.any(np.isposinf(lw)):
        raise ValidationError("logits must contain at least one finite entry and no +inf/nan")
    return int(kernels.categorical_from_logits(lw, rng.gen))


def gaussian_logpdf(y: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Multivariate normal log density via Cholesky (no explicit inverse)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = y.shape[0]
    if mean.shape[0] != d or cov.shape != (d, d):
        raise ValidationError(
            f"dimension mismatch: y {y.shape}, mean {mean.shape}, cov {cov.shape}"
        )
    l = chol_with_jitter(cov)
    from scipy.linalg import solve_triangular

    r = solve_triangular(l, y - mean, lower=True)
    return float(
        -0.5 * d * math.log(2.0 * math.pi)
        - np.sum(np.log(np.diag(l)))
        - 0.5 * np.dot(r, r)
    )


@functools.lru_cache(maxsize=None)
def gamma_log_moments(a: float) -> tuple[float, float]:
    """(E[log U], Var(log U)) for U ~ Gamma(a, 1), by 1-d quadrature.

    Integrates on the log scale, v = log u, where the integrand
    exp(a v - e^v - lgamma(a)) is smooth; cached per shape a.
    """
    if not a > 0.0:
        raise ValidationError(f"gamma shape must be positive, got {a}")
    lga = gammaln(a)

    def density(v):
        if v > 700.0:  # e^v overflows; the density is zero there anyway
            return 0.0
        t = a * v - math.exp(v) - lga
        return math.exp(t) if t > -745.0 else 0.0

    m1 = quad(lambda v: v * density(v), -np.inf, np.inf, limit=200)[0]
    m2 = quad(lambda v: v * v * density(v), -np.inf, np.inf, limit=200)[0]
    return m1, m2 - m1 * m1

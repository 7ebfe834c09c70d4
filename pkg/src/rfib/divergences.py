"""Renyi and KL divergences between a diagonal Gaussian and a spherical prior.

The prior is ``Q = N(0, gamma2 * I_d)`` and the posterior is
``P = N(mu, diag(var))``.  Orders ``alpha = 0`` and ``alpha = 1`` are the
extended orders (zero and KL respectively) and take exact branches.

The batched helpers (``renyi_rows`` / ``renyi_rows_grad``) operate on
``(N, d)`` arrays and are what the training code calls; the scalar API
below wraps them for a single :class:`DiagGaussian`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    NonPositiveVariance,
    QuadratureNonConvergence,
    ValidityViolation,
)

# alpha*gamma2 + (1 - alpha)*var below this is treated as invalid, not huge
BOUNDARY_EPS = 1e-12


@dataclass(frozen=True)
class DiagGaussian:
    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        var = np.atleast_1d(np.asarray(self.var, dtype=np.float64))
        if mu.ndim != 1 or mu.shape != var.shape or mu.size < 1:
            raise DimensionMismatch(f"mu {mu.shape} and var {var.shape} must be equal-length vectors")
        if not np.all(var > 0):
            raise NonPositiveVariance("variances must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)

    @property
    def d(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class SphericalPrior:
    gamma2: float = 1.0
    d: int | None = None

    def __post_init__(self):
        if not self.gamma2 > 0:
            raise NonPositiveVariance(f"prior variance gamma2 must be > 0, got {self.gamma2}")


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not alpha >= 0:
        raise ValueError(f"Renyi order must be >= 0, got {alpha}")
    return alpha


def _check_pair(p: DiagGaussian, q: SphericalPrior):
    if q.d is not None and q.d != p.d:
        raise DimensionMismatch(f"posterior has d={p.d}, prior has d={q.d}")


def max_valid_variance(alpha: float, q: SphericalPrior | float = 1.0) -> float:
    """Upper bound on each posterior variance for the closed form to exist.

    Returns ``inf`` when ``alpha <= 1`` (any positive variance is admissible).
    """
    alpha = _check_alpha(alpha)
    gamma2 = q.gamma2 if isinstance(q, SphericalPrior) else float(q)
    if alpha <= 1:
        return math.inf
    return alpha * gamma2 / (alpha - 1)


def _validate_rows(var: np.ndarray, gamma2: float, alpha: float) -> np.ndarray:
    if not np.all(var > 0):
        raise NonPositiveVariance("variances must be strictly positive")
    a_mix = alpha * gamma2 + (1 - alpha) * var
    if alpha > 1:
        bound = alpha * gamma2 / (alpha - 1)
        if np.any(var >= bound) or np.any(a_mix < BOUNDARY_EPS):
            raise ValidityViolation(
                f"alpha={alpha:g} requires every variance < alpha*gamma2/(alpha-1) = {bound:.12g}",
                bound=bound,
            )
    return a_mix


def renyi_rows(mu: np.ndarray, var: np.ndarray, gamma2: float, alpha: float) -> np.ndarray:
    """Per-row divergence for ``(N, d)`` arrays of means and variances."""
    alpha = _check_alpha(alpha)
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if mu.shape != var.shape:
        raise DimensionMismatch(f"mu {mu.shape} and var {var.shape} differ")
    if alpha == 0:
        if not np.all(var > 0):
            raise NonPositiveVariance("variances must be strictly positive")
        return np.zeros(mu.shape[:-1])
    if alpha == 1:
        if not np.all(var > 0):
            raise NonPositiveVariance("variances must be strictly positive")
        return -0.5 * np.sum(
            np.log(var) - math.log(gamma2) + 1 - var / gamma2 - mu**2 / gamma2, axis=-1
        )
    a_mix = _validate_rows(var, gamma2, alpha)
    quad = 0.5 * alpha * np.sum(mu**2 / a_mix, axis=-1)
    log_ratio = np.log(a_mix) - (1 - alpha) * np.log(var) - alpha * math.log(gamma2)
    return quad - np.sum(log_ratio, axis=-1) / (2 * (alpha - 1))


def renyi_rows_grad(mu: np.ndarray, var: np.ndarray, gamma2: float, alpha: float):
    """Partial derivatives of :func:`renyi_rows` w.r.t. ``mu`` and ``var``."""
    alpha = _check_alpha(alpha)
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if mu.shape != var.shape:
        raise DimensionMismatch(f"mu {mu.shape} and var {var.shape} differ")
    if alpha == 0:
        if not np.all(var > 0):
            raise NonPositiveVariance("variances must be strictly positive")
        return np.zeros_like(mu), np.zeros_like(var)
    if alpha == 1:
        if not np.all(var > 0):
            raise NonPositiveVariance("variances must be strictly positive")
        return mu / gamma2, 0.5 * (1 / gamma2 - 1 / var)
    a_mix = _validate_rows(var, gamma2, alpha)
    d_mu = alpha * mu / a_mix
    d_var = -alpha * (1 - alpha) * mu**2 / (2 * a_mix**2) + 0.5 * (1 / a_mix - 1 / var)
    return d_mu, d_var


def renyi_div(p: DiagGaussian, q: SphericalPrior, alpha: float) -> float:
    """Closed-form ``D_alpha(p || q)``."""
    _check_pair(p, q)
    return float(renyi_rows(p.mu, p.var, q.gamma2, alpha))


def kl_div(p: DiagGaussian, q: SphericalPrior) -> float:
    _check_pair(p, q)
    return float(renyi_rows(p.mu, p.var, q.gamma2, 1.0))


def renyi_div_grad(p: DiagGaussian, q: SphericalPrior, alpha: float):
    """Return ``(dD/dmu, dD/dvar)`` as two length-d arrays."""
    _check_pair(p, q)
    return renyi_rows_grad(p.mu, p.var, q.gamma2, alpha)


def _log_normal_pdf(x, mean, var):
    return -0.5 * (math.log(2 * math.pi * var) + (x - mean) ** 2 / var)


def _simpson(values: np.ndarray, h: float) -> float:
    return h / 3 * (values[0] + values[-1] + 4 * values[1:-1:2].sum() + 2 * values[2:-1:2].sum())


def _overlap_integral_1d(mu, var, gamma2, alpha, n_points, max_refinements, rtol):
    """Integral of p(x)^alpha q(x)^(1-alpha) over the real line, by composite Simpson."""
    prec = alpha / var + (1 - alpha) / gamma2
    if prec <= 0:
        raise ValidityViolation("integrand is not integrable for these inputs")
    eff_var = 1 / prec
    eff_mean = alpha * mu / var * eff_var
    half_width = abs(mu) + abs(eff_mean) + 12 * math.sqrt(max(var, gamma2, eff_var))

    def integrand(x):
        return np.exp(alpha * _log_normal_pdf(x, mu, var) + (1 - alpha) * _log_normal_pdf(x, 0.0, gamma2))

    n = max(int(n_points), 8)
    n += n % 2
    x = np.linspace(-half_width, half_width, n + 1)
    prev = _simpson(integrand(x), x[1] - x[0])
    for _ in range(max_refinements):
        n *= 2
        x = np.linspace(-half_width, half_width, n + 1)
        cur = _simpson(integrand(x), x[1] - x[0])
        if abs(cur - prev) <= rtol * abs(cur):
            return cur
        prev = cur
    raise QuadratureNonConvergence(
        f"Simpson refinements still differ by {abs(cur - prev):.3e} after {n} intervals"
    )


def renyi_div_oracle(
    p: DiagGaussian,
    q: SphericalPrior,
    alpha: float,
    n_points: int = 256,
    max_refinements: int = 12,
    rtol: float = 1e-9,
) -> float:
    """Renyi divergence from its integral definition, by numerical quadrature.

    Independent of the closed form: the integral factorises over coordinates
    for diagonal Gaussians, so each coordinate is integrated separately and
    the logs summed.  Intended as a test oracle for small ``d``.
    """
    _check_pair(p, q)
    alpha = _check_alpha(alpha)
    if alpha == 0 or alpha == 1:
        raise ValueError("the quadrature oracle is defined for alpha > 0, alpha != 1")
    if p.d > 4:
        raise DimensionMismatch(f"oracle supports d <= 4, got {p.d}")
    if alpha > 1:
        _validate_rows(p.var, q.gamma2, alpha)
    log_total = 0.0
    for m, v in zip(p.mu, p.var):
        log_total += math.log(
            _overlap_integral_1d(float(m), float(v), q.gamma2, alpha, n_points, max_refinements, rtol)
        )
    return log_total / (alpha - 1)

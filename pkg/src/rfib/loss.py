"""The RFIB batch objective and its IB / CFB reductions."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .divergences import renyi_rows
from .errors import ConfigError, LengthMismatch

PROB_CLIP = 1e-7


@dataclass(frozen=True)
class RfibConfig:
    alpha: float = 1.0
    beta1: float = 30.0
    beta2: float = 30.0
    gamma2: float = 1.0
    d: int = 32
    mc_samples: int = 1

    def __post_init__(self):
        for name in ("alpha", "beta1", "beta2", "gamma2"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ConfigError(f"{name} must be a finite number, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ConfigError("beta1 and beta2 must be >= 0")
        if self.gamma2 <= 0:
            raise ConfigError(f"gamma2 must be > 0, got {self.gamma2}")
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError(f"d must be a positive integer, got {self.d}")
        if int(self.mc_samples) != self.mc_samples or self.mc_samples < 1:
            raise ConfigError(f"mc_samples must be a positive integer, got {self.mc_samples}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "mc_samples", int(self.mc_samples))

    @property
    def method(self) -> str:
        """Name of the scheme this configuration reduces to."""
        if self.alpha == 1 and self.beta2 == 0:
            return "IB"
        if self.alpha == 1 and self.beta1 == 0:
            return "CFB"
        return "RFIB"


@dataclass(frozen=True)
class LossBreakdown:
    """Batch-mean objective and its parts.

    ``utility_loglik`` and ``conditional_loglik`` are mean log-likelihoods
    (unweighted, <= 0), so ``total == compression - beta1*utility_loglik -
    beta2*conditional_loglik``.
    """

    total: float
    compression: float
    utility_loglik: float
    conditional_loglik: float


def bernoulli_loglik(y: np.ndarray, prob: np.ndarray) -> np.ndarray:
    """log b(y; p) with p clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(prob, PROB_CLIP, 1 - PROB_CLIP)
    return np.where(y == 1, np.log(p), np.log1p(-p))


def _mean_loglik(y, prob):
    # prob is (N,) or (K, N) for K Monte Carlo draws; average draws first
    ll = bernoulli_loglik(y, np.asarray(prob, dtype=np.float64))
    if ll.ndim == 2:
        ll = ll.mean(axis=0)
    return ll


def rfib_loss(enc, y, s, py_z, py_sz, cfg: RfibConfig) -> LossBreakdown:
    y = np.asarray(y)
    s = np.asarray(s)
    n = enc.mu.shape[0]
    for name, arr in (("y", y), ("s", s)):
        if arr.shape != (n,):
            raise LengthMismatch(f"{name} has shape {arr.shape}, expected ({n},)")
    for name, arr in (("py_z", py_z), ("py_sz", py_sz)):
        if np.shape(arr)[-1] != n:
            raise LengthMismatch(f"{name} has trailing length {np.shape(arr)[-1]}, expected {n}")

    compression = renyi_rows(enc.mu, enc.var, cfg.gamma2, cfg.alpha)
    ll_f = _mean_loglik(y, py_z)
    ll_g = _mean_loglik(y, py_sz)
    per_example = compression - cfg.beta1 * ll_f - cfg.beta2 * ll_g
    return LossBreakdown(
        total=float(per_example.mean()),
        compression=float(compression.mean()),
        utility_loglik=float(ll_f.mean()),
        conditional_loglik=float(ll_g.mean()),
    )


def ib_loss(enc, y, s, py_z, py_sz, cfg: RfibConfig) -> LossBreakdown:
    """Variational IB: alpha forced to 1, beta2 forced to 0."""
    return rfib_loss(enc, y, s, py_z, py_sz, replace(cfg, alpha=1.0, beta2=0.0))


def cfb_loss(enc, y, s, py_z, py_sz, cfg: RfibConfig) -> LossBreakdown:
    """Conditional fairness bottleneck: alpha forced to 1, beta1 forced to 0."""
    return rfib_loss(enc, y, s, py_z, py_sz, replace(cfg, alpha=1.0, beta1=0.0))

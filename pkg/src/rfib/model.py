"""Gaussian encoder, Bernoulli decoder heads and their exact gradients.

Architecture (fixed):

* encoder ``x -> 64 -> 64`` (tanh), then two linear maps to the mean and to a
  variance pre-activation, each of size ``d``.  Variance is
  ``softplus(pre)`` for ``alpha <= 1`` and ``sigmoid(pre)`` for ``alpha > 1``.
* head ``f``: ``z -> 100 -> 100 -> 1`` (tanh hidden, sigmoid output).
* head ``g``: same, on ``[z, s]``.

All parameters live in one flat float64 vector; :class:`ModelParams` exposes
named, reshaped views into it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .divergences import renyi_rows_grad
from .errors import NonFiniteActivation
from .loss import PROB_CLIP, LossBreakdown, RfibConfig, rfib_loss

ENCODER_HIDDEN = 64
HEAD_HIDDEN = 100


def param_layout(p: int, d: int) -> list[tuple[str, tuple[int, ...]]]:
    h, k = ENCODER_HIDDEN, HEAD_HIDDEN
    layout = [
        ("enc.W1", (p, h)), ("enc.b1", (h,)),
        ("enc.W2", (h, h)), ("enc.b2", (h,)),
        ("enc.W_mu", (h, d)), ("enc.b_mu", (d,)),
        ("enc.W_var", (h, d)), ("enc.b_var", (d,)),
    ]
    for head, fan_in in (("f", d), ("g", d + 1)):
        layout += [
            (f"{head}.W1", (fan_in, k)), (f"{head}.b1", (k,)),
            (f"{head}.W2", (k, k)), (f"{head}.b2", (k,)),
            (f"{head}.W3", (k, 1)), (f"{head}.b3", (1,)),
        ]
    return layout


class ModelParams:
    """Flat parameter vector with named slices.

    ``params["enc.W1"]`` is a writable view into ``params.flat``.
    """

    def __init__(self, p: int, d: int, flat: np.ndarray | None = None):
        self.p = int(p)
        self.d = int(d)
        self.slices: dict[str, tuple[int, tuple[int, ...]]] = {}
        self._bounds: dict[str, tuple[int, int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in param_layout(self.p, self.d):
            self.slices[name] = (offset, shape)
            end = offset + math.prod(shape)
            self._bounds[name] = (offset, end, shape)
            offset = end
        self.size = offset
        if flat is None:
            flat = np.zeros(offset)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (offset,):
            raise ValueError(f"flat vector has shape {flat.shape}, layout needs ({offset},)")
        self.flat = flat

    def __getitem__(self, name: str) -> np.ndarray:
        start, end, shape = self._bounds[name]
        return self.flat[start:end].reshape(shape)

    def copy(self) -> "ModelParams":
        return ModelParams(self.p, self.d, self.flat.copy())

    def with_flat(self, flat: np.ndarray) -> "ModelParams":
        return ModelParams(self.p, self.d, flat)

    @classmethod
    def initialize(cls, p: int, d: int, rng: np.random.Generator | int) -> "ModelParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
        rng = np.random.default_rng(rng)
        params = cls(p, d)
        fan_in = None
        for name, shape in param_layout(p, d):
            if len(shape) == 2:
                fan_in = shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            params[name][...] = rng.uniform(-bound, bound, size=shape)
        return params


class NoiseSource:
    """Seeded standard-normal stream for the reparameterisation noise."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.reset()

    def reset(self):
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self.counter = 0

    def draw(self, shape) -> np.ndarray:
        out = self._rng.standard_normal(shape)
        self.counter += out.size
        return out


@dataclass
class EncodedBatch:
    mu: np.ndarray
    sigma: np.ndarray
    z: np.ndarray
    noise: np.ndarray
    var: np.ndarray

    @cached_property
    def n(self) -> int:
        return self.mu.shape[0]


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteActivation(f"non-finite values in {name}")


def _encoder_hidden(params: ModelParams, x):
    h1 = np.tanh(x @ params["enc.W1"] + params["enc.b1"])
    h2 = np.tanh(h1 @ params["enc.W2"] + params["enc.b2"])
    return h1, h2


def _variance(pre, alpha):
    if alpha > 1:
        return _sigmoid(pre)
    return np.logaddexp(0.0, pre)


def embed_mean(params: ModelParams, x) -> np.ndarray:
    """Deterministic embedding: the encoder mean for each row of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    _, h2 = _encoder_hidden(params, x)
    mu = h2 @ params["enc.W_mu"] + params["enc.b_mu"]
    _check_finite("encoder mean", mu)
    return mu


def _draw_noise(noise, shape):
    if isinstance(noise, NoiseSource):
        return noise.draw(shape)
    eps = np.asarray(noise, dtype=np.float64)
    if eps.shape != shape:
        raise ValueError(f"noise has shape {eps.shape}, expected {shape}")
    return eps


def _encode(params, x, cfg, noise):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.p:
        raise ValueError(f"x must be (N, {params.p}), got {x.shape}")
    if cfg.d != params.d:
        raise ValueError(f"config d={cfg.d} but params built for d={params.d}")
    _check_finite("input", x)
    h1, h2 = _encoder_hidden(params, x)
    mu = h2 @ params["enc.W_mu"] + params["enc.b_mu"]
    pre = h2 @ params["enc.W_var"] + params["enc.b_var"]
    var = _variance(pre, cfg.alpha)
    sigma = np.sqrt(var)
    n = x.shape[0]
    shape = (n, cfg.d) if cfg.mc_samples == 1 else (cfg.mc_samples, n, cfg.d)
    eps = _draw_noise(noise, shape)
    z = mu + sigma * eps
    _check_finite("encoder", mu, var, z)
    if np.any(var <= 0):
        raise NonFiniteActivation("encoder variance underflowed to zero")
    enc = EncodedBatch(mu=mu, sigma=sigma, z=z, noise=eps, var=var)
    return enc, (x, h1, h2, pre)


def encode(params: ModelParams, x, cfg: RfibConfig, noise) -> EncodedBatch:
    """Encoder forward pass plus one reparameterised draw per example.

    ``noise`` is a :class:`NoiseSource` or an explicit array of standard
    normal draws shaped like ``z``.
    """
    return _encode(params, x, cfg, noise)[0]


def _head_forward(params, head, inp):
    a1 = np.tanh(inp @ params[f"{head}.W1"] + params[f"{head}.b1"])
    a2 = np.tanh(a1 @ params[f"{head}.W2"] + params[f"{head}.b2"])
    logit = (a2 @ params[f"{head}.W3"] + params[f"{head}.b3"])[..., 0]
    prob = _sigmoid(logit)
    _check_finite(f"head {head}", prob)
    return prob, (inp, a1, a2)


def _with_s(z, s):
    s_col = np.broadcast_to(np.asarray(s, dtype=np.float64)[:, None], z.shape[:-1] + (1,))
    return np.concatenate([z, s_col], axis=-1)


def decode_y(params: ModelParams, z) -> np.ndarray:
    """P(Y=1 | Z) from head f."""
    return _head_forward(params, "f", np.asarray(z, dtype=np.float64))[0]


def decode_ys(params: ModelParams, z, s) -> np.ndarray:
    """P(Y=1 | Z, S) from head g; ``s`` enters as one extra input column."""
    return _head_forward(params, "g", _with_s(np.asarray(z, dtype=np.float64), s))[0]


def _head_backward(params, head, cache, dlogit, grad):
    inp, a1, a2 = cache
    width = inp.shape[-1]
    inp = inp.reshape(-1, width)
    a1 = a1.reshape(-1, HEAD_HIDDEN)
    a2 = a2.reshape(-1, HEAD_HIDDEN)
    dlogit = dlogit.reshape(-1, 1)

    grad[f"{head}.W3"][...] = a2.T @ dlogit
    grad[f"{head}.b3"][...] = dlogit.sum(axis=0)
    da2 = (dlogit @ params[f"{head}.W3"].T) * (1 - a2**2)
    grad[f"{head}.W2"][...] = a1.T @ da2
    grad[f"{head}.b2"][...] = da2.sum(axis=0)
    da1 = (da2 @ params[f"{head}.W2"].T) * (1 - a1**2)
    grad[f"{head}.W1"][...] = inp.T @ da1
    grad[f"{head}.b1"][...] = da1.sum(axis=0)
    return da1 @ params[f"{head}.W1"].T


def _dnll_dlogit(y, prob):
    # d(-log b(y; clip(p)))/d logit; zero where the clamp is active
    inside = (prob > PROB_CLIP) & (prob < 1 - PROB_CLIP)
    return np.where(inside, prob - y, 0.0)


def value_and_grad(params: ModelParams, batch, cfg: RfibConfig, noise):
    """Objective breakdown and its gradient w.r.t. ``params.flat``.

    ``batch`` is ``(x, y, s)``.
    """
    x, y, s = batch
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    enc, (x, h1, h2, pre) = _encode(params, x, cfg, noise)
    py_z, cache_f = _head_forward(params, "f", enc.z)
    py_sz, cache_g = _head_forward(params, "g", _with_s(enc.z, s))
    loss = rfib_loss(enc, y, s, py_z, py_sz, cfg)

    n = enc.n
    k = cfg.mc_samples
    grad = params.with_flat(np.zeros(params.size))

    scale = 1.0 / (n * k)
    dz = np.zeros_like(enc.z)
    if cfg.beta1 != 0:
        dlogit_f = cfg.beta1 * scale * _dnll_dlogit(y, py_z)
        dz += _head_backward(params, "f", cache_f, dlogit_f, grad).reshape(enc.z.shape)
    if cfg.beta2 != 0:
        dlogit_g = cfg.beta2 * scale * _dnll_dlogit(y, py_sz)
        dzs = _head_backward(params, "g", cache_g, dlogit_g, grad).reshape(enc.z.shape[:-1] + (cfg.d + 1,))
        dz += dzs[..., :cfg.d]

    dD_dmu, dD_dvar = renyi_rows_grad(enc.mu, enc.var, cfg.gamma2, cfg.alpha)
    if k == 1:
        dmu = dz + dD_dmu / n
        dsigma = dz * enc.noise
    else:
        dmu = dz.sum(axis=0) + dD_dmu / n
        dsigma = (dz * enc.noise).sum(axis=0)
    dvar = dsigma / (2 * enc.sigma) + dD_dvar / n
    if cfg.alpha > 1:
        dpre = dvar * enc.var * (1 - enc.var)
    else:
        dpre = dvar * _sigmoid(pre)

    grad["enc.W_mu"][...] = h2.T @ dmu
    grad["enc.b_mu"][...] = dmu.sum(axis=0)
    grad["enc.W_var"][...] = h2.T @ dpre
    grad["enc.b_var"][...] = dpre.sum(axis=0)
    dh2 = (dmu @ params["enc.W_mu"].T + dpre @ params["enc.W_var"].T) * (1 - h2**2)
    grad["enc.W2"][...] = h1.T @ dh2
    grad["enc.b2"][...] = dh2.sum(axis=0)
    dh1 = (dh2 @ params["enc.W2"].T) * (1 - h1**2)
    grad["enc.W1"][...] = x.T @ dh1
    grad["enc.b1"][...] = dh1.sum(axis=0)
    return loss, grad.flat


def loss_value(params: ModelParams, batch, cfg: RfibConfig, noise) -> LossBreakdown:
    x, y, s = batch
    enc = encode(params, x, cfg, noise)
    py_z = decode_y(params, enc.z)
    py_sz = decode_ys(params, enc.z, s)
    return rfib_loss(enc, np.asarray(y), np.asarray(s), py_z, py_sz, cfg)


def backward(params: ModelParams, batch, cfg: RfibConfig, noise):
    """Return ``(J_RFIB, dJ/dtheta)`` for one batch."""
    loss, grad = value_and_grad(params, batch, cfg, noise)
    return loss.total, grad

"""Gaussian policy over log-multipliers: GRU encoder, residual heads, manual backprop, Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_SIGMA_MIN = -5.0
LOG_SIGMA_MAX = 1.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
STATE_DIM = 2

GRU_PARAMS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")
LINEAR_PARAMS = ("W", "b")
HEAD_PARAMS = ("mu_head", "log_sigma_head", "mu_base", "log_sigma_base")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# recurrent encoder


def gru_step(x: np.ndarray, h: np.ndarray, p: dict) -> np.ndarray:
    return _gru_forward(x, h, p)[0]


def _gru_forward(x, h, p):
    z = sigmoid(p["Wz"] @ x + p["Uz"] @ h + p["bz"])
    r = sigmoid(p["Wr"] @ x + p["Ur"] @ h + p["br"])
    cand = np.tanh(p["Wh"] @ x + p["Uh"] @ (r * h) + p["bh"])
    h_new = (1.0 - z) * h + z * cand
    return h_new, (x, h, z, r, cand)


def gru_backward(cache, dh_new: np.ndarray, p: dict) -> tuple[dict, np.ndarray]:
    """Gradients of a scalar w.r.t. GRU weights and the previous hidden state."""
    x, h, z, r, cand = cache
    dz = dh_new * (cand - h)
    da_h = dh_new * z * (1.0 - cand**2)
    drh = p["Uh"].T @ da_h
    dr = drh * h
    da_z = dz * z * (1.0 - z)
    da_r = dr * r * (1.0 - r)
    grads = {
        "Wz": np.outer(da_z, x),
        "Uz": np.outer(da_z, h),
        "bz": da_z,
        "Wr": np.outer(da_r, x),
        "Ur": np.outer(da_r, h),
        "br": da_r,
        "Wh": np.outer(da_h, x),
        "Uh": np.outer(da_h, r * h),
        "bh": da_h,
    }
    dh = dh_new * (1.0 - z) + drh * r + p["Uz"].T @ da_z + p["Ur"].T @ da_r
    return grads, dh


def _linear_forward(x, h, p):
    out = np.tanh(p["W"] @ x + p["b"])
    return out, (x, out)


def _linear_backward(cache, dout, p):
    x, out = cache
    da = dout * (1.0 - out**2)
    return {"W": np.outer(da, x), "b": da}, np.zeros(p["W"].shape[0])


# ---------------------------------------------------------------------------
# Gaussian action head


@dataclass
class ActionSample:
    z: np.ndarray
    multipliers: np.ndarray
    log_prob: float
    entropy: float


def gaussian_log_prob(z, mu, log_sigma) -> float:
    z, mu, log_sigma = (np.asarray(a, dtype=np.float64) for a in (z, mu, log_sigma))
    return float(np.sum(-log_sigma - HALF_LOG_2PI - (z - mu) ** 2 / (2.0 * np.exp(2.0 * log_sigma))))


def gaussian_entropy(log_sigma) -> float:
    log_sigma = np.asarray(log_sigma, dtype=np.float64)
    return float(np.sum(0.5 + HALF_LOG_2PI + log_sigma))


def sample_action(mu, log_sigma, rng: np.random.Generator, z: np.ndarray | None = None) -> ActionSample:
    """Draw ``z ~ N(mu, exp(log_sigma)^2)``; pass ``z`` to score a fixed action instead."""
    mu = np.asarray(mu, dtype=np.float64)
    log_sigma = np.asarray(log_sigma, dtype=np.float64)
    if z is None:
        z = mu + np.exp(log_sigma) * rng.standard_normal(mu.shape)
    z = np.asarray(z, dtype=np.float64)
    return ActionSample(z, np.exp(z), gaussian_log_prob(z, mu, log_sigma), gaussian_entropy(log_sigma))


@dataclass
class PolicyRecord:
    """One scored action: what the policy saw, what it drew, how it did."""

    state: np.ndarray
    hidden: np.ndarray
    z: np.ndarray
    reward: float


def standardize(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if len(r) <= 1:
        return r.copy()
    centered = r - r.mean()
    std = r.std()
    return centered / std if std > 0 else np.zeros_like(r)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place to at most ``max_norm``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class PolicyNet:
    """Diagonal-Gaussian policy ``N(mu, sigma^2)`` over ``dim`` log-multipliers.

    ``mu = mu_base + mu_head @ h`` and ``log_sigma = clip(log_sigma_base + log_sigma_head @ h)``
    where ``h`` is the encoder output.  The hidden state persists across calls
    to :meth:`forward` until :meth:`reset`.
    """

    def __init__(
        self,
        dim: int,
        hidden: int = 32,
        encoder: str = "gru",
        mu_base: float = 0.0,
        log_sigma_base: float = math.log(0.2),
        lr: float = 1e-4,
        max_grad_norm: float = 2.4,
        rng: np.random.Generator | None = None,
    ):
        if encoder not in ("gru", "linear"):
            raise ValueError(f"unknown encoder {encoder!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim, self.hidden_size, self.encoder = dim, hidden, encoder
        self.lr, self.max_grad_norm = lr, max_grad_norm
        bound = 1.0 / math.sqrt(hidden)
        p = {}
        if encoder == "gru":
            for gate in "zrh":
                p[f"W{gate}"] = rng.uniform(-bound, bound, (hidden, STATE_DIM))
                p[f"U{gate}"] = rng.uniform(-bound, bound, (hidden, hidden))
                p[f"b{gate}"] = rng.uniform(-bound, bound, hidden)
        else:
            p["W"] = rng.uniform(-bound, bound, (hidden, STATE_DIM))
            p["b"] = rng.uniform(-bound, bound, hidden)
        # zero heads: the untrained policy is centered exactly on its bases
        p["mu_head"] = np.zeros((dim, hidden))
        p["log_sigma_head"] = np.zeros((dim, hidden))
        p["mu_base"] = np.full(dim, float(mu_base))
        p["log_sigma_base"] = np.full(dim, float(log_sigma_base))
        self.params = p
        self.h = np.zeros(hidden)
        self._m = {k: np.zeros_like(v) for k, v in p.items()}
        self._v = {k: np.zeros_like(v) for k, v in p.items()}
        self._step = 0

    def reset(self) -> None:
        self.h = np.zeros(self.hidden_size)

    def _encode(self, x, h, p):
        return _gru_forward(x, h, p) if self.encoder == "gru" else _linear_forward(x, h, p)

    def _heads(self, enc, p):
        mu = p["mu_base"] + p["mu_head"] @ enc
        raw = p["log_sigma_base"] + p["log_sigma_head"] @ enc
        return mu, np.clip(raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX), raw

    def distribution(self, state, hidden, params=None):
        """Pure forward: ``(mu, log_sigma, new_hidden)`` for an explicit hidden state."""
        p = self.params if params is None else params
        enc, _ = self._encode(np.asarray(state, dtype=np.float64), hidden, p)
        mu, log_sigma, _ = self._heads(enc, p)
        return mu, log_sigma, enc

    def forward(self, state) -> tuple[np.ndarray, np.ndarray]:
        """Advance the persistent hidden state on ``state`` and return ``(mu, log_sigma)``."""
        mu, log_sigma, self.h = self.distribution(state, self.h)
        return mu, log_sigma

    def objective(self, records, beta: float, params=None) -> float:
        p = self.params if params is None else params
        adv = standardize([r.reward for r in records])
        total = 0.0
        for a, rec in zip(adv, records):
            mu, log_sigma, _ = self.distribution(rec.state, rec.hidden, p)
            total += -a * gaussian_log_prob(rec.z, mu, log_sigma) - beta * gaussian_entropy(log_sigma)
        return total

    def objective_grad(self, records, beta: float) -> tuple[float, dict]:
        """Objective value and its exact gradient (before clipping)."""
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        adv = standardize([r.reward for r in records])
        total = 0.0
        for a, rec in zip(adv, records):
            x = np.asarray(rec.state, dtype=np.float64)
            enc, cache = self._encode(x, rec.hidden, p)
            mu, log_sigma, raw = self._heads(enc, p)
            var = np.exp(2.0 * log_sigma)
            diff = rec.z - mu
            total += -a * gaussian_log_prob(rec.z, mu, log_sigma) - beta * gaussian_entropy(log_sigma)
            d_mu = -a * diff / var
            d_ls = -a * (diff**2 / var - 1.0) - beta
            d_ls = np.where((raw > LOG_SIGMA_MIN) & (raw < LOG_SIGMA_MAX), d_ls, 0.0)
            grads["mu_base"] += d_mu
            grads["log_sigma_base"] += d_ls
            grads["mu_head"] += np.outer(d_mu, enc)
            grads["log_sigma_head"] += np.outer(d_ls, enc)
            d_enc = p["mu_head"].T @ d_mu + p["log_sigma_head"].T @ d_ls
            if self.encoder == "gru":
                enc_grads, _ = gru_backward(cache, d_enc, p)
            else:
                enc_grads, _ = _linear_backward(cache, d_enc, p)
            for k, g in enc_grads.items():
                grads[k] += g
        return total, grads

    def update(self, records, beta: float) -> dict:
        """One clipped Adam step on the entropy-regularized score-function objective."""
        records = [r for r in records if np.isfinite(r.reward)]
        if not records:
            return {"objective": float("nan"), "grad_norm": 0.0}
        value, grads = self.objective_grad(records, beta)
        norm = clip_global_norm(grads, self.max_grad_norm)
        self._step += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for k, g in grads.items():
            self._m[k] = b1 * self._m[k] + (1 - b1) * g
            self._v[k] = b2 * self._v[k] + (1 - b2) * g * g
            m_hat = self._m[k] / (1 - b1**self._step)
            v_hat = self._v[k] / (1 - b2**self._step)
            self.params[k] = self.params[k] - self.lr * m_hat / (np.sqrt(v_hat) + eps)
        return {"objective": value, "grad_norm": norm}

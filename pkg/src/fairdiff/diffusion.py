"""Noise schedules, forward corruption, analytic posteriors, and losses.

Numerical blocks use the Gaussian kernel (noise-prediction form); categorical
blocks use the multinomial kernel over one-hot/simplex vectors. Both share a
single beta schedule. Functions accept one row (d,) or a batch (n, d); the
timestep may be a scalar or one integer per row.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_simplex, check_timestep

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 0.02
COSINE_OFFSET = 0.008
COSINE_BETA_MAX = 0.999
_LOG_EPS = 1e-30


class NoiseSchedule:
    """Per-step betas with the derived alpha products, 1-indexed by timestep.

    Index 0 is a sentinel (beta=0, alpha_bar=1) so that the posterior
    variance at t=1 is exactly zero.
    """

    def __init__(self, betas, kind="custom"):
        betas = np.asarray(betas, dtype=float).ravel()
        if betas.size < 1:
            raise ValueError("schedule needs at least one step")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie strictly inside (0, 1)")
        self.kind = kind
        self.T = int(betas.size)
        self.beta = np.concatenate([[0.0], betas])
        self.alpha = 1.0 - self.beta
        self.alpha_bar = np.cumprod(self.alpha)
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")
        self.sqrt_alpha_bar = np.sqrt(self.alpha_bar)
        self.sqrt_one_minus_alpha_bar = np.sqrt(1.0 - self.alpha_bar)
        # beta_tilde[t] = (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]) * beta[t]
        self.beta_tilde = np.zeros_like(self.beta)
        self.beta_tilde[1:] = (
            (1.0 - self.alpha_bar[:-1]) / (1.0 - self.alpha_bar[1:]) * self.beta[1:]
        )

    def to_dict(self):
        return {"kind": self.kind, "T": self.T, "betas": self.beta[1:].tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["betas"], kind=d["kind"])


def make_schedule(kind, T):
    """Standard DDPM constants: linear 1e-4..0.02, cosine offset 0.008."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if kind == "linear":
        return NoiseSchedule(np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, T), kind)
    if kind == "cosine":
        steps = np.arange(T + 1, dtype=float)
        f = np.cos((steps / T + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * math.pi / 2.0) ** 2
        alpha_bar = f / f[0]
        betas = 1.0 - alpha_bar[1:] / alpha_bar[:-1]
        return NoiseSchedule(np.minimum(betas, COSINE_BETA_MAX), kind)
    raise ValueError(f"unknown schedule kind {kind!r}")


def _coef(values, t, x):
    """Gather a per-timestep coefficient shaped to broadcast against x."""
    c = values[t]
    if np.ndim(c) and np.ndim(x) > 1:
        return c[:, None]
    return c


@dataclass
class GaussianPosterior:
    mean: np.ndarray
    variance: np.ndarray  # isotropic, scalar or one value per row


def gaussian_forward_sample(x0, t, noise, sched):
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise."""
    check_timestep(t, sched.T)
    x0 = np.asarray(x0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    return (
        _coef(sched.sqrt_alpha_bar, t, x0) * x0
        + _coef(sched.sqrt_one_minus_alpha_bar, t, x0) * noise
    )


def gaussian_posterior_mean(x_t, eps, t, sched):
    """Posterior mean (1/sqrt(alpha_t))(x_t - beta_t/sqrt(1-alpha_bar_t) eps)
    with the fixed variance beta_tilde_t."""
    check_timestep(t, sched.T)
    x_t = np.asarray(x_t, dtype=float)
    eps = np.asarray(eps, dtype=float)
    scale = _coef(sched.beta, t, x_t) / _coef(sched.sqrt_one_minus_alpha_bar, t, x_t)
    mean = (x_t - scale * eps) / np.sqrt(_coef(sched.alpha, t, x_t))
    return GaussianPosterior(mean=mean, variance=np.asarray(sched.beta_tilde[t]))


def gaussian_estimated_mean(x_t, eps_hat, t, sched):
    """Same formula with the predicted noise substituted for the true one."""
    return gaussian_posterior_mean(x_t, eps_hat, t, sched)


def gaussian_reverse_step(x_t, eps_hat, t, sched, noise):
    """One ancestral step: posterior mean plus sqrt(beta_tilde_t) noise.

    beta_tilde_1 = 0, so the final step is deterministic regardless of noise.
    """
    post = gaussian_estimated_mean(x_t, eps_hat, t, sched)
    std = np.sqrt(_coef(sched.beta_tilde, t, post.mean))
    return post.mean + std * np.asarray(noise, dtype=float)


def gaussian_loss(eps, eps_hat):
    """Mean squared error over all elements."""
    eps = np.asarray(eps, dtype=float)
    eps_hat = np.asarray(eps_hat, dtype=float)
    if eps.shape != eps_hat.shape:
        raise ValueError("noise arrays must share a shape")
    if eps.size == 0:
        return 0.0
    return float(np.mean((eps - eps_hat) ** 2))


def multinomial_forward(x_prev, t, sched):
    """One-step category mixing: (1 - beta_t) x_{t-1} + beta_t / K."""
    check_timestep(t, sched.T)
    x_prev = check_simplex(np.asarray(x_prev, dtype=float), "x_prev")
    K = x_prev.shape[-1]
    beta = _coef(sched.beta, t, x_prev)
    return (1.0 - beta) * x_prev + beta / K


def multinomial_marginal(x0, t, sched):
    """t-step marginal: alpha_bar_t x0 + (1 - alpha_bar_t) / K."""
    check_timestep(t, sched.T)
    x0 = np.asarray(x0, dtype=float)
    K = x0.shape[-1]
    ab = _coef(sched.alpha_bar, t, x0)
    return ab * x0 + (1.0 - ab) / K


def multinomial_posterior(x_t, x0, t, sched):
    """theta = [alpha_t x_t + (1-alpha_t)/K] * [alpha_bar_{t-1} x0 +
    (1-alpha_bar_{t-1})/K], normalized."""
    check_timestep(t, sched.T)
    x_t = np.asarray(x_t, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    K = x_t.shape[-1]
    alpha = _coef(sched.alpha, t, x_t)
    ab_prev = _coef(sched.alpha_bar, np.asarray(t) - 1, x_t)
    theta = (alpha * x_t + (1.0 - alpha) / K) * (ab_prev * x0 + (1.0 - ab_prev) / K)
    total = theta.sum(axis=-1, keepdims=True)
    if np.any(total <= 0.0):
        raise ValueError("degenerate posterior: all-zero unnormalized weights")
    return theta / total


def categorical_from_uniform(probs, u):
    """Inverse-CDF categorical draw from given uniforms, returned one-hot."""
    p = np.atleast_2d(np.asarray(probs, dtype=float))
    cum = np.cumsum(p, axis=1)
    u = np.asarray(u, dtype=float).reshape(p.shape[0]) * cum[:, -1]
    idx = np.minimum((u[:, None] >= cum).sum(axis=1), p.shape[1] - 1)
    out = np.zeros_like(p)
    out[np.arange(p.shape[0]), idx] = 1.0
    return out


def sample_categorical(probs, rng):
    """Inverse-CDF draw per row, returned one-hot."""
    probs = np.asarray(probs, dtype=float)
    squeeze = probs.ndim == 1
    p = np.atleast_2d(probs)
    out = categorical_from_uniform(p, rng.random(p.shape[0]))
    return out[0] if squeeze else out


def categorical_kl(q, p):
    """KL(q || p) per row; 0 log 0 treated as 0."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    terms = np.where(q > 0.0, q * (np.log(q + _LOG_EPS) - np.log(p + _LOG_EPS)), 0.0)
    return terms.sum(axis=-1)


def multinomial_step_loss(x_t, x0, x0_hat, t, sched):
    """KL(q(x_{t-1}|x_t,x0) || q(x_{t-1}|x_t,x0_hat)) for t >= 2;
    -log p(x0|x1) at t = 1. Returns the batch mean."""
    x0_hat = check_simplex(np.asarray(x0_hat, dtype=float), "x0_hat")
    x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    x0_hat = np.atleast_2d(x0_hat)
    t_arr = np.broadcast_to(np.asarray(t, dtype=int), (x_t.shape[0],))
    check_timestep(t_arr, sched.T)
    p = multinomial_posterior(x_t, x0_hat, t_arr, sched)
    losses = np.empty(x_t.shape[0])
    later = t_arr >= 2
    if np.any(later):
        q = multinomial_posterior(x_t[later], x0[later], t_arr[later], sched)
        losses[later] = categorical_kl(q, p[later])
    first = ~later
    if np.any(first):
        # x0 is one-hot at t=1: pick out the true category's probability
        picked = (p[first] * x0[first]).sum(axis=-1)
        losses[first] = -np.log(picked + _LOG_EPS)
    return float(losses.mean())


def total_loss(gaussian, categorical_losses):
    """L = L_G + mean of the per-column categorical losses (0 if none)."""
    cats = np.asarray(categorical_losses, dtype=float).ravel()
    if cats.size == 0:
        return float(gaussian)
    return float(gaussian + cats.sum() / cats.size)


def gaussian_prior_kl(x0, sched):
    """Per-dimension KL between q(x_T|x0) and the standard normal prior."""
    x0 = np.asarray(x0, dtype=float)
    ab = sched.alpha_bar[sched.T]
    return 0.5 * (ab * x0**2 - ab - np.log1p(-ab))


def multinomial_prior_kl(x0, sched):
    """Per-row KL between q(x_T|x0) and the uniform categorical prior."""
    x0 = np.asarray(x0, dtype=float)
    K = x0.shape[-1]
    q = multinomial_marginal(x0, sched.T, sched)
    return categorical_kl(q, np.full_like(q, 1.0 / K))

"""Reverse-process sampling with multivariate classifier-free guidance.

At every step the model is queried unconditionally, with the label alone,
and with each sensitive attribute alone. The label difference and the
gated, momentum-smoothed sensitive differences are combined into one guided
estimate that drives both the numeric and the categorical updates. Rows are
independent: each draws from its own seeded stream, so reordering the
condition list only reorders the output. Chunked evaluation agrees with a
single pass up to floating-point roundoff (matrix kernels may reassociate).
"""

from dataclasses import dataclass

import numpy as np

from . import diffusion
from ._validation import check_same_width
from .denoiser import ConditionSpec, LatentCodec, conditions_to_arrays, softmax
from .preprocessing import EncodedBatch

SAMPLE_CHUNK = 4096


@dataclass(frozen=True)
class GuidanceConfig:
    """Weights for the guided reverse process.

    w_g scales the whole guidance term, w_s the gate amplification, lam is
    the gate cut-off on the label/sensitive estimate difference, delta the
    warm-up timestep below which sensitive guidance stays off, w_m the
    momentum contribution, and beta_m the momentum smoothing factor.
    """

    w_g: float = 1.0
    w_s: float = 1.0
    lam: float = 1.0
    delta: int = 0
    w_m: float = 0.5
    beta_m: float = 0.5

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if not 0.0 <= self.beta_m <= 1.0:
            raise ValueError("beta_m must lie in [0, 1]")

    def to_dict(self):
        return {
            "w_g": self.w_g,
            "w_s": self.w_s,
            "lam": self.lam,
            "delta": self.delta,
            "w_m": self.w_m,
            "beta_m": self.beta_m,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class MomentumState:
    """Per-attribute smoothed guidance terms, zero at the first step."""

    def __init__(self, n_attributes, shape):
        self.nu = [np.zeros(shape) for _ in range(n_attributes)]


def label_guidance(est_uncond, est_label):
    """Difference between the label-conditioned and unconditional estimates."""
    est_uncond, est_label = check_same_width(
        est_uncond, est_label, "est_uncond", "est_label"
    )
    return est_label - est_uncond


def security_gate(est_label, est_sensitive, w_s, lam):
    """Elementwise gate: 0 where the estimates disagree by lam or more,
    else max(1, w_s * |difference|)."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    est_label, est_sensitive = check_same_width(
        est_label, est_sensitive, "est_label", "est_sensitive"
    )
    d = np.abs(est_label - est_sensitive)
    return np.where(d < lam, np.maximum(1.0, w_s * d), 0.0)


def sensitive_guidance_step(est_uncond, est_label, est_sensitive, cfg, nu, t):
    """One attribute's gated, momentum-smoothed guidance term.

    Returns (gamma_t, nu_next); during warm-up (t < delta) the term is zero
    and the momentum state is left untouched.
    """
    est_uncond, est_sensitive = check_same_width(
        est_uncond, est_sensitive, "est_uncond", "est_sensitive"
    )
    nu = np.asarray(nu, dtype=float)
    if t < cfg.delta:
        return np.zeros_like(est_uncond), nu
    mu = security_gate(est_label, est_sensitive, cfg.w_s, cfg.lam)
    gamma = mu * (est_sensitive - est_uncond) + cfg.w_m * nu
    nu_next = cfg.beta_m * nu + (1.0 - cfg.beta_m) * gamma
    return gamma, nu_next


def multi_attribute_guidance(est_uncond, est_label, est_sensitives, cfg, state, t):
    """Sum of per-attribute guidance terms; mutates the momentum state."""
    total = np.zeros_like(np.asarray(est_uncond, dtype=float))
    for i, est_s in enumerate(est_sensitives):
        gamma, state.nu[i] = sensitive_guidance_step(
            est_uncond, est_label, est_s, cfg, state.nu[i], t
        )
        total += gamma
    return total


def guided_estimate(est_uncond, gamma_label, gamma_sensitive, w_g):
    """est + w_g * (label term + sensitive term); used for noise estimates
    and for category logits alike."""
    est_uncond = np.asarray(est_uncond, dtype=float)
    return est_uncond + w_g * (gamma_label + gamma_sensitive)


def _row_stream(seed, spec, occurrence):
    return np.random.default_rng(
        np.random.SeedSequence((int(seed),) + spec.codes() + (int(occurrence),))
    )


def _predraw(conditions, seed, num_width, n_blocks, T):
    """Every random number a row will consume, drawn from its own stream.

    Streams are keyed by (seed, condition codes, occurrence among equal
    conditions), so permuting the condition list permutes rows and nothing
    else. Per row the order is: initial numeric noise, initial category
    uniforms, step noise for t = T..2, step uniforms for t = T..1.
    """
    n = len(conditions)
    init_num = np.empty((n, num_width))
    init_u = np.empty((n, n_blocks))
    step_noise = np.empty((n, max(T - 1, 0), num_width))
    step_u = np.empty((n, T, n_blocks))
    counts = {}
    for i, spec in enumerate(conditions):
        key = spec.codes()
        occ = counts.get(key, 0)
        counts[key] = occ + 1
        gen = _row_stream(seed, spec, occ)
        init_num[i] = gen.standard_normal(num_width)
        init_u[i] = gen.random(n_blocks)
        step_noise[i] = gen.standard_normal((max(T - 1, 0), num_width))
        step_u[i] = gen.random((T, n_blocks))
    return init_num, init_u, step_noise, step_u


def _query(model, codec, x_num, blocks, t, label_idx, sens_idx):
    flat = np.concatenate([x_num] + blocks, axis=1)
    out, _ = model._forward_arrays(
        codec.encode_array(flat),
        np.full(flat.shape[0], t, dtype=int),
        label_idx,
        sens_idx,
    )
    return out


def _split(flat, num_width, cards):
    blocks = []
    off = num_width
    for k in cards:
        blocks.append(flat[:, off : off + k])
        off += k
    return flat[:, :num_width], blocks


def _reverse_chunk(conds, model, sched, cfg, codec, draws, sensitive_on):
    init_num, init_u, step_noise, step_u = draws
    n = init_num.shape[0]
    num_width, cards = model.num_width, model.cardinalities
    n_attrs = len(model.slot_cards) - 1
    label_idx, sens_idx = conditions_to_arrays(conds, n_attrs)
    absent = np.full(n, -1, dtype=int)
    absent_s = np.full((n, n_attrs), -1, dtype=int)

    x_num = init_num.copy()
    blocks = [
        diffusion.categorical_from_uniform(np.full((n, k), 1.0 / k), init_u[:, b])
        for b, k in enumerate(cards)
    ]
    state = MomentumState(n_attrs, (n, model.d_out))
    for step, t in enumerate(range(sched.T, 0, -1)):
        est_u = _query(model, codec, x_num, blocks, t, absent, absent_s)
        est_c = _query(model, codec, x_num, blocks, t, label_idx, absent_s)
        gamma_c = label_guidance(est_u, est_c)
        if sensitive_on and n_attrs:
            est_s = []
            for j in range(n_attrs):
                only_j = absent_s.copy()
                only_j[:, j] = sens_idx[:, j]
                est_s.append(
                    _query(model, codec, x_num, blocks, t, absent, only_j)
                )
            gamma_s = multi_attribute_guidance(est_u, est_c, est_s, cfg, state, t)
            combined = gamma_c if not gamma_s.any() else gamma_c + gamma_s
        else:
            combined = gamma_c
        guided = est_u + cfg.w_g * combined
        eps_bar, logit_blocks = _split(guided, num_width, cards)
        if num_width:
            noise = step_noise[:, step] if t > 1 else np.zeros_like(x_num)
            x_num = diffusion.gaussian_reverse_step(x_num, eps_bar, t, sched, noise)
        for b in range(len(cards)):
            x0_hat = softmax(logit_blocks[b])
            probs = diffusion.multinomial_posterior(blocks[b], x0_hat, t, sched)
            blocks[b] = diffusion.categorical_from_uniform(probs, step_u[:, step, b])
    return x_num, blocks


def _run_sampler(n, conditions, model, sched, cfg, seed, codec, sensitive_on):
    if len(conditions) != n:
        raise ValueError(f"need {n} conditions, got {len(conditions)}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    if codec is None:
        codec = LatentCodec.identity(model.num_width, model.cardinalities)
    num_width, cards = model.num_width, model.cardinalities
    draws = _predraw(conditions, seed, num_width, len(cards), sched.T)
    nums, block_parts = [], [[] for _ in cards]
    for start in range(0, n, SAMPLE_CHUNK):
        stop = min(start + SAMPLE_CHUNK, n)
        chunk_draws = tuple(d[start:stop] for d in draws)
        x_num, blocks = _reverse_chunk(
            conditions[start:stop], model, sched, cfg, codec, chunk_draws,
            sensitive_on,
        )
        nums.append(x_num)
        for b, block in enumerate(blocks):
            block_parts[b].append(block)
    x_num = np.concatenate(nums) if nums else np.empty((0, num_width))
    blocks = [
        np.concatenate(parts) if parts else np.empty((0, k))
        for parts, k in zip(block_parts, cards)
    ]
    batch = EncodedBatch(numeric=x_num, categorical=blocks)
    return codec.decode_latent(codec.encode_latent(batch))


def reverse_sample(n, conditions, model, sched, cfg, seed, codec=None):
    """Draw n rows under full label-plus-sensitive guidance.

    Conditions are per row; numeric blocks start from standard normal
    noise and categorical blocks from the uniform prior. Momentum resets
    per row and follows the execution order of the reverse loop.
    """
    return _run_sampler(n, conditions, model, sched, cfg, seed, codec, True)


def reverse_sample_label_only(n, conditions, model, sched, cfg, seed, codec=None):
    """Plain classifier-free sampler: label guidance only.

    Consumes the same per-row streams as reverse_sample, so runs in which
    the sensitive term vanishes are bit-identical to this path.
    """
    return _run_sampler(n, conditions, model, sched, cfg, seed, codec, False)

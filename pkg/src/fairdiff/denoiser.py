"""Trainable posterior estimator for the mixed-type reverse process.

A residual feed-forward network maps (latent state, timestep, conditions) to
the predicted numeric noise and per-column category logits. Gradients are
hand-written reverse passes so they can be audited against finite
differences. Conditions are embedded as a learned null base plus a zero-
initialized per-value delta, which makes the unconditional path exact.
"""

import base64
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffusion
from ._validation import check_fitted
from .preprocessing import EncodedBatch

LR_MIN = 1e-5
LR_MAX = 3e-3
CHECKPOINT_MAGIC = "fair-tab-diffusion-checkpoint"
CHECKPOINT_VERSION = 1

ABSENT = None


@dataclass(frozen=True)
class DenoiserConfig:
    hidden: int = 64
    depth: int = 2
    t_embed_dim: int = 16
    cond_embed_dim: int = 8
    p_uncond: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("hidden", "depth", "t_embed_dim", "cond_embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ValueError("p_uncond must lie in [0, 1]")
        if not LR_MIN <= self.learning_rate <= LR_MAX:
            raise ValueError(
                f"learning_rate must lie in [{LR_MIN}, {LR_MAX}]"
            )
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    def to_dict(self):
        return {
            "hidden": self.hidden,
            "depth": self.depth,
            "t_embed_dim": self.t_embed_dim,
            "cond_embed_dim": self.cond_embed_dim,
            "p_uncond": self.p_uncond,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ConditionSpec:
    """Label and per-attribute sensitive values; None marks ABSENT."""

    label: object = ABSENT
    sensitive: tuple = ()

    def codes(self):
        """Non-negative integer codes (0 = absent) for RNG keying."""
        lab = 0 if self.label is ABSENT else int(self.label) + 1
        sens = tuple(0 if s is ABSENT else int(s) + 1 for s in self.sensitive)
        return (lab,) + sens

    def label_only(self):
        return ConditionSpec(self.label, tuple(ABSENT for _ in self.sensitive))

    def single_sensitive(self, i):
        sens = tuple(
            s if j == i else ABSENT for j, s in enumerate(self.sensitive)
        )
        return ConditionSpec(ABSENT, sens)

    def all_absent(self):
        return ConditionSpec(ABSENT, tuple(ABSENT for _ in self.sensitive))


def conditions_to_arrays(conditions, n_sensitive):
    """ConditionSpec list -> (label indices, sensitive index matrix), -1 absent."""
    n = len(conditions)
    label = np.full(n, -1, dtype=int)
    sens = np.full((n, n_sensitive), -1, dtype=int)
    for i, c in enumerate(conditions):
        if len(c.sensitive) != n_sensitive:
            raise ValueError(
                f"condition {i} has {len(c.sensitive)} sensitive entries, "
                f"expected {n_sensitive}"
            )
        if c.label is not ABSENT:
            label[i] = int(c.label)
        for j, s in enumerate(c.sensitive):
            if s is not ABSENT:
                sens[i, j] = int(s)
    return label, sens


@dataclass
class DenoiserOutput:
    eps_hat: np.ndarray  # (n, numeric width)
    logits: list  # per categorical block, (n, K_i)

    def concat(self):
        return np.concatenate([self.eps_hat] + list(self.logits), axis=1)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x):
    return x * sigmoid(x)


def _silu_grad(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def timestep_embedding(t, dim):
    """Sinusoidal features of the integer timestep."""
    t = np.asarray(t, dtype=float).reshape(-1)
    half = (dim + 1) // 2
    if half > 1:
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    else:
        freqs = np.ones(1)
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)[:, :dim]


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Adam:
    """Adaptive-moment update on a flat parameter vector, in place."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class Denoiser:
    """Residual MLP over the flattened encoded row.

    Input projections for state, timestep embedding, and summed condition
    embeddings feed `depth` residual blocks and a linear head producing the
    numeric noise estimate followed by each block's category logits.
    """

    def __init__(self, config, num_width, cardinalities, slot_cards, d_in=None):
        if not slot_cards:
            raise ValueError("need at least the label condition slot")
        self.config = config
        self.num_width = int(num_width)
        self.cardinalities = [int(k) for k in cardinalities]
        self.slot_cards = [int(k) for k in slot_cards]
        self.d_out = self.num_width + sum(self.cardinalities)
        self.d_in = int(d_in) if d_in is not None else self.d_out
        self.layout = self._build_layout()
        size = sum(int(np.prod(shape)) for _, shape in self.layout)
        self.params = np.zeros(size)
        self._views = {}
        off = 0
        for name, shape in self.layout:
            cnt = int(np.prod(shape))
            self._views[name] = self.params[off : off + cnt].reshape(shape)
            off += cnt
        self.initialize(config.seed)

    # -- parameter bookkeeping ------------------------------------------

    def _build_layout(self):
        cfg = self.config
        h, et, ec = cfg.hidden, cfg.t_embed_dim, cfg.cond_embed_dim
        layout = [
            ("t_w1", (et, h)),
            ("t_b1", (h,)),
            ("t_w2", (h, h)),
            ("t_b2", (h,)),
            ("cond_base", (len(self.slot_cards), ec)),
        ]
        for j, card in enumerate(self.slot_cards):
            layout.append((f"cond_delta{j}", (card, ec)))
        layout += [
            ("cond_w", (ec, h)),
            ("cond_b", (h,)),
            ("in_w", (self.d_in, h)),
            ("in_b", (h,)),
        ]
        for k in range(cfg.depth):
            layout += [
                (f"blk{k}_w1", (h, h)),
                (f"blk{k}_b1", (h,)),
                (f"blk{k}_w2", (h, h)),
                (f"blk{k}_b2", (h,)),
            ]
        layout += [("out_w", (h, self.d_out)), ("out_b", (self.d_out,))]
        return layout

    def initialize(self, seed):
        """Symmetric uniform fan-in init; biases and value deltas start at 0."""
        rng = np.random.default_rng(seed)
        for name, shape in self.layout:
            view = self._views[name]
            if name.startswith("cond_delta") or name.endswith(("_b", "_b1", "_b2")):
                view[...] = 0.0
            elif name == "cond_base":
                bound = 1.0 / math.sqrt(shape[1])
                view[...] = rng.uniform(-bound, bound, shape)
            else:
                bound = 1.0 / math.sqrt(shape[0])
                view[...] = rng.uniform(-bound, bound, shape)

    def param_count(self):
        return int(self.params.size)

    def set_params_vector(self, flat):
        flat = np.asarray(flat, dtype=float).ravel()
        if flat.size != self.params.size:
            raise ValueError("parameter vector size mismatch")
        self.params[:] = flat

    # -- forward / backward ---------------------------------------------

    def _grad_views(self, flat):
        views = {}
        off = 0
        for name, shape in self.layout:
            cnt = int(np.prod(shape))
            views[name] = flat[off : off + cnt].reshape(shape)
            off += cnt
        return views

    def _forward_arrays(self, z, t, label_idx, sens_idx, want_cache=False):
        p = self._views
        z = np.asarray(z, dtype=float)
        if z.ndim != 2 or z.shape[1] != self.d_in:
            raise ValueError(f"denoiser input must be (n, {self.d_in})")
        n = z.shape[0]
        label_idx = np.asarray(label_idx, dtype=int).reshape(n)
        sens_idx = np.asarray(sens_idx, dtype=int).reshape(n, len(self.slot_cards) - 1)
        slots = [label_idx] + [sens_idx[:, j] for j in range(sens_idx.shape[1])]
        for j, (idx, card) in enumerate(zip(slots, self.slot_cards)):
            if np.any(idx >= card):
                raise ValueError(f"condition index out of range in slot {j}")

        se = timestep_embedding(t, self.config.t_embed_dim)
        u1 = se @ p["t_w1"] + p["t_b1"]
        a1 = silu(u1)
        temb = a1 @ p["t_w2"] + p["t_b2"]

        e = np.broadcast_to(p["cond_base"].sum(axis=0), (n, self.config.cond_embed_dim)).copy()
        for j, idx in enumerate(slots):
            present = idx >= 0
            if np.any(present):
                e[present] += p[f"cond_delta{j}"][idx[present]]
        c1 = e @ p["cond_w"] + p["cond_b"]

        h = z @ p["in_w"] + p["in_b"] + temb + c1
        hs, us, acts = [h], [], []
        for k in range(self.config.depth):
            u = h @ p[f"blk{k}_w1"] + p[f"blk{k}_b1"]
            a = silu(u)
            h = h + a @ p[f"blk{k}_w2"] + p[f"blk{k}_b2"]
            us.append(u)
            acts.append(a)
            hs.append(h)
        out = h @ p["out_w"] + p["out_b"]
        if not want_cache:
            return out, None
        cache = {
            "z": z, "se": se, "u1": u1, "a1": a1, "e": e,
            "slots": slots, "hs": hs, "us": us, "acts": acts,
        }
        return out, cache

    def _backward(self, cache, d_out):
        p = self._views
        grad = np.zeros_like(self.params)
        g = self._grad_views(grad)
        h_last = cache["hs"][-1]
        g["out_w"] += h_last.T @ d_out
        g["out_b"] += d_out.sum(axis=0)
        dh = d_out @ p["out_w"].T
        for k in reversed(range(self.config.depth)):
            a, u, h_in = cache["acts"][k], cache["us"][k], cache["hs"][k]
            g[f"blk{k}_w2"] += a.T @ dh
            g[f"blk{k}_b2"] += dh.sum(axis=0)
            da = dh @ p[f"blk{k}_w2"].T
            du = da * _silu_grad(u)
            g[f"blk{k}_w1"] += h_in.T @ du
            g[f"blk{k}_b1"] += du.sum(axis=0)
            dh = dh + du @ p[f"blk{k}_w1"].T
        # input projection, timestep path, condition path all receive dh
        g["in_w"] += cache["z"].T @ dh
        g["in_b"] += dh.sum(axis=0)
        g["t_w2"] += cache["a1"].T @ dh
        g["t_b2"] += dh.sum(axis=0)
        da1 = dh @ p["t_w2"].T
        du1 = da1 * _silu_grad(cache["u1"])
        g["t_w1"] += cache["se"].T @ du1
        g["t_b1"] += du1.sum(axis=0)
        g["cond_w"] += cache["e"].T @ dh
        g["cond_b"] += dh.sum(axis=0)
        de = dh @ p["cond_w"].T
        g["cond_base"] += np.broadcast_to(
            de.sum(axis=0), g["cond_base"].shape
        )
        for j, idx in enumerate(cache["slots"]):
            present = idx >= 0
            if np.any(present):
                np.add.at(g[f"cond_delta{j}"], idx[present], de[present])
        return grad

    def _split_output(self, out):
        eps_hat = out[:, : self.num_width]
        logits = []
        off = self.num_width
        for k in self.cardinalities:
            logits.append(out[:, off : off + k])
            off += k
        return DenoiserOutput(eps_hat=eps_hat, logits=logits)

    def forward(self, z, t, conditions):
        """Predict numeric noise and per-block category logits.

        ``conditions`` is one ConditionSpec applied to all rows or a list
        with one entry per row; absent slots route through the null base
        embedding only.
        """
        z = np.atleast_2d(np.asarray(z, dtype=float))
        n = z.shape[0]
        if isinstance(conditions, ConditionSpec):
            conditions = [conditions] * n
        if len(conditions) != n:
            raise ValueError("need one condition per row")
        label_idx, sens_idx = conditions_to_arrays(
            conditions, len(self.slot_cards) - 1
        )
        t_arr = np.broadcast_to(np.asarray(t, dtype=int), (n,))
        out, _ = self._forward_arrays(z, t_arr, label_idx, sens_idx)
        return self._split_output(out)

    # -- loss -------------------------------------------------------------

    def loss_and_grad(self, z_in, t, label_idx, sens_idx, eps_true,
                      x0_blocks, xt_blocks, sched, want_grad=True):
        """Diffusion objective on one corrupted batch, plus its gradient.

        Numeric part is the mean squared error on the noise; each
        categorical column contributes the posterior KL (t >= 2) or the
        reconstruction log-loss (t = 1), averaged over the batch and then
        over columns.
        """
        out, cache = self._forward_arrays(
            z_in, t, label_idx, sens_idx, want_cache=want_grad
        )
        n = out.shape[0]
        d_out = np.zeros_like(out) if want_grad else None
        eps_hat = out[:, : self.num_width]
        if self.num_width:
            loss_g = float(np.mean((eps_true - eps_hat) ** 2))
            if want_grad:
                d_out[:, : self.num_width] = (
                    2.0 * (eps_hat - eps_true) / (n * self.num_width)
                )
        else:
            loss_g = 0.0

        t = np.asarray(t, dtype=int)
        alpha = sched.alpha[t][:, None]
        ab_prev = sched.alpha_bar[t - 1][:, None]
        C = len(self.cardinalities)
        cat_losses = []
        off = self.num_width
        for i, K in enumerate(self.cardinalities):
            logits = out[:, off : off + K]
            x0 = x0_blocks[i]
            xt = xt_blocks[i]
            x0_hat = softmax(logits)
            a = alpha * xt + (1.0 - alpha) / K
            b_hat = ab_prev * x0_hat + (1.0 - ab_prev) / K
            theta = a * b_hat
            S = theta.sum(axis=1, keepdims=True)
            prob = theta / S
            # target: true posterior for t >= 2, the one-hot start at t = 1
            q = np.where(
                (t >= 2)[:, None],
                diffusion.multinomial_posterior(xt, x0, np.maximum(t, 2), sched),
                x0,
            )
            kl = np.where(q > 0.0, q * (np.log(q + 1e-30) - np.log(prob)), 0.0)
            cat_losses.append(float(kl.sum(axis=1).mean()))
            if want_grad:
                d_bhat = a * (1.0 - q / prob) / S / (C * n)
                gx0 = ab_prev * d_bhat
                d_out[:, off : off + K] = x0_hat * (
                    gx0 - (gx0 * x0_hat).sum(axis=1, keepdims=True)
                )
            off += K

        loss = diffusion.total_loss(loss_g, cat_losses)
        if not want_grad:
            return loss, None
        return loss, self._backward(cache, d_out)

    # -- persistence ------------------------------------------------------

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "num_width": self.num_width,
            "cardinalities": self.cardinalities,
            "slot_cards": self.slot_cards,
            "d_in": self.d_in,
            "layout": [[name, list(shape)] for name, shape in self.layout],
            "params": base64.b64encode(
                np.ascontiguousarray(self.params, dtype="<f8").tobytes()
            ).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, d):
        model = cls(
            DenoiserConfig.from_dict(d["config"]),
            d["num_width"],
            d["cardinalities"],
            d["slot_cards"],
            d_in=d["d_in"],
        )
        expected = [[name, list(shape)] for name, shape in model.layout]
        if d["layout"] != expected:
            raise ValueError("checkpoint layout does not match config")
        flat = np.frombuffer(
            base64.b64decode(d["params"]), dtype="<f8"
        ).astype(float)
        model.set_params_vector(flat)
        return model


class LatentCodec:
    """Identity pass-through or a linear autoencoder over encoded rows."""

    def __init__(self, mode="identity", latent_dim=None):
        if mode not in ("identity", "autoencoder"):
            raise ValueError(f"unknown codec mode {mode!r}")
        if mode == "autoencoder" and not latent_dim:
            raise ValueError("autoencoder mode needs latent_dim")
        self.mode = mode
        self.latent_dim = latent_dim
        self.num_width_ = None
        self.cards_ = None
        self.mean_ = None
        self.components_ = None
        self.reconstruction_error_ = None

    @classmethod
    def identity(cls, num_width, cards):
        codec = cls("identity")
        codec.num_width_ = int(num_width)
        codec.cards_ = [int(k) for k in cards]
        return codec

    @property
    def width_(self):
        check_fitted(self, "cards_")
        return self.num_width_ + sum(self.cards_)

    @property
    def latent_width_(self):
        return self.latent_dim if self.mode == "autoencoder" else self.width_

    def fit(self, batch, error_bound=None):
        self.num_width_ = batch.numeric.shape[1]
        self.cards_ = [b.shape[1] for b in batch.categorical]
        if self.mode == "identity":
            self.reconstruction_error_ = 0.0
            return self
        flat = batch.concat()
        if self.latent_dim > flat.shape[1]:
            raise ValueError("latent_dim exceeds encoded width")
        self.mean_ = flat.mean(axis=0)
        centered = flat - self.mean_
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        self.components_ = vt[: self.latent_dim].T
        recon = self.decode_array(self.encode_array(flat))
        self.reconstruction_error_ = float(np.mean((flat - recon) ** 2))
        if error_bound is not None and self.reconstruction_error_ > error_bound:
            raise ValueError(
                f"autoencoder reconstruction error "
                f"{self.reconstruction_error_:.3g} exceeds bound {error_bound}"
            )
        return self

    def encode_array(self, flat):
        check_fitted(self, "cards_")
        flat = np.asarray(flat, dtype=float)
        if flat.shape[-1] != self.width_:
            raise ValueError("encode width mismatch")
        if self.mode == "identity":
            return flat
        return (flat - self.mean_) @ self.components_

    def decode_array(self, latent):
        check_fitted(self, "cards_")
        latent = np.asarray(latent, dtype=float)
        if latent.shape[-1] != self.latent_width_:
            raise ValueError("decode width mismatch")
        if self.mode == "identity":
            return latent
        return latent @ self.components_.T + self.mean_

    def encode_latent(self, batch):
        return self.encode_array(batch.concat())

    def decode_latent(self, latent):
        flat = self.decode_array(np.atleast_2d(latent))
        return EncodedBatch.split(flat, self.num_width_, self.cards_)

    def to_dict(self):
        return {
            "mode": self.mode,
            "latent_dim": self.latent_dim,
            "num_width": self.num_width_,
            "cards": self.cards_,
            "mean": None if self.mean_ is None else self.mean_.tolist(),
            "components": None
            if self.components_ is None
            else self.components_.tolist(),
            "reconstruction_error": self.reconstruction_error_,
        }

    @classmethod
    def from_dict(cls, d):
        codec = cls(d["mode"], d["latent_dim"])
        codec.num_width_ = d["num_width"]
        codec.cards_ = d["cards"]
        codec.reconstruction_error_ = d.get("reconstruction_error")
        if d["mean"] is not None:
            codec.mean_ = np.asarray(d["mean"], dtype=float)
        if d["components"] is not None:
            codec.components_ = np.asarray(d["components"], dtype=float)
        return codec


def train_denoiser(model, batch, labels, sensitive, sched, codec=None):
    """Stochastic training of the diffusion objective; returns epoch losses.

    Per step: uniform timesteps, closed-form corruption of both block
    kinds, independent condition dropout to the null embedding, one
    adaptive-moment update. Aborts on a non-finite loss.
    """
    cfg = model.config
    if codec is None:
        codec = LatentCodec.identity(model.num_width, model.cardinalities)
    rng = np.random.default_rng(cfg.seed)
    n = len(batch)
    labels = np.asarray(labels, dtype=int).reshape(n)
    n_sens = len(model.slot_cards) - 1
    sensitive = np.asarray(sensitive, dtype=int).reshape(n, n_sens)
    x0_num = batch.numeric
    x0_blocks = batch.categorical
    adam = Adam(model.params.size, cfg.learning_rate)
    curve = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            m = idx.size
            t = rng.integers(1, sched.T + 1, m)
            eps = rng.standard_normal((m, model.num_width))
            xt_num = (
                diffusion.gaussian_forward_sample(x0_num[idx], t, eps, sched)
                if model.num_width
                else x0_num[idx]
            )
            xt_blocks = [
                diffusion.sample_categorical(
                    diffusion.multinomial_marginal(b[idx], t, sched), rng
                )
                for b in x0_blocks
            ]
            lab = np.where(rng.random(m) < cfg.p_uncond, -1, labels[idx])
            sens = sensitive[idx].copy()
            for j in range(n_sens):
                sens[:, j] = np.where(
                    rng.random(m) < cfg.p_uncond, -1, sens[:, j]
                )
            z = np.concatenate([xt_num] + xt_blocks, axis=1)
            loss, grad = model.loss_and_grad(
                codec.encode_array(z), t, lab, sens, eps,
                [b[idx] for b in x0_blocks], xt_blocks, sched,
            )
            if not np.isfinite(loss):
                raise RuntimeError("training diverged: non-finite loss")
            adam.step(model.params, grad)
            total += loss * m
        curve.append(total / n)
    return curve

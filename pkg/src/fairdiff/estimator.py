"""High-level fit/sample interface over the full pipeline."""

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import NotFittedError
from .conditioning import balance, draw_conditions, empirical_joint
from .denoiser import Denoiser, DenoiserConfig, LatentCodec, train_denoiser
from .diffusion import make_schedule
from .preprocessing import TableEncoder
from .sampling import GuidanceConfig, reverse_sample, reverse_sample_label_only


class FairTabularDiffusion(BaseEstimator):
    """Guided mixed-type diffusion generator with fairness balancing.

    fit() learns the preprocessing, the denoiser, and the empirical
    label/sensitive joint from a Dataset; sample() draws balanced
    conditions and generates decoded rows.
    """

    def __init__(self, schedule_kind="cosine", timesteps=100, hidden=64,
                 depth=2, t_embed_dim=16, cond_embed_dim=8, p_uncond=0.1,
                 learning_rate=1e-3, batch_size=256, epochs=100, w_g=1.0,
                 w_s=1.0, lam=1.0, delta=0, w_m=0.5, beta_m=0.5,
                 codec_mode="identity", latent_dim=None, seed=0):
        self.schedule_kind = schedule_kind
        self.timesteps = timesteps
        self.hidden = hidden
        self.depth = depth
        self.t_embed_dim = t_embed_dim
        self.cond_embed_dim = cond_embed_dim
        self.p_uncond = p_uncond
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.w_g = w_g
        self.w_s = w_s
        self.lam = lam
        self.delta = delta
        self.w_m = w_m
        self.beta_m = beta_m
        self.codec_mode = codec_mode
        self.latent_dim = latent_dim
        self.seed = seed

    def _check_fitted(self):
        if getattr(self, "model_", None) is None:
            raise NotFittedError("estimator must be fit before sampling")

    def denoiser_config(self):
        return DenoiserConfig(
            hidden=self.hidden,
            depth=self.depth,
            t_embed_dim=self.t_embed_dim,
            cond_embed_dim=self.cond_embed_dim,
            p_uncond=self.p_uncond,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
        )

    def guidance_config(self):
        return GuidanceConfig(
            w_g=self.w_g,
            w_s=self.w_s,
            lam=self.lam,
            delta=self.delta,
            w_m=self.w_m,
            beta_m=self.beta_m,
        )

    def fit(self, dataset):
        schema = dataset.schema
        self.encoder_ = TableEncoder().fit(dataset)
        batch = self.encoder_.transform(dataset)
        self.schedule_ = make_schedule(self.schedule_kind, self.timesteps)
        self.codec_ = LatentCodec(self.codec_mode, self.latent_dim).fit(batch)
        labels = dataset.column_values(schema.target).astype(int)
        sensitive = (
            np.stack(
                [dataset.column_values(s).astype(int) for s in schema.sensitive],
                axis=1,
            )
            if schema.sensitive
            else np.zeros((len(dataset), 0), dtype=int)
        )
        slot_cards = [schema.column(schema.target).cardinality] + [
            schema.column(s).cardinality for s in schema.sensitive
        ]
        self.model_ = Denoiser(
            self.denoiser_config(),
            num_width=self.encoder_.num_width_,
            cardinalities=self.encoder_.cardinalities_,
            slot_cards=slot_cards,
            d_in=self.codec_.latent_width_,
        )
        self.loss_curve_ = train_denoiser(
            self.model_, batch, labels, sensitive, self.schedule_, self.codec_
        )
        self.condition_table_ = empirical_joint(dataset)
        return self

    def draw_conditions(self, n, level=0, seed=None):
        self._check_fitted()
        seed = self.seed if seed is None else seed
        return draw_conditions(n, balance(self.condition_table_, level), seed)

    def sample(self, n, level=0, seed=None, conditions=None, label_only=False):
        """Generate n decoded rows; conditions default to a balanced draw."""
        self._check_fitted()
        seed = self.seed if seed is None else seed
        if conditions is None:
            conditions = self.draw_conditions(n, level=level, seed=seed)
        sampler = reverse_sample_label_only if label_only else reverse_sample
        batch = sampler(
            n, conditions, self.model_, self.schedule_,
            self.guidance_config(), seed, self.codec_,
        )
        return self.encoder_.inverse_transform(batch)

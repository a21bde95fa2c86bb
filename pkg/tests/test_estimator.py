"""End-to-end estimator behavior: sklearn parameter protocol, fit state,
and the sample() surface. Training configs here are deliberately tiny."""

import numpy as np
import pytest
from sklearn.base import clone

from conftest import make_biased_dataset, make_mixture_dataset
from fairdiff import FairTabularDiffusion, NotFittedError


TINY = dict(timesteps=10, epochs=3, hidden=16, depth=1, t_embed_dim=6,
            cond_embed_dim=4, batch_size=128, seed=0)


@pytest.fixture(scope="module")
def tiny_fit():
    train = make_mixture_dataset(300, seed=3)
    est = FairTabularDiffusion(**TINY).fit(train)
    return train, est


@pytest.fixture(scope="module")
def tiny_fit_sensitive():
    train = make_biased_dataset(300, seed=4)
    est = FairTabularDiffusion(**TINY).fit(train)
    return train, est


class TestParamProtocol:
    def test_get_params_round_trip(self):
        est = FairTabularDiffusion(timesteps=42, lam=2.5)
        params = est.get_params()
        assert params["timesteps"] == 42
        assert params["lam"] == 2.5
        rebuilt = FairTabularDiffusion(**params)
        assert rebuilt.get_params() == params

    def test_set_params(self):
        est = FairTabularDiffusion()
        est.set_params(epochs=7, w_s=3.0)
        assert est.epochs == 7
        assert est.w_s == 3.0

    def test_clone_unfits(self, tiny_fit):
        _, est = tiny_fit
        fresh = clone(est)
        assert fresh.get_params() == est.get_params()
        with pytest.raises(NotFittedError):
            fresh.sample(5)

    def test_unknown_param_rejected(self):
        with pytest.raises(ValueError):
            FairTabularDiffusion().set_params(nope=1)


class TestUnfitted:
    def test_sample_requires_fit(self):
        with pytest.raises(NotFittedError, match="fit"):
            FairTabularDiffusion().sample(10)

    def test_draw_conditions_requires_fit(self):
        with pytest.raises(NotFittedError):
            FairTabularDiffusion().draw_conditions(10)


class TestFitState:
    def test_fit_returns_self_and_sets_state(self, tiny_fit):
        train, est = tiny_fit
        assert est.model_ is not None
        assert est.encoder_.schema_ == train.schema
        assert est.schedule_.T == TINY["timesteps"]
        assert len(est.loss_curve_) == TINY["epochs"]
        assert np.all(np.isfinite(est.loss_curve_))
        assert est.condition_table_.label_marginal.shape == (2,)

    def test_zero_epochs_allowed(self):
        train = make_mixture_dataset(120, seed=5)
        est = FairTabularDiffusion(**{**TINY, "epochs": 0}).fit(train)
        assert est.loss_curve_ == []
        assert len(est.sample(4)) == 4

    def test_refit_replaces_state(self, tiny_fit):
        train, _ = tiny_fit
        est = FairTabularDiffusion(**TINY).fit(train)
        first = est.model_
        est.fit(train)
        assert est.model_ is not first


class TestSample:
    def test_shape_and_schema(self, tiny_fit):
        train, est = tiny_fit
        out = est.sample(50, seed=9)
        assert len(out) == 50
        assert out.schema == train.schema
        assert np.all(np.isfinite(out.column_values("x1")))
        codes = out.column_values("label").astype(int)
        assert set(codes) <= {0, 1}

    def test_deterministic_per_seed(self, tiny_fit):
        _, est = tiny_fit
        a = est.sample(20, seed=4)
        b = est.sample(20, seed=4)
        c = est.sample(20, seed=5)
        assert np.array_equal(a.rows, b.rows)
        assert not np.array_equal(a.rows, c.rows)

    def test_seed_defaults_to_estimator_seed(self, tiny_fit):
        _, est = tiny_fit
        assert np.array_equal(
            est.sample(12).rows, est.sample(12, seed=est.seed).rows
        )

    def test_explicit_conditions(self, tiny_fit):
        _, est = tiny_fit
        conds = est.draw_conditions(15, level=10, seed=2)
        out = est.sample(15, conditions=conds, seed=3)
        assert len(out) == 15

    def test_condition_count_checked(self, tiny_fit):
        _, est = tiny_fit
        conds = est.draw_conditions(4, seed=2)
        with pytest.raises(ValueError, match="conditions"):
            est.sample(9, conditions=conds)

    def test_label_only_path(self, tiny_fit_sensitive):
        train, est = tiny_fit_sensitive
        out = est.sample(25, seed=6, label_only=True)
        assert len(out) == 25
        assert out.schema == train.schema

    def test_level_changes_conditions_not_model(self, tiny_fit_sensitive):
        _, est = tiny_fit_sensitive
        lo = est.draw_conditions(2000, level=0, seed=1)
        hi = est.draw_conditions(2000, level=10, seed=1)
        share = lambda conds: np.mean([c.sensitive[0] == 0 for c in conds])
        # level 10 pushes the group share toward one half
        assert abs(share(hi) - 0.5) < abs(share(lo) - 0.5)


class TestDrawConditions:
    def test_codes_in_range(self, tiny_fit_sensitive):
        _, est = tiny_fit_sensitive
        conds = est.draw_conditions(100, level=5, seed=7)
        assert len(conds) == 100
        for spec in conds:
            assert spec.label in (0, 1)
            assert len(spec.sensitive) == 1
            assert spec.sensitive[0] in (0, 1)

    def test_deterministic(self, tiny_fit):
        _, est = tiny_fit
        a = est.draw_conditions(40, level=3, seed=8)
        b = est.draw_conditions(40, level=3, seed=8)
        assert a == b

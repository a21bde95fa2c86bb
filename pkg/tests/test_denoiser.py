import numpy as np
import pytest

from fairdiff.denoiser import (
    ABSENT,
    Adam,
    ConditionSpec,
    Denoiser,
    DenoiserConfig,
    LatentCodec,
    conditions_to_arrays,
    sigmoid,
    silu,
    softmax,
    timestep_embedding,
    train_denoiser,
)
from fairdiff.diffusion import make_schedule
from fairdiff.preprocessing import EncodedBatch


def small_model(num_width=2, cards=(2, 3), slot_cards=(2, 3), **cfg_kw):
    kw = dict(hidden=8, depth=2, t_embed_dim=6, cond_embed_dim=4, seed=0)
    kw.update(cfg_kw)
    cfg = DenoiserConfig(**kw)
    model = Denoiser(cfg, num_width, list(cards), list(slot_cards))
    model.initialize(cfg.seed)
    return model


def random_batch(model, n, seed=0, T=10):
    rng = np.random.default_rng(seed)
    d = model.d_in
    z = rng.standard_normal((n, d))
    t = rng.integers(1, T + 1, n)
    labels = rng.integers(0, model.slot_cards[0], n)
    labels[rng.random(n) < 0.2] = -1
    n_sens = len(model.slot_cards) - 1
    sens = np.stack(
        [rng.integers(0, k, n) for k in model.slot_cards[1:]], axis=1
    ) if n_sens else np.zeros((n, 0), dtype=int)
    for j in range(n_sens):
        sens[rng.random(n) < 0.2, j] = -1
    return z, t, labels, sens


class TestConfig:
    def test_learning_rate_bounds(self):
        with pytest.raises(ValueError):
            DenoiserConfig(learning_rate=5e-3)
        with pytest.raises(ValueError):
            DenoiserConfig(learning_rate=1e-6)
        DenoiserConfig(learning_rate=3e-3)

    def test_p_uncond_bounds(self):
        with pytest.raises(ValueError):
            DenoiserConfig(p_uncond=1.5)
        DenoiserConfig(p_uncond=1.0)

    def test_zero_epochs_allowed_negative_rejected(self):
        DenoiserConfig(epochs=0)
        with pytest.raises(ValueError):
            DenoiserConfig(epochs=-1)

    def test_dict_round_trip(self):
        cfg = DenoiserConfig(hidden=32, epochs=7, p_uncond=0.3)
        assert DenoiserConfig.from_dict(cfg.to_dict()) == cfg


class TestActivations:
    def test_sigmoid_values_and_stability(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5
        assert sigmoid(np.array([800.0]))[0] == 1.0
        assert sigmoid(np.array([-800.0]))[0] == pytest.approx(0.0, abs=1e-300)

    def test_silu_definition(self):
        x = np.linspace(-4, 4, 9)
        assert np.allclose(silu(x), x * sigmoid(x), atol=1e-15)

    def test_softmax_rows_and_shift_invariance(self):
        logits = np.array([[1.0, 2.0, 3.0], [1000.0, 1000.0, 999.0]])
        p = softmax(logits)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(p, softmax(logits + 7.0), atol=1e-12)

    def test_timestep_embedding_shapes_and_range(self):
        for dim in (4, 5, 16):
            emb = timestep_embedding(np.array([0, 1, 50]), dim)
            assert emb.shape == (3, dim)
            assert np.all(np.abs(emb) <= 1.0)

    def test_timestep_embedding_distinguishes_times(self):
        emb = timestep_embedding(np.arange(1, 100), 16)
        assert len(np.unique(emb[:, 0])) > 50


class TestAdam:
    def test_first_step_is_signed_lr(self):
        opt = Adam(3, lr=1e-3)
        params = np.zeros(3)
        g = np.array([2.0, -0.5, 0.0])
        opt.step(params, g)
        # bias-corrected first step moves by lr*sign(g) up to the eps term
        assert params[0] == pytest.approx(-1e-3, rel=1e-4)
        assert params[1] == pytest.approx(1e-3, rel=1e-4)
        assert params[2] == 0.0

    def test_state_persists(self):
        opt = Adam(1, lr=1e-3)
        params = np.zeros(1)
        for _ in range(10):
            opt.step(params, np.array([1.0]))
        assert params[0] == pytest.approx(-10e-3, rel=0.05)


class TestConditionSpec:
    def test_codes_shift_indices(self):
        spec = ConditionSpec(label=2, sensitive=(0, ABSENT, 3))
        assert spec.codes() == (3, 1, 0, 4)
        assert ConditionSpec(ABSENT, (ABSENT,)).codes() == (0, 0)

    def test_reductions(self):
        spec = ConditionSpec(label=1, sensitive=(0, 2))
        assert spec.label_only() == ConditionSpec(1, (ABSENT, ABSENT))
        assert spec.single_sensitive(1) == ConditionSpec(ABSENT, (ABSENT, 2))
        assert spec.all_absent() == ConditionSpec(ABSENT, (ABSENT, ABSENT))

    def test_conditions_to_arrays(self):
        labels, sens = conditions_to_arrays(
            [ConditionSpec(1, (0,)), ConditionSpec(ABSENT, (ABSENT,))], 1
        )
        assert labels.tolist() == [1, -1]
        assert sens.tolist() == [[0], [-1]]


class TestDenoiserNetwork:
    def test_output_shapes(self):
        model = small_model()
        out = model.forward(np.zeros((5, model.d_in)), 3, ConditionSpec(1, (2,)))
        assert out.eps_hat.shape == (5, 2)
        assert [b.shape for b in out.logits] == [(5, 2), (5, 3)]

    def test_forward_deterministic(self):
        model = small_model()
        z = np.random.default_rng(0).standard_normal((4, model.d_in))
        a = model.forward(z, 5, ConditionSpec(0, (1,))).concat()
        b = model.forward(z, 5, ConditionSpec(0, (1,))).concat()
        assert np.array_equal(a, b)

    def test_init_seed_controls_params(self):
        a = small_model(seed=0)
        b = small_model(seed=0)
        c = small_model(seed=1)
        assert np.array_equal(a.params, b.params)
        assert not np.array_equal(a.params, c.params)

    def test_param_count_covers_layout(self):
        model = small_model()
        total = sum(int(np.prod(shape)) for _, shape in model.layout)
        assert model.param_count() == total == model.params.size

    def test_fresh_model_is_condition_blind(self):
        # per-value deltas start at zero, so conditions cannot matter yet
        model = small_model()
        z = np.random.default_rng(1).standard_normal((3, model.d_in))
        raw_cond = model.forward(z, 2, ConditionSpec(1, (0,))).concat()
        raw_abs = model.forward(z, 2, ConditionSpec(ABSENT, (ABSENT,))).concat()
        assert np.allclose(raw_cond, raw_abs, atol=1e-15)

    def test_condition_count_mismatch_rejected(self):
        model = small_model()
        with pytest.raises(ValueError, match="one condition per row"):
            model.forward(np.zeros((3, model.d_in)), 1, [ConditionSpec(0, (0,))])

    def test_condition_index_out_of_range_rejected(self):
        model = small_model()
        with pytest.raises((ValueError, IndexError)):
            model.forward(np.zeros((1, model.d_in)), 1, ConditionSpec(9, (0,)))

    def test_set_params_vector_size_checked(self):
        model = small_model()
        with pytest.raises(ValueError):
            model.set_params_vector(np.zeros(model.param_count() - 1))

    def test_gradient_matches_finite_differences(self):
        model = small_model()
        sched = make_schedule("linear", 10)
        rng = np.random.default_rng(3)
        n = 6
        z, t, labels, sens = random_batch(model, n, seed=3)
        t[0] = 1  # cover the reconstruction branch
        eps = rng.standard_normal((n, model.num_width))
        x0_blocks = [np.eye(k)[rng.integers(0, k, n)] for k in model.cardinalities]
        xt_blocks = [np.eye(k)[rng.integers(0, k, n)] for k in model.cardinalities]

        def loss_at(vec):
            model.set_params_vector(vec)
            loss, _ = model.loss_and_grad(
                z, t, labels, sens, eps, x0_blocks, xt_blocks, sched, want_grad=False
            )
            return loss

        base = model.params.copy()
        _, grad = model.loss_and_grad(
            z, t, labels, sens, eps, x0_blocks, xt_blocks, sched
        )
        h = 1e-5
        idx = rng.choice(model.param_count(), size=60, replace=False)
        worst = 0.0
        for i in idx:
            delta = np.zeros_like(base)
            delta[i] = h
            fd = (loss_at(base + delta) - loss_at(base - delta)) / (2 * h)
            rel = abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-8)
            worst = max(worst, rel)
        model.set_params_vector(base)
        assert worst <= 1e-4

    def test_dict_round_trip_preserves_outputs(self):
        model = small_model()
        clone = Denoiser.from_dict(model.to_dict())
        z = np.random.default_rng(4).standard_normal((3, model.d_in))
        a = model.forward(z, 4, ConditionSpec(0, (0,))).concat()
        b = clone.forward(z, 4, ConditionSpec(0, (0,))).concat()
        assert np.array_equal(a, b)

    def test_from_dict_layout_mismatch_rejected(self):
        model = small_model()
        d = model.to_dict()
        d["num_width"] = 3
        with pytest.raises(ValueError, match="layout"):
            Denoiser.from_dict(d)


def training_setup(n=256, seed=0, **cfg_kw):
    rng = np.random.default_rng(seed)
    numeric = rng.standard_normal((n, 2))
    cats = [np.eye(2)[rng.integers(0, 2, n)]]
    batch = EncodedBatch(numeric, cats)
    labels = cats[0].argmax(axis=1)
    sens = np.zeros((n, 0), dtype=int)
    kw = dict(hidden=16, depth=1, t_embed_dim=8, cond_embed_dim=4,
              batch_size=64, epochs=30, seed=seed)
    kw.update(cfg_kw)
    model = Denoiser(DenoiserConfig(**kw), 2, [2], [2])
    model.initialize(kw["seed"])
    return model, batch, labels, sens


class TestTraining:
    def test_loss_decreases(self):
        drops = []
        for seed in (0, 1, 2):
            model, batch, labels, sens = training_setup(seed=seed)
            losses = train_denoiser(model, batch, labels, sens, make_schedule("cosine", 20))
            drops.append(losses[-1] - losses[0])
        assert np.mean(drops) < 0.0

    def test_zero_epochs_is_a_no_op(self):
        model, batch, labels, sens = training_setup(epochs=0)
        before = model.params.copy()
        losses = train_denoiser(model, batch, labels, sens, make_schedule("cosine", 20))
        assert losses == []
        assert np.array_equal(model.params, before)

    def test_training_bit_reproducible(self):
        results = []
        for _ in range(2):
            model, batch, labels, sens = training_setup(epochs=5)
            train_denoiser(model, batch, labels, sens, make_schedule("cosine", 20))
            results.append(model.params.copy())
        assert np.array_equal(results[0], results[1])

    def test_always_dropped_conditions_stay_inert(self):
        # p_uncond=1 never routes a real condition, so its delta embeddings
        # keep their zero init and conditioning cannot change the output
        model, batch, labels, sens = training_setup(epochs=5, p_uncond=1.0)
        train_denoiser(model, batch, labels, sens, make_schedule("cosine", 20))
        z = np.random.default_rng(5).standard_normal((4, model.d_in))
        cond = model.forward(z, 3, ConditionSpec(1, ())).concat()
        absent = model.forward(z, 3, ConditionSpec(ABSENT, ())).concat()
        assert np.array_equal(cond, absent)

    def test_divergence_guard(self):
        model, batch, labels, sens = training_setup(epochs=1)
        model.params[:] = 1e200  # forces overflow on the first batch
        with np.errstate(all="ignore"), pytest.raises(RuntimeError, match="diverged"):
            train_denoiser(model, batch, labels, sens, make_schedule("cosine", 20))


class TestLatentCodec:
    def test_identity_round_trip(self):
        rng = np.random.default_rng(6)
        batch = EncodedBatch(rng.standard_normal((5, 2)), [np.eye(3)[rng.integers(0, 3, 5)]])
        codec = LatentCodec.identity(2, [3])
        assert codec.latent_width_ == 5
        latent = codec.encode_latent(batch)
        back = codec.decode_latent(latent)
        assert np.array_equal(back.numeric, batch.numeric)
        assert np.array_equal(back.categorical[0], batch.categorical[0])

    def test_autoencoder_recovers_low_rank_data(self):
        rng = np.random.default_rng(7)
        basis = rng.standard_normal((2, 6))
        flat = rng.standard_normal((200, 2)) @ basis
        batch = EncodedBatch(flat, [])
        codec = LatentCodec("autoencoder", latent_dim=2).fit(batch, error_bound=1e-9)
        assert codec.latent_width_ == 2
        recon = codec.decode_array(codec.encode_array(flat))
        assert np.max(np.abs(recon - flat)) < 1e-7

    def test_autoencoder_error_bound_enforced(self):
        rng = np.random.default_rng(8)
        batch = EncodedBatch(rng.standard_normal((100, 6)), [])
        with pytest.raises(ValueError, match="reconstruction error"):
            LatentCodec("autoencoder", latent_dim=1).fit(batch, error_bound=1e-12)

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            LatentCodec("compress")
        with pytest.raises(ValueError, match="latent_dim"):
            LatentCodec("autoencoder")

    def test_width_mismatch_rejected(self):
        codec = LatentCodec.identity(2, [2])
        with pytest.raises(ValueError, match="width"):
            codec.encode_array(np.zeros((1, 3)))

    def test_dict_round_trip(self):
        rng = np.random.default_rng(9)
        flat = rng.standard_normal((50, 4))
        codec = LatentCodec("autoencoder", latent_dim=3).fit(EncodedBatch(flat, []))
        clone = LatentCodec.from_dict(codec.to_dict())
        assert np.allclose(
            clone.encode_array(flat), codec.encode_array(flat), atol=1e-12
        )

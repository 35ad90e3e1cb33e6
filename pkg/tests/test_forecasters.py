import numpy as np
import pytest

from nkt import forecasters as fc
from nkt.core import MultichannelSeries, NormParams
from nkt.errors import (
    ConditionError,
    ConfigError,
    DivergenceError,
    FormatError,
    InterfaceError,
    NormalizationError,
    RangeError,
    ShapeError,
    TokenError,
)
from nkt.quant import QuantizedSeries


def _series(data, fs=250.0):
    return MultichannelSeries(np.atleast_2d(np.asarray(data, dtype=np.float64)), fs)


def _unit_norm(channels):
    return NormParams(np.zeros(channels), np.ones(channels), np.ones(channels), 4.0)


def _small_quantized_model(channels=1, q=8, condition_count=0, subject_count=0,
                           mix=False, linear=False, seed=0):
    rng = np.random.default_rng(seed)
    return fc.QuantizedWavenetModel(
        channels, q, embed_dim=4, dilations=[1, 2], residual_width=6, skip_width=5,
        condition_count=condition_count, condition_dim=3, subject_count=subject_count,
        subject_dim=3, mix=mix, linear=linear, rng=rng,
    )


# ------------------------------------------------------------ simple wavenet


def test_simple_wavenet_white_noise_mse_matches_variance():
    rng = np.random.default_rng(0)
    series = _series(rng.standard_normal((2, 6000)))
    model = fc.train_simple_wavenet(
        series, layers=4, lr=5e-3, epochs=150, seed=1, patience=20
    )
    noise_var = float(np.var(series.data))
    assert abs(model.innovation_std**2 - noise_var) / noise_var < 0.05


def test_simple_wavenet_noiseless_sinusoid_converges():
    t = np.arange(4000) / 250.0
    series = _series(np.sin(2.0 * np.pi * 10.0 * t))
    model = fc.train_simple_wavenet(
        series, layers=4, lr=3e-3, epochs=2500, seed=2, patience=300
    )
    assert model.innovation_std**2 < 1e-4


def test_forward_values_matches_tape_forward_exactly():
    rng = np.random.default_rng(3)
    model = fc.SimpleWavenetModel(3, layers=3, rng=rng)
    x = rng.standard_normal((2, 3, 30))
    assert np.array_equal(model.forward(x).value, model.forward_values(x))


def test_simple_wavenet_receptive_field_bit_identity():
    rng = np.random.default_rng(4)
    model = fc.SimpleWavenetModel(2, layers=3, rng=rng)  # receptive field 8
    x = rng.standard_normal((1, 2, 18))
    base = model.forward_values(x)
    bumped = x.copy()
    bumped[0, :, 0] += 5.0
    out = model.forward_values(bumped)
    # the last window starts at sample 10, so sample 0 cannot reach it
    assert np.array_equal(base[0, :, -1], out[0, :, -1])
    assert not np.array_equal(base[0, :, 0], out[0, :, 0])


def test_simple_wavenet_causality():
    rng = np.random.default_rng(5)
    model = fc.SimpleWavenetModel(1, layers=3, rng=rng)
    r = model.receptive_field
    x = rng.standard_normal((1, 1, r + 10))
    base = model.forward_values(x)
    t_hit = r + 3
    bumped = x.copy()
    bumped[0, 0, t_hit] += 1.0
    out = model.forward_values(bumped)
    unaffected = t_hit - r + 1  # outputs using only samples before the bump
    assert np.array_equal(base[0, 0, :unaffected], out[0, 0, :unaffected])
    assert not np.array_equal(base[0, 0, unaffected:], out[0, 0, unaffected:])


def test_recursive_forecast_chains_single_steps():
    rng = np.random.default_rng(6)
    model = fc.SimpleWavenetModel(2, layers=2, rng=rng)
    r = model.receptive_field
    windows = rng.standard_normal((3, 2, r))
    preds = fc.recursive_forecast(model, windows, steps=3)
    assert preds.shape == (3, 2, 3)
    buf = np.concatenate([windows, preds], axis=2)
    for h in range(3):
        step = model.forward_values(buf[:, :, h : h + r])[:, :, 0]
        assert np.array_equal(step, preds[:, :, h])
    with pytest.raises(ShapeError):
        fc.recursive_forecast(model, windows[:, :, :-1], steps=2)


def test_simple_wavenet_early_stopping_shortens_training():
    rng = np.random.default_rng(7)
    series = _series(rng.standard_normal((1, 2500)))
    model = fc.train_simple_wavenet(
        series, layers=3, lr=2e-2, epochs=100, seed=3, patience=3
    )
    assert len(model.metrics) < 100
    forced = fc.train_simple_wavenet(
        series, layers=3, lr=2e-2, epochs=100, seed=3, patience=3, early_stop=False
    )
    assert len(forced.metrics) == 100


def test_generate_continuous_deterministic_and_noisy():
    rng = np.random.default_rng(8)
    series = _series(rng.standard_normal((1, 2000)))
    model = fc.train_simple_wavenet(series, layers=3, epochs=5, seed=4)
    primer = series.data[:, : model.receptive_field + 5]
    a = fc.generate(model, primer, steps=40, seed=11)
    b = fc.generate(model, primer, steps=40, seed=11)
    assert np.array_equal(a, b)
    c = fc.generate(model, primer, steps=40, seed=12)
    assert not np.array_equal(a, c)
    quiet = fc.generate(model, primer, steps=40, noise_std=0.0)
    again = fc.generate(model, primer, steps=40, noise_std=0.0)
    assert np.array_equal(quiet, again)


def test_generate_continuous_divergence_and_validation():
    rng = np.random.default_rng(9)
    model = fc.SimpleWavenetModel(1, layers=2, rng=rng)
    model.out_proj[1].value = np.array([2e6])  # constant huge output
    primer = np.zeros((1, model.receptive_field))
    with pytest.raises(DivergenceError):
        fc.generate(model, primer, steps=3, noise_std=0.0)
    with pytest.raises(ShapeError):
        fc.generate(model, primer[:, :-1], steps=3, noise_std=0.0)
    with pytest.raises(ConfigError):
        fc.generate(model, primer, steps=3, strategy=fc.SamplingStrategy("argmax"))
    out = fc.generate(fc.SimpleWavenetModel(1, 2, rng), None, steps=5,
                      noise_std=0.0, zero_history=True)
    assert out.shape == (1, 5)


# ------------------------------------------------------------------ sampling


def test_topp_keeps_smallest_prefix_reaching_p():
    logits = np.log(np.array([0.6, 0.3, 0.1]))
    dist = fc.sampling_distribution(logits, fc.SamplingStrategy("topp", p=0.8))
    assert np.allclose(dist, [2.0 / 3.0, 1.0 / 3.0, 0.0], atol=1e-12)
    # exactly at the boundary the crossing token still closes the set
    exact = fc.sampling_distribution(logits, fc.SamplingStrategy("topp", p=0.6))
    assert np.allclose(exact, [1.0, 0.0, 0.0], atol=1e-12)
    wider = fc.sampling_distribution(logits, fc.SamplingStrategy("topp", p=0.61))
    assert np.allclose(wider, [2.0 / 3.0, 1.0 / 3.0, 0.0], atol=1e-12)


def test_argmax_breaks_ties_toward_lower_index():
    logits = np.log(np.array([0.5, 0.5]))
    assert fc.sample_next(logits, fc.SamplingStrategy("argmax")) == 0
    dist = fc.sampling_distribution(logits, fc.SamplingStrategy("argmax"))
    assert np.array_equal(dist, [1.0, 0.0])


def test_topk_keeps_k_most_probable():
    logits = np.log(np.array([0.5, 0.2, 0.3]))
    dist = fc.sampling_distribution(logits, fc.SamplingStrategy("topk", k=2))
    assert np.allclose(dist, [0.625, 0.0, 0.375], atol=1e-12)
    everything = fc.sampling_distribution(logits, fc.SamplingStrategy("topk", k=3))
    assert np.allclose(everything, [0.5, 0.2, 0.3], atol=1e-12)


def test_topp_one_equals_full_distribution():
    rng = np.random.default_rng(20)
    logits = rng.standard_normal(16)
    full = fc.sampling_distribution(logits, fc.SamplingStrategy("full"))
    topp = fc.sampling_distribution(logits, fc.SamplingStrategy("topp", p=1.0))
    assert np.allclose(full, topp, atol=1e-12)
    assert abs(full.sum() - 1.0) < 1e-12


def test_full_sampling_frequencies_match_distribution():
    probs = np.array([0.5, 0.2, 0.3])
    logits = np.log(probs)
    rng = np.random.default_rng(21)
    strategy = fc.SamplingStrategy("full")
    draws = np.array([fc.sample_next(logits, strategy, rng) for _ in range(100_000)])
    freqs = np.bincount(draws, minlength=3) / draws.size
    assert np.all(np.abs(freqs - probs) < 0.01)


def test_sample_next_seeded_is_reproducible():
    logits = np.log(np.array([0.4, 0.3, 0.3]))
    strategy = fc.SamplingStrategy("full", seed=42)
    assert fc.sample_next(logits, strategy) == fc.sample_next(logits, strategy)


def test_sampling_strategy_validation():
    with pytest.raises(ConfigError):
        fc.SamplingStrategy("greedy")
    with pytest.raises(RangeError):
        fc.SamplingStrategy("topk", k=0)
    with pytest.raises(RangeError):
        fc.SamplingStrategy("topp", p=0.0)
    with pytest.raises(RangeError):
        fc.SamplingStrategy("topp", p=1.2)


# ----------------------------------------------------------- quantized model


def test_quantized_logits_shape_and_normalized_distributions():
    model = _small_quantized_model(channels=2)
    tokens = np.random.default_rng(30).integers(0, 8, size=(2, 20))
    logits = model.logits_values(tokens)
    assert logits.shape == (2, 17, 8)  # receptive field 4, so 20 - 4 + 1 windows
    probs = np.exp(logits - logits.max(axis=2, keepdims=True))
    probs /= probs.sum(axis=2, keepdims=True)
    assert np.all(np.abs(probs.sum(axis=2) - 1.0) < 1e-8)


def test_quantized_tape_and_values_forward_agree():
    for kwargs in ({}, {"condition_count": 3}, {"subject_count": 2},
                   {"mix": True}, {"linear": True},
                   {"condition_count": 2, "subject_count": 2, "mix": True}):
        model = _small_quantized_model(channels=2, **kwargs)
        rng = np.random.default_rng(31)
        tokens = rng.integers(0, 8, size=(2, 15))
        tc = rng.integers(-1, kwargs.get("condition_count", 0), size=15) \
            if kwargs.get("condition_count") else None
        sid = 1 if kwargs.get("subject_count") else None
        tape = model.logits(tokens, tc, sid).value
        values = model.logits_values(tokens, tc, sid)
        assert np.array_equal(tape, values)


def test_quantized_receptive_field_and_causality():
    # the linear variant keeps every position responsive, so alignment
    # errors cannot hide behind dead rectifier units
    model = _small_quantized_model(linear=True)
    rng = np.random.default_rng(32)
    tokens = rng.integers(0, 8, size=(1, 12))
    base = model.logits_values(tokens)
    bumped = tokens.copy()
    bumped[0, 0] = (bumped[0, 0] + 3) % 8
    out = model.logits_values(bumped)
    # token 0 only falls inside the first window (receptive field 4)
    assert np.array_equal(base[0, 1:], out[0, 1:])
    assert not np.array_equal(base[0, 0], out[0, 0])
    tail = tokens.copy()
    tail[0, -1] = (tail[0, -1] + 3) % 8
    out = model.logits_values(tail)
    assert np.array_equal(base[0, :-1], out[0, :-1])
    assert not np.array_equal(base[0, -1], out[0, -1])


def test_quantized_constant_token_converges_to_certainty():
    tokens = np.full((1, 400), 5)
    qs = QuantizedSeries(tokens, 8, 255.0, _unit_norm(1), 250.0)
    model = fc.train_quantized_wavenet(
        qs, blocks=1, layers_per_block=2, residual_width=6, skip_width=5,
        embed_dim=4, epochs=20, steps_per_epoch=5, window=64, lr=3e-2, seed=0,
    )
    dist = fc.predict_distribution(model, tokens[:, :10])
    assert dist[0, 5] > 0.99
    assert model.metrics[-1]["val_loss"] < 0.01


def test_quantized_learns_alternating_tokens():
    tokens = np.tile([3, 9], 300)[None, :]
    qs = QuantizedSeries(tokens, 16, 255.0, _unit_norm(1), 250.0)
    model = fc.train_quantized_wavenet(
        qs, blocks=1, layers_per_block=2, residual_width=8, skip_width=8,
        embed_dim=4, epochs=25, steps_per_epoch=8, window=64, lr=2e-2, seed=1,
    )
    assert model.report["top1"] == 1.0
    # a repeat-last-token baseline is always wrong on an alternating stream
    assert model.report["repeat_top1"] == 0.0
    assert model.report["mse"] < model.report["repeat_mse"]
    assert 0.0 <= model.report["top5"] <= 1.0


def test_quantized_condition_validation():
    tokens = np.random.default_rng(33).integers(0, 8, size=(1, 200))
    qs = QuantizedSeries(tokens, 8, 255.0, _unit_norm(1), 250.0)
    bad_tc = np.full(200, 7)
    with pytest.raises(ConditionError):
        fc.train_quantized_wavenet(qs, blocks=1, layers_per_block=2, window=64,
                                   epochs=1, condition_tc=bad_tc, condition_count=3)
    with pytest.raises(ShapeError):
        fc.train_quantized_wavenet(qs, blocks=1, layers_per_block=2, window=64,
                                   epochs=1, condition_tc=np.zeros(10, dtype=int))
    model = _small_quantized_model(condition_count=2)
    with pytest.raises(ConditionError):
        model.logits_values(tokens[:, :10], np.full(10, 5))


def test_quantized_conditioning_steers_output():
    model = _small_quantized_model(condition_count=2, seed=5)
    tokens = np.random.default_rng(34).integers(0, 8, size=(1, 10))
    under_0 = model.logits_values(tokens, np.zeros(10, dtype=int))
    under_1 = model.logits_values(tokens, np.ones(10, dtype=int))
    neutral = model.logits_values(tokens, np.full(10, -1))
    assert not np.allclose(under_0, under_1)
    assert not np.allclose(under_0, neutral)


def test_quantized_generation_determinism_and_argmax():
    tokens = np.full((1, 400), 5)
    qs = QuantizedSeries(tokens, 8, 255.0, _unit_norm(1), 250.0)
    model = fc.train_quantized_wavenet(
        qs, blocks=1, layers_per_block=2, residual_width=6, skip_width=5,
        embed_dim=4, epochs=12, steps_per_epoch=5, window=64, lr=3e-2, seed=2,
    )
    constant = fc.generate(model, tokens[:, :10], steps=25,
                           strategy=fc.SamplingStrategy("argmax"))
    assert np.all(constant == 5)
    a = fc.generate(model, tokens[:, :10], steps=25, seed=7)
    b = fc.generate(model, tokens[:, :10], steps=25, seed=7)
    assert np.array_equal(a, b)
    zero_hist = fc.generate(model, None, steps=5, zero_history=True,
                            strategy=fc.SamplingStrategy("argmax"))
    assert zero_hist.shape == (1, 5)
    with pytest.raises(TokenError):
        fc.generate(model, tokens[:, :10].astype(float), steps=2)
    with pytest.raises(ConfigError):
        fc.generate(model, tokens[:, :10], steps=2, noise_std=0.5)


def test_quantized_subject_table_requires_id():
    model = _small_quantized_model(subject_count=2)
    tokens = np.random.default_rng(35).integers(0, 8, size=(1, 10))
    with pytest.raises(ShapeError):
        model.logits_values(tokens)
    with pytest.raises(RangeError):
        model.logits_values(tokens, subject_id=4)
    out = model.logits_values(tokens, subject_id=1)
    assert out.shape == (1, 7, 8)


def test_predict_distribution_uses_only_last_window():
    model = _small_quantized_model()
    rng = np.random.default_rng(36)
    tokens = rng.integers(0, 8, size=(1, 30))
    full = fc.predict_distribution(model, tokens)
    tail = fc.predict_distribution(model, tokens[:, -model.receptive_field :])
    assert np.array_equal(full, tail)
    assert abs(full.sum() - 1.0) < 1e-8


# --------------------------------------------------------------- bayes decode


def test_bayes_decode_symmetric_model_returns_priors():
    model = _small_quantized_model(condition_count=2, seed=6)
    for layer in model.layers:
        layer["w_cf"].value = np.zeros_like(layer["w_cf"].value)
        layer["w_cg"].value = np.zeros_like(layer["w_cg"].value)
    tokens = np.random.default_rng(40).integers(0, 8, size=(1, 20))
    result = fc.bayes_decode(model, tokens, np.array([0.5, 0.5]))
    assert np.allclose(result.posterior, [0.5, 0.5], atol=1e-12)
    assert result.log_likelihood[0] == pytest.approx(result.log_likelihood[1])
    skewed = fc.bayes_decode(model, tokens, np.array([0.9, 0.1]))
    assert np.allclose(skewed.posterior, [0.9, 0.1], atol=1e-12)


def test_bayes_decode_degenerate_prior_wins():
    model = _small_quantized_model(condition_count=2, seed=7)
    tokens = np.random.default_rng(41).integers(0, 8, size=(1, 20))
    result = fc.bayes_decode(model, tokens, np.array([1.0, 0.0]))
    assert np.array_equal(result.posterior, [1.0, 0.0])


def test_bayes_decode_per_timestep_posterior():
    model = _small_quantized_model(condition_count=3, seed=8)
    tokens = np.random.default_rng(42).integers(0, 8, size=(1, 24))
    result = fc.bayes_decode(model, tokens, np.full(3, 1.0 / 3.0), per_timestep=True)
    n_pred = 24 - model.receptive_field
    assert result.per_timestep.shape == (n_pred, 3)
    assert np.all(np.abs(result.per_timestep.sum(axis=1) - 1.0) < 1e-10)
    assert np.allclose(result.per_timestep[-1], result.posterior, atol=1e-12)


def test_bayes_decode_validation_and_floor():
    unconditioned = _small_quantized_model()
    tokens = np.random.default_rng(43).integers(0, 8, size=(1, 20))
    with pytest.raises(InterfaceError):
        fc.bayes_decode(unconditioned, tokens, np.array([1.0]))
    model = _small_quantized_model(condition_count=2, seed=9)
    with pytest.raises(NormalizationError):
        fc.bayes_decode(model, tokens, np.array([0.6, 0.6]))
    with pytest.raises(RangeError):
        fc.bayes_decode(model, tokens, np.array([1.5, -0.5]))
    with pytest.raises(ShapeError):
        fc.bayes_decode(model, tokens[:, : model.receptive_field], np.array([0.5, 0.5]))

    # push one token's probability below the log floor
    model.head[2].value = np.zeros_like(model.head[2].value)
    bias = np.zeros(model.q)
    bias[0] = 800.0
    model.head[3].value = bias
    floored_tokens = np.concatenate(
        [np.zeros((1, model.receptive_field), dtype=int), [[3, 0, 0, 0]]], axis=1
    )
    result = fc.bayes_decode(model, floored_tokens, np.array([0.5, 0.5]))
    assert result.floored
    assert np.all(result.log_likelihood >= fc.LOG_FLOOR * floored_tokens.shape[1])


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip_simple(tmp_path):
    rng = np.random.default_rng(50)
    series = _series(rng.standard_normal((2, 1500)))
    model = fc.train_simple_wavenet(series, layers=3, epochs=3, seed=0)
    fc.save_forecaster(tmp_path / "m", model)
    loaded = fc.load_forecaster(tmp_path / "m")
    x = rng.standard_normal((1, 2, 40))
    assert np.array_equal(model.forward_values(x), loaded.forward_values(x))
    assert loaded.innovation_std == model.innovation_std
    assert loaded.fs == model.fs


def test_checkpoint_roundtrip_quantized(tmp_path):
    rng = np.random.default_rng(51)
    tokens = rng.integers(0, 8, size=(2, 300))
    qs = QuantizedSeries(tokens, 8, 255.0, _unit_norm(2), 250.0)
    tc = rng.integers(-1, 2, size=300)
    model = fc.train_quantized_wavenet(
        qs, blocks=1, layers_per_block=2, residual_width=6, skip_width=5,
        embed_dim=4, epochs=2, steps_per_epoch=3, window=64, seed=0,
        condition_tc=tc, condition_count=2, mix=True,
    )
    fc.save_forecaster(tmp_path / "q", model)
    loaded = fc.load_forecaster(tmp_path / "q")
    probe = tokens[:, :20]
    probe_tc = np.zeros(20, dtype=int)
    assert np.array_equal(
        model.logits_values(probe, probe_tc), loaded.logits_values(probe, probe_tc)
    )
    assert loaded.norm is not None
    assert np.array_equal(loaded.norm.maxabs, model.norm.maxabs)


def test_checkpoint_rejects_foreign_manifest(tmp_path):
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "manifest.json").write_text('{"format": "something-else"}')
    with pytest.raises(FormatError):
        fc.load_forecaster(tmp_path / "bad")

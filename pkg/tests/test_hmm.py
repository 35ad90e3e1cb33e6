import itertools
import json

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from nkt import hmm, sim
from nkt.core import MultichannelSeries
from nkt.errors import FormatError, RangeError, ShapeError


def _series(data, fs=250.0):
    return MultichannelSeries(np.atleast_2d(np.asarray(data, dtype=np.float64)), fs)


def _two_regime(rng, n_runs=20, lo=150, hi=250, sep=10.0):
    lengths = rng.integers(lo, hi, size=n_runs)
    states = np.repeat(np.arange(n_runs) % 2, lengths)
    x = rng.standard_normal(states.size) + sep * states
    return _series(x), states


# ---------------------------------------------------------------- tde_embed


def test_tde_identity_for_single_lag():
    rng = np.random.default_rng(0)
    series = _series(rng.standard_normal((2, 50)))
    out = hmm.tde_embed(series, lags=1)
    assert np.array_equal(out.data, series.data)


def test_tde_shapes_and_content():
    series = _series(np.arange(20.0))
    out = hmm.tde_embed(series, lags=5)
    assert out.data.shape == (5, 16)
    # row j of the block holds samples offset by j from the window start
    for j in range(5):
        assert np.array_equal(out.data[j], np.arange(j, j + 16.0))


def test_tde_constant_series():
    out = hmm.tde_embed(_series(np.full(40, 3.3)), lags=15)
    assert np.all(out.data == 3.3)
    assert out.data.shape == (15, 26)


def test_tde_sinusoid_rank_two():
    t = np.arange(5_000) / 250.0
    series = _series(np.sin(2 * np.pi * 10.0 * t))
    emb = hmm.tde_embed(series, lags=15)
    ev = np.linalg.eigvalsh(np.cov(emb.data, ddof=1))[::-1]
    assert ev[2] / ev[0] < 1e-6


def test_tde_validation():
    with pytest.raises(ShapeError):
        hmm.tde_embed(_series(np.zeros(10)), lags=10)
    with pytest.raises(RangeError):
        hmm.tde_embed(_series(np.zeros(10)), lags=0)


# ------------------------------------------------------------------ fitting


def test_fit_hmm_single_state_closed_form():
    rng = np.random.default_rng(1)
    data = 0.01 * rng.standard_normal((2, 5_000))  # tiny scale keeps reg << 1e-8
    series = _series(data)
    model = hmm.fit_hmm(series, k=1, seed=2, restarts=1)
    assert np.max(np.abs(model.means[0] - data.mean(axis=1))) < 1e-8
    sample_cov = np.cov(data, ddof=0)
    assert np.max(np.abs(model.covariances[0] - sample_cov)) < 1e-8
    direct = multivariate_normal.logpdf(
        data.T, mean=model.means[0], cov=model.covariances[0]
    ).sum()
    assert abs(model.loglik_history[-1] - direct) < 1e-6 * abs(direct)


def test_fit_hmm_recovers_separated_regimes():
    rng = np.random.default_rng(3)
    series, truth = _two_regime(rng)
    model = hmm.fit_hmm(series, k=2, seed=4)
    path = hmm.viterbi(model, series)
    best = max(
        np.mean(np.array(perm)[truth] == path)
        for perm in itertools.permutations(range(2))
    )
    assert best >= 0.99
    # slow switching shows up as a sticky transition matrix
    assert np.min(np.diag(model.transition)) > 0.9


def test_fit_hmm_loglik_monotone():
    rng = np.random.default_rng(5)
    series, _ = _two_regime(rng, sep=1.5)
    model = hmm.fit_hmm(series, k=2, seed=6, max_iters=40)
    diffs = np.diff(model.loglik_history)
    assert np.min(diffs) > -1e-8


def test_fit_hmm_fixed_point_on_refit():
    rng = np.random.default_rng(7)
    series, _ = _two_regime(rng)
    model = hmm.fit_hmm(series, k=2, seed=8)
    resumed = hmm.fit_hmm(series, k=2, seed=8, init=model, max_iters=5)
    drift = np.abs(np.array(resumed.loglik_history) - model.loglik_history[-1])
    assert np.max(drift) < 1e-6 * abs(model.loglik_history[-1])


def test_fit_hmm_small_sample_warning_and_k_validation():
    series = _series(np.random.default_rng(9).standard_normal(15))
    with pytest.warns(UserWarning):
        hmm.fit_hmm(series, k=2, seed=0, max_iters=2, restarts=1)
    with pytest.raises(RangeError):
        hmm.fit_hmm(series, k=0)


def test_fit_hmm_tde_pca_front_end():
    rng = np.random.default_rng(10)
    series, truth = _two_regime(rng)
    model = hmm.fit_hmm(series, k=2, seed=11, tde_lags=5, pca_dim=3)
    assert model.tde_lags == 5
    assert model.pca is not None
    assert model.dim == 3
    path = hmm.viterbi(model, series)
    assert path.size == series.timesteps - 4
    trimmed = truth[2:-2]
    best = max(
        np.mean(np.array(perm)[trimmed] == path)
        for perm in itertools.permutations(range(2))
    )
    assert best >= 0.95


def test_pca_dim_clamped_to_rank():
    rng = np.random.default_rng(12)
    x = rng.standard_normal(3_000)
    series = _series(np.stack([x, x, -x]))  # rank-1 channel space
    model = hmm.fit_hmm(series, k=1, seed=0, pca_dim=3, restarts=1)
    assert model.dim == 1


def test_state_marginals_rows_sum_to_one():
    rng = np.random.default_rng(13)
    series, _ = _two_regime(rng)
    model = hmm.fit_hmm(series, k=2, seed=14)
    gamma, loglik = hmm.state_marginals(model, series)
    assert gamma.shape == (series.timesteps, 2)
    assert np.max(np.abs(gamma.sum(axis=1) - 1.0)) < 1e-8
    assert abs(loglik - model.loglik_history[-1]) < 1e-6 * abs(loglik)


def test_model_validation():
    eye = np.eye(2)
    with pytest.raises(RangeError):
        hmm.HMMModel(2, np.array([0.7, 0.7]), eye, np.zeros((2, 1)), np.ones((2, 1, 1)))
    with pytest.raises(ShapeError):
        hmm.HMMModel(2, np.array([0.5, 0.5]), eye, np.zeros((3, 1)), np.ones((3, 1, 1)))


# ------------------------------------------------------------------ viterbi


def test_viterbi_single_state_constant():
    series = _series(np.random.default_rng(15).standard_normal(100))
    model = hmm.fit_hmm(series, k=1, seed=0, restarts=1)
    assert np.all(hmm.viterbi(model, series) == 0)


def test_viterbi_identity_transitions_pick_argmax_pi():
    mean = np.zeros((2, 1))
    cov = np.ones((2, 1, 1))
    model = hmm.HMMModel(2, np.array([0.3, 0.7]), np.eye(2), mean, cov)
    series = _series(np.random.default_rng(16).standard_normal(50))
    assert np.all(hmm.viterbi(model, series) == 1)


def test_viterbi_matches_exhaustive_search():
    rng = np.random.default_rng(17)
    k, T = 3, 8
    pi = rng.dirichlet(np.ones(k))
    A = rng.dirichlet(np.ones(k), size=k)
    means = rng.standard_normal((k, 2)) * 2.0
    covs = np.stack([np.eye(2) * s for s in rng.uniform(0.5, 2.0, k)])
    model = hmm.HMMModel(k, pi, A, means, covs)
    obs = rng.standard_normal((T, 2)) * 2.0
    series = MultichannelSeries(obs.T, 250.0)

    log_b = np.stack(
        [multivariate_normal.logpdf(obs, mean=means[i], cov=covs[i]) for i in range(k)],
        axis=1,
    )
    log_pi, log_A = np.log(pi), np.log(A)
    best_lp = -np.inf
    for path in itertools.product(range(k), repeat=T):
        lp = log_pi[path[0]] + log_b[0, path[0]]
        for t in range(1, T):
            lp += log_A[path[t - 1], path[t]] + log_b[t, path[t]]
        best_lp = max(best_lp, lp)

    vit = hmm.viterbi(model, series)
    lp = log_pi[vit[0]] + log_b[0, vit[0]]
    for t in range(1, T):
        lp += log_A[vit[t - 1], vit[t]] + log_b[t, vit[t]]
    assert abs(lp - best_lp) < 1e-10


def test_viterbi_dimension_mismatch():
    model = hmm.HMMModel(
        1, np.array([1.0]), np.eye(1), np.zeros((1, 2)), np.stack([np.eye(2)])
    )
    with pytest.raises(ShapeError):
        hmm.viterbi(model, _series(np.zeros((3, 10))))


# ----------------------------------------------------------------- statistics


def test_state_statistics_hand_oracle():
    stats = hmm.state_statistics([0, 0, 1, 1], fs=1.0)
    assert np.allclose(stats.occupancy, [0.5, 0.5])
    assert np.allclose(stats.lifetime_s, [2.0, 2.0])
    assert np.allclose(stats.switching_rate_hz, [0.25, 0.25])
    assert np.all(np.isnan(stats.interval_s))


def test_state_statistics_constant_path():
    stats = hmm.state_statistics(np.zeros(500, dtype=int), fs=250.0)
    assert stats.occupancy[0] == 1.0
    assert stats.lifetime_s[0] == pytest.approx(2.0)
    assert np.isnan(stats.interval_s[0])
    assert stats.switching_rate_hz[0] == pytest.approx(0.5)


def test_state_statistics_unvisited_state():
    stats = hmm.state_statistics([0, 0, 0], fs=1.0, k=3)
    assert stats.occupancy[2] == 0.0
    assert np.isnan(stats.lifetime_s[2])
    assert np.isnan(stats.switching_rate_hz[2])


def test_state_statistics_interval_is_onset_to_onset():
    # onsets of state 0 at samples 0 and 6: interval 6 samples
    stats = hmm.state_statistics([0, 0, 1, 1, 1, 1, 0, 0], fs=2.0)
    assert stats.interval_s[0] == pytest.approx(3.0)


def test_state_statistics_identities():
    rng = np.random.default_rng(18)
    path = rng.integers(0, 4, size=3_000)
    stats = hmm.state_statistics(path, fs=100.0)
    assert abs(stats.occupancy.sum() - 1.0) < 1e-10
    duration = path.size / 100.0
    visits = stats.switching_rate_hz * duration
    recon = visits * stats.lifetime_s / duration
    assert np.allclose(recon, stats.occupancy, atol=1e-10)


def test_state_statistics_sim_lifetimes_match_gamma_mean():
    spec = sim.SimSpec(
        frequencies=[10.0, 20.0],
        transition=np.array([[0.0, 1.0], [1.0, 0.0]]),
        ar_noise_std=[0.9, 0.9],
        obs_noise_std=0.0,
        duration=750_000,
        fs=250.0,
    )
    states = sim.sample_state_timecourse(spec, seed=19)
    stats = hmm.state_statistics(states, fs=250.0)
    expected = 10.0 * 10.0 / 1000.0  # gamma mean in seconds
    assert np.all(np.abs(stats.lifetime_s - expected) < 0.05 * expected)


def test_state_statistics_validation():
    with pytest.raises(ShapeError):
        hmm.state_statistics([], fs=1.0)
    with pytest.raises(RangeError):
        hmm.state_statistics([0], fs=0.0)


# ------------------------------------------------------------------ state_psd


def test_state_psd_matches_welch_for_single_state():
    from nkt import specanalysis as sa

    rng = np.random.default_rng(20)
    series = _series(rng.standard_normal((2, 10_000)))
    out = hmm.state_psd(series, np.zeros(10_000, dtype=int), seg_len=500)
    ref = sa.welch_psd(series, seg_len=500)
    assert np.allclose(out.power[0], ref.power, atol=1e-12)
    assert np.array_equal(out.freqs, ref.freqs)


def test_state_psd_peaks_at_generating_frequency():
    spec = sim.SimSpec(
        frequencies=[10.0, 30.0],
        transition=np.array([[0.0, 1.0], [1.0, 0.0]]),
        ar_noise_std=[0.9, 0.9],
        obs_noise_std=0.1,
        duration=30_000,
        fs=250.0,
        lifetime_scale_ms=100.0,
    )
    series, states = sim.simulate(spec, seed=21)
    out = hmm.state_psd(series, states, seg_len=250)
    df = out.freqs[1] - out.freqs[0]
    for state, f_true in ((0, 10.0), (1, 30.0)):
        peak = out.freqs[np.argmax(out.power[state, 0])]
        assert abs(peak - f_true) <= df + 1e-9
    assert np.all(out.skipped_segments > 0)  # short gamma lifetimes get skipped


def test_state_psd_white_noise_flat_and_state_agreement():
    rng = np.random.default_rng(22)
    T = 100_000
    series = _series(rng.standard_normal(T))
    states = (np.arange(T) // 1_000) % 2
    out = hmm.state_psd(series, states, seg_len=128)
    # DC and Nyquist carry half the one-sided density, so flatness is an
    # interior-bin property
    for s in range(2):
        p = out.power[s, 0, 1:-1]
        assert p.max() / p.min() < 2.0  # flat within 3 dB
    ratio = out.power[0, 0, 1:-1] / out.power[1, 0, 1:-1]
    assert np.max(ratio) < 1.5 and np.min(ratio) > 1 / 1.5


def test_state_psd_unusable_state_is_nan():
    rng = np.random.default_rng(23)
    series = _series(rng.standard_normal(1_000))
    states = np.zeros(1_000, dtype=int)
    states[500:510] = 1  # only a 10-sample visit
    out = hmm.state_psd(series, states, seg_len=256)
    assert np.all(np.isnan(out.power[1]))
    assert out.used_segments[1] == 0
    assert out.skipped_segments[1] == 1


def test_state_psd_alignment_guard():
    series = _series(np.zeros(100))
    with pytest.raises(ShapeError):
        hmm.state_psd(series, np.zeros(99, dtype=int))


# ------------------------------------------------- evoked state timecourses


def test_evoked_state_fixed_state_is_one():
    tc = np.ones(1_000, dtype=int)
    out = hmm.evoked_state_timecourse(tc, onsets=[100, 300, 500], window=[0, 50], fs=250.0)
    assert out.shape == (2, 50)
    assert np.all(out[1] == 1.0)
    assert np.all(out[0] == 0.0)


def test_evoked_state_condition_locked_switch():
    T = 5_000
    onsets = [500, 1_500, 2_500, 3_500]
    tc = np.zeros(T, dtype=int)
    for onset in onsets:
        tc[onset + 25 : onset + 200] = 1
    out = hmm.evoked_state_timecourse(tc, onsets, window=[0, 100], fs=250.0)
    crossing = int(np.argmax(out[1] > 0.5))
    assert abs(crossing - 25) <= 1
    assert np.max(np.abs(out.sum(axis=0) - 1.0)) < 1e-10


def test_evoked_state_posterior_input_and_errors():
    post = np.vstack([np.linspace(1, 0, 100), np.linspace(0, 1, 100)])
    out = hmm.evoked_state_timecourse(post, onsets=[10, 50], window=[0, 20], fs=100.0)
    assert out.shape == (2, 20)
    with pytest.raises(ShapeError):
        hmm.evoked_state_timecourse(np.zeros(100, dtype=int), [], [0, 10], fs=100.0)


# -------------------------------------------------------------- serialization


def test_hmm_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(24)
    series, _ = _two_regime(rng)
    model = hmm.fit_hmm(series, k=2, seed=25, tde_lags=3, pca_dim=2)
    path = str(tmp_path / "model.json")
    hmm.save_hmm(model, path)
    loaded = hmm.load_hmm(path)
    assert loaded.k == model.k
    assert np.array_equal(loaded.pi, model.pi)
    assert np.array_equal(loaded.transition, model.transition)
    assert np.array_equal(loaded.means, model.means)
    assert np.array_equal(loaded.covariances, model.covariances)
    assert loaded.tde_lags == 3
    assert np.array_equal(loaded.pca.basis, model.pca.basis)
    assert np.array_equal(
        hmm.viterbi(loaded, series), hmm.viterbi(model, series)
    )


def test_hmm_load_rejects_other_json(tmp_path):
    path = str(tmp_path / "other.json")
    with open(path, "w") as fh:
        json.dump({"format": "something-else"}, fh)
    with pytest.raises(FormatError):
        hmm.load_hmm(path)

"""Gaussian-observation hidden Markov models.

Baum-Welch fitting with scaled forward-backward recursions, Viterbi
decoding, an optional time-delay-embedding front end, and the state
summary statistics used to compare real against generated signals.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.signal import windows as sp_windows

from .core import MultichannelSeries, _read_only, epoch
from .errors import NumericsError, RangeError, ShapeError
from .linmodels import PCAProjection, fit_pca, pca_project

__all__ = [
    "HMMModel",
    "StateStats",
    "StatePSD",
    "tde_embed",
    "fit_hmm",
    "viterbi",
    "state_marginals",
    "state_statistics",
    "state_psd",
    "evoked_state_timecourse",
    "save_hmm",
    "load_hmm",
]


@dataclass(frozen=True)
class HMMModel:
    """K-state HMM with Gaussian emissions.

    pi is the initial distribution, transition the K x K row-stochastic
    matrix, means (K, D) and covariances (K, D, D) the emission
    parameters. tde_lags and pca describe the observation front end the
    model was fitted on; they are re-applied when decoding new series.
    loglik_history records the training log-likelihood per EM iteration
    of the winning restart.
    """

    k: int
    pi: np.ndarray
    transition: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    tde_lags: int | None = None
    pca: PCAProjection | None = None
    loglik_history: tuple = ()

    def __post_init__(self):
        pi = _read_only(self.pi)
        A = _read_only(self.transition)
        means = _read_only(self.means)
        covs = _read_only(self.covariances)
        if pi.shape != (self.k,) or A.shape != (self.k, self.k):
            raise ShapeError("pi must be (K,) and transition (K, K)")
        d = means.shape[1] if means.ndim == 2 else -1
        if means.shape != (self.k, d) or covs.shape != (self.k, d, d):
            raise ShapeError("means must be (K, D) and covariances (K, D, D)")
        if abs(pi.sum() - 1.0) > 1e-10 or np.max(np.abs(A.sum(axis=1) - 1.0)) > 1e-10:
            raise RangeError("pi and transition rows must sum to 1")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "transition", A)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class StateStats:
    """Per-state summaries of a state timecourse.

    occupancy sums to 1; lifetime and interval are in seconds, the
    switching rate in visit onsets per second. Unvisited states carry
    occupancy 0 and NaN elsewhere.
    """

    occupancy: np.ndarray
    lifetime_s: np.ndarray
    interval_s: np.ndarray
    switching_rate_hz: np.ndarray


@dataclass(frozen=True)
class StatePSD:
    """Welch spectra over same-state segments.

    power is (K, C, F); NaN rows mark states with no segment at least
    one Welch window long. skipped counts the too-short segments.
    """

    freqs: np.ndarray
    power: np.ndarray
    used_segments: np.ndarray
    skipped_segments: np.ndarray


def tde_embed(series: MultichannelSeries, lags: int = 15) -> MultichannelSeries:
    """Stack a symmetric window of lagged copies of every channel.

    Each output timepoint t carries the samples t - h .. t + (lags-1-h)
    of every channel, h = (lags-1)//2, so lags=15 spans t +/- 7. Output
    is (C * lags, T - lags + 1); channel blocks are contiguous with lag
    offsets increasing inside each block.
    """
    if lags < 1:
        raise RangeError("lags must be >= 1")
    c, T = series.data.shape
    if T <= lags:
        raise ShapeError(f"series length {T} too short for {lags} lags")
    t_out = T - lags + 1
    rows = np.empty((c * lags, t_out))
    for ch in range(c):
        for j in range(lags):
            rows[ch * lags + j] = series.data[ch, j : j + t_out]
    return MultichannelSeries(rows, series.fs)


def _prepare(series: MultichannelSeries, tde_lags, pca) -> np.ndarray:
    """Series -> (T', D) observation matrix through the model front end."""
    if tde_lags is not None and tde_lags > 1:
        series = tde_embed(series, tde_lags)
    obs = series.data.T
    if pca is not None:
        obs = pca_project(pca, obs)
    return obs


def _log_gaussian(obs: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = mean.shape[0]
    chol = np.linalg.cholesky(cov)
    diff = obs - mean
    z = solve_triangular(chol, diff.T, lower=True)
    maha = np.sum(z**2, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + maha)


def _emission_loglik(obs: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    k = means.shape[0]
    out = np.empty((obs.shape[0], k))
    for i in range(k):
        out[:, i] = _log_gaussian(obs, means[i], covs[i])
    return out


def _forward_backward(log_b: np.ndarray, pi: np.ndarray, A: np.ndarray):
    """Scaled alpha/beta recursions.

    Returns per-timepoint posteriors gamma (T, K), the summed pairwise
    posteriors xi (K, K), and the total log-likelihood.
    """
    T, k = log_b.shape
    shift = log_b.max(axis=1)
    b = np.exp(log_b - shift[:, None])
    alpha = np.empty((T, k))
    scale = np.empty(T)
    a = pi * b[0]
    s = a.sum()
    if not np.isfinite(s) or s <= 0:
        raise NumericsError("forward pass underflowed at t=0")
    alpha[0] = a / s
    scale[0] = s
    for t in range(1, T):
        a = (alpha[t - 1] @ A) * b[t]
        s = a.sum()
        if not np.isfinite(s) or s <= 0:
            raise NumericsError(f"forward pass underflowed at t={t}")
        alpha[t] = a / s
        scale[t] = s
    loglik = float(np.log(scale).sum() + shift.sum())
    beta_t = np.ones(k)
    gamma = np.empty((T, k))
    gamma[-1] = alpha[-1]
    xi_sum = np.zeros((k, k))
    for t in range(T - 2, -1, -1):
        bb = b[t + 1] * beta_t
        xi_sum += alpha[t][:, None] * A * bb[None, :] / scale[t + 1]
        beta_t = (A @ bb) / scale[t + 1]
        gamma[t] = alpha[t] * beta_t
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma, xi_sum, loglik


def _kmeans_init(obs: np.ndarray, k: int, rng: np.random.Generator):
    """Seeded Lloyd iterations for initial means and assignments."""
    T = obs.shape[0]
    centroids = obs[rng.choice(T, size=k, replace=False)].copy()
    assign = np.zeros(T, dtype=np.int64)
    for _ in range(10):
        d2 = ((obs[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        for i in range(k):
            sel = assign == i
            if sel.any():
                centroids[i] = obs[sel].mean(axis=0)
            else:
                centroids[i] = obs[rng.integers(T)]
    return centroids, assign


def _em_run(obs, k, max_iters, rng, tol, reg, init_params=None):
    T, d = obs.shape
    global_cov = np.cov(obs, rowvar=False, ddof=0).reshape(d, d)
    if init_params is None:
        means, assign = _kmeans_init(obs, k, rng)
        covs = np.empty((k, d, d))
        for i in range(k):
            sel = assign == i
            covs[i] = (
                np.cov(obs[sel], rowvar=False, ddof=0).reshape(d, d)
                if sel.sum() > d
                else global_cov
            ) + reg * np.eye(d)
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        pi = counts / counts.sum()
        A = np.full((k, k), 0.1 / max(k - 1, 1))
        np.fill_diagonal(A, 0.9 if k > 1 else 1.0)
    else:
        pi, A, means, covs = (np.array(p) for p in init_params)

    history = []
    for _ in range(max_iters):
        log_b = _emission_loglik(obs, means, covs)
        gamma, xi_sum, loglik = _forward_backward(log_b, pi, A)
        if not np.isfinite(loglik):
            raise NumericsError("log-likelihood became non-finite during EM")
        history.append(loglik)
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
            break
        nk = gamma.sum(axis=0)
        pi = gamma[0] / gamma[0].sum()
        if k > 1:
            rows = xi_sum.sum(axis=1, keepdims=True)
            A = np.where(rows > 0, xi_sum / np.where(rows > 0, rows, 1.0), 1.0 / k)
        for i in range(k):
            if nk[i] < 1e-10:
                means[i] = obs[rng.integers(T)]
                covs[i] = global_cov + reg * np.eye(d)
                continue
            means[i] = gamma[:, i] @ obs / nk[i]
            diff = obs - means[i]
            covs[i] = (gamma[:, i][:, None] * diff).T @ diff / nk[i] + reg * np.eye(d)
    return pi, A, means, covs, history


def fit_hmm(
    series: MultichannelSeries,
    k: int,
    max_iters: int = 100,
    seed: int = 0,
    tde_lags: int | None = None,
    pca_dim: int | None = None,
    restarts: int = 3,
    tol: float = 1e-6,
    init: HMMModel | None = None,
) -> HMMModel:
    """Fit a K-state Gaussian HMM by EM, keeping the best of `restarts`.

    Covariances are regularized with eps * I, eps = 1e-6 times the mean
    per-dimension variance of the observations. tde_lags applies a
    time-delay embedding first; pca_dim then projects to at most that
    many principal components (clamped to the numerical rank). Passing
    init resumes EM from an existing model's parameters (single run,
    front-end settings inherited).
    """
    if k < 1:
        raise RangeError("need at least one state")
    if init is not None:
        tde_lags, pca = init.tde_lags, init.pca
        obs = _prepare(series, tde_lags, pca)
        reg = 1e-6 * float(np.mean(np.var(obs, axis=0)))
        pi, A, means, covs, history = _em_run(
            obs,
            k,
            max_iters,
            np.random.default_rng(seed),
            tol,
            reg,
            init_params=(init.pi, init.transition, init.means, init.covariances),
        )
        return HMMModel(k, pi, A, means, covs, tde_lags, pca, tuple(history))

    pca = None
    if pca_dim is not None:
        probe = tde_embed(series, tde_lags) if tde_lags and tde_lags > 1 else series
        X = probe.data.T
        full = fit_pca(X)
        tol_rank = (
            max(X.shape) * np.finfo(np.float64).eps * max(float(full.eigenvalues.max()), 0.0)
        )
        rank = int(np.sum(full.eigenvalues > tol_rank))
        d = min(pca_dim, max(rank, 1))
        pca = PCAProjection(
            full.basis[:, :d],
            full.eigenvalues[:d],
            full.mean,
            full.explained_fraction[:d],
            rank < d,
        )
    obs = _prepare(series, tde_lags, pca)
    if obs.shape[0] < 10 * k * obs.shape[1]:
        warnings.warn(
            f"{obs.shape[0]} samples is small for {k} states in {obs.shape[1]}-d",
            stacklevel=2,
        )
    reg = 1e-6 * float(np.mean(np.var(obs, axis=0)))
    seeds = np.random.SeedSequence(seed).spawn(max(restarts, 1))
    best = None
    for ss in seeds:
        pi, A, means, covs, history = _em_run(
            obs, k, max_iters, np.random.default_rng(ss), tol, reg
        )
        if best is None or history[-1] > best[-1][-1]:
            best = (pi, A, means, covs, history)
    pi, A, means, covs, history = best
    return HMMModel(k, pi, A, means, covs, tde_lags, pca, tuple(history))


def state_marginals(model: HMMModel, series: MultichannelSeries):
    """Posterior state probabilities gamma (T', K) and the log-likelihood."""
    obs = _prepare(series, model.tde_lags, model.pca)
    if obs.shape[1] != model.dim:
        raise ShapeError(f"observations are {obs.shape[1]}-d, model expects {model.dim}")
    log_b = _emission_loglik(obs, model.means, model.covariances)
    gamma, _, loglik = _forward_backward(log_b, model.pi, model.transition)
    return gamma, loglik


def viterbi(model: HMMModel, series: MultichannelSeries) -> np.ndarray:
    """Most probable state path in log space, lowest index on ties."""
    obs = _prepare(series, model.tde_lags, model.pca)
    if obs.shape[1] != model.dim:
        raise ShapeError(f"observations are {obs.shape[1]}-d, model expects {model.dim}")
    log_b = _emission_loglik(obs, model.means, model.covariances)
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.pi)
        log_A = np.log(model.transition)
    T, k = log_b.shape
    delta = log_pi + log_b[0]
    back = np.empty((T, k), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + log_A
        back[t] = np.argmax(scores, axis=0)
        delta = scores[back[t], np.arange(k)] + log_b[t]
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def _runs(state_tc: np.ndarray):
    """Run-length encoding: (state, start, length) per visit."""
    state_tc = np.asarray(state_tc)
    bounds = np.concatenate(([0], np.flatnonzero(np.diff(state_tc)) + 1, [len(state_tc)]))
    return [
        (int(state_tc[a]), int(a), int(b - a)) for a, b in zip(bounds[:-1], bounds[1:])
    ]


def state_statistics(state_tc, fs: float, k: int | None = None) -> StateStats:
    """Occupancy, mean lifetime, mean onset-to-onset interval, and
    switching rate of each state.

    The first sample of the timecourse counts as a visit onset. States
    never visited get occupancy 0 and NaN for the other statistics.
    """
    state_tc = np.asarray(state_tc, dtype=np.int64)
    if state_tc.size == 0:
        raise ShapeError("empty state timecourse")
    if fs <= 0:
        raise RangeError("fs must be positive")
    if k is None:
        k = int(state_tc.max()) + 1
    T = state_tc.size
    occupancy = np.bincount(state_tc, minlength=k).astype(np.float64) / T
    lifetime = np.full(k, np.nan)
    interval = np.full(k, np.nan)
    switching = np.full(k, np.nan)
    visits = _runs(state_tc)
    duration_s = T / fs
    for i in range(k):
        mine = [(start, length) for s, start, length in visits if s == i]
        if not mine:
            continue
        lengths = np.array([length for _, length in mine], dtype=np.float64)
        onsets = np.array([start for start, _ in mine], dtype=np.float64)
        lifetime[i] = lengths.mean() / fs
        switching[i] = len(mine) / duration_s
        if len(mine) > 1:
            interval[i] = np.diff(onsets).mean() / fs
    return StateStats(occupancy, lifetime, interval, switching)


def state_psd(
    series: MultichannelSeries,
    state_tc,
    k: int | None = None,
    seg_len: int | None = None,
    overlap: float = 0.5,
) -> StatePSD:
    """Welch PSD over the segments assigned to each state.

    Every same-state run at least seg_len samples long contributes its
    Hann-windowed 50%-overlapping frames to that state's average;
    shorter runs are skipped and counted. A state with no usable run
    gets a NaN spectrum.
    """
    state_tc = np.asarray(state_tc, dtype=np.int64)
    if state_tc.size != series.timesteps:
        raise ShapeError("state timecourse must align with the series")
    if seg_len is None:
        seg_len = int(2 * series.fs)
    seg_len = int(seg_len)
    if k is None:
        k = int(state_tc.max()) + 1
    step = max(int(seg_len * (1.0 - overlap)), 1)
    win = sp_windows.hann(seg_len, sym=False)
    scale = 1.0 / (series.fs * np.sum(win**2))
    freqs = np.fft.rfftfreq(seg_len, 1.0 / series.fs)
    C = series.channels
    power = np.full((k, C, freqs.size), np.nan)
    used = np.zeros(k, dtype=np.int64)
    skipped = np.zeros(k, dtype=np.int64)
    accum = np.zeros((k, C, freqs.size))
    frames_per_state = np.zeros(k, dtype=np.int64)
    for state, start, length in _runs(state_tc):
        if length < seg_len:
            skipped[state] += 1
            continue
        used[state] += 1
        for s in range(start, start + length - seg_len + 1, step):
            frame = series.data[:, s : s + seg_len] * win
            spec = np.abs(np.fft.rfft(frame, axis=-1)) ** 2 * scale
            spec[:, 1:] *= 2.0
            if seg_len % 2 == 0:
                spec[:, -1] /= 2.0
            accum[state] += spec
            frames_per_state[state] += 1
    for i in range(k):
        if frames_per_state[i] > 0:
            power[i] = accum[i] / frames_per_state[i]
    return StatePSD(freqs, power, used, skipped)


def evoked_state_timecourse(states, onsets, window, fs: float, k: int | None = None):
    """Trial-averaged state activation around the given onsets.

    states is a 1-D Viterbi path (converted to one-hot) or a (K, T)
    posterior matrix. Returns (K, window length); with one-hot input
    each column sums to 1.
    """
    states = np.asarray(states)
    if states.ndim == 1:
        if k is None:
            k = int(states.max()) + 1
        onehot = np.zeros((k, states.size))
        onehot[states.astype(np.int64), np.arange(states.size)] = 1.0
    elif states.ndim == 2:
        onehot = states.astype(np.float64)
    else:
        raise ShapeError("states must be a path (T,) or posteriors (K, T)")
    if len(onsets) == 0:
        raise ShapeError("need at least one trial onset")
    series = MultichannelSeries(onehot, fs)
    ds = epoch(series, onsets, window, labels=np.zeros(len(onsets), dtype=np.int64))
    return ds.trials.mean(axis=0)


def save_hmm(model: HMMModel, path: str) -> None:
    """Serialize a model to JSON (arrays as nested lists)."""
    payload = {
        "format": "nkt-hmm-1",
        "k": model.k,
        "pi": model.pi.tolist(),
        "transition": model.transition.tolist(),
        "means": model.means.tolist(),
        "covariances": model.covariances.tolist(),
        "tde_lags": model.tde_lags,
        "loglik_history": list(model.loglik_history),
        "pca": None
        if model.pca is None
        else {
            "basis": model.pca.basis.tolist(),
            "eigenvalues": model.pca.eigenvalues.tolist(),
            "mean": model.pca.mean.tolist(),
            "explained_fraction": model.pca.explained_fraction.tolist(),
            "rank_deficient": bool(model.pca.rank_deficient),
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_hmm(path: str) -> HMMModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "nkt-hmm-1":
        from .errors import FormatError

        raise FormatError(f"not an HMM file: {path}")
    pca = None
    if payload["pca"] is not None:
        p = payload["pca"]
        pca = PCAProjection(
            np.array(p["basis"]),
            np.array(p["eigenvalues"]),
            np.array(p["mean"]),
            np.array(p["explained_fraction"]),
            bool(p["rank_deficient"]),
        )
    return HMMModel(
        payload["k"],
        np.array(payload["pi"]),
        np.array(payload["transition"]),
        np.array(payload["means"]),
        np.array(payload["covariances"]),
        payload["tde_lags"],
        pca,
        tuple(payload["loglik_history"]),
    )

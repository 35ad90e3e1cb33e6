"""Synthetic benchmark scenarios shared by the reproduction suite.

Every builder is a pure function of its parameters and a seed, so the
reproduction checks and the command-line `repro` runs are bit-for-bit
repeatable. Builders only construct data and specs; the checks that
consume them live in repro.py.
"""

from __future__ import annotations

import numpy as np

from .core import EpochedDataset, MultichannelSeries
from .sim import SimSpec, render, sample_state_timecourse, simulate

__all__ = [
    "EIGHT_STATE_FREQS",
    "TWELVE_STATE_FREQS",
    "multistate_spec",
    "render_stacked",
    "standardize_by_train",
    "low_variance_class_trials",
    "tone_marked_trials",
    "mirrored_subject_trials",
    "burst_condition_series",
]

EIGHT_STATE_FREQS = (10.0, 14.0, 18.0, 22.0, 26.0, 33.0, 38.0, 45.0)
TWELVE_STATE_FREQS = (8.0, 11.0, 14.0, 17.0, 20.0, 23.0, 26.0, 29.0, 35.0, 38.0, 41.0, 45.0)


def multistate_spec(
    frequencies,
    duration_s: float,
    seed,
    fs: float = 250.0,
    snr: float = 1.0,
    probe_s: float = 100.0,
) -> SimSpec:
    """Event-switching spec with randomized transitions and noise levels.

    Transition rows are drawn uniformly with the diagonal zeroed, so an
    expiring event always hands over to a different type and every
    rendered run boundary is a real switch. Innovation stds are drawn
    from U[0.8, 1.0] per event type. The observation noise std is
    calibrated on a short noise-free probe render so that the clean
    signal variance divided by the noise variance equals `snr`.
    """
    frequencies = tuple(float(f) for f in frequencies)
    k = len(frequencies)
    rng = np.random.default_rng(seed)
    transition = rng.uniform(size=(k, k))
    np.fill_diagonal(transition, 0.0)
    transition /= transition.sum(axis=1, keepdims=True)
    ar_noise = tuple(rng.uniform(0.8, 1.0, size=k))
    probe_spec = SimSpec(
        frequencies, transition, ar_noise, 0.0, duration=int(probe_s * fs), fs=fs
    )
    probe, _ = simulate(probe_spec, [int(1e6), _seed_int(seed)])
    obs_noise = float(probe.data.std()) / np.sqrt(snr)
    return SimSpec(
        frequencies, transition, ar_noise, obs_noise, duration=int(duration_s * fs), fs=fs
    )


def _seed_int(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


def render_stacked(spec: SimSpec, channels: int, seed):
    """Render `channels` independent observations of one event sequence.

    All channels share the latent state timecourse but use independent
    resonator innovations and observation noise, mimicking several
    sensors that watch the same switching process.

    Returns
    -------
    series : MultichannelSeries, shape (channels, duration)
    state_tc : ndarray of int, the shared event sequence
    """
    children = np.random.SeedSequence(_seed_int(seed)).spawn(channels + 1)
    state_tc = sample_state_timecourse(spec, children[0])
    rows = [render(spec, state_tc, children[1 + c]).data[0] for c in range(channels)]
    return MultichannelSeries(np.stack(rows), spec.fs), state_tc


def standardize_by_train(
    series: MultichannelSeries, train_fraction: float = 0.8
) -> tuple[MultichannelSeries, int]:
    """Z-score every channel using statistics of the leading train split.

    Returns the standardized full series plus the number of training
    samples; the trailing part is the held-out evaluation region. Using
    train statistics on both sides keeps the held-out data untouched by
    its own future.
    """
    t_train = int(series.timesteps * train_fraction)
    head = series.data[:, :t_train]
    mean = head.mean(axis=1, keepdims=True)
    std = head.std(axis=1, keepdims=True)
    std = np.where(std > 0, std, 1.0)
    return MultichannelSeries((series.data - mean) / std, series.fs), t_train


def low_variance_class_trials(
    classes: int = 4,
    trials_per_class: int = 50,
    channels: int = 16,
    timesteps: int = 100,
    fs: float = 250.0,
    signal_window=(25, 50),
    signal_scale: float = 1.2,
    seed=0,
) -> EpochedDataset:
    """Trials whose class signal hides in the lowest-variance direction.

    Background noise is spatially correlated with a steeply decaying
    eigenvalue spectrum. Each class adds its own temporal waveform,
    inside `signal_window` only, along the spatial direction with the
    smallest background variance. Unsupervised variance-ranked
    projections discard that direction first, while a supervised
    reduction can find it.
    """
    rng = np.random.default_rng(seed)
    n = classes * trials_per_class
    basis, _ = np.linalg.qr(rng.standard_normal((channels, channels)))
    scales = np.geomspace(6.0, 0.05, channels)
    noise = rng.standard_normal((n, channels, timesteps))
    colored = np.einsum("cd,d,ndt->nct", basis, scales, noise)
    labels = np.repeat(np.arange(classes), trials_per_class)
    direction = basis[:, -1]
    lo, hi = signal_window
    t = np.arange(hi - lo)
    waves = np.stack(
        [np.sin(2.0 * np.pi * (k + 1) * t / (hi - lo)) for k in range(classes)]
    )
    amp = signal_scale * scales[-1]
    colored[:, :, lo:hi] += amp * direction[None, :, None] * waves[labels][:, None, :]
    order = rng.permutation(n)
    return EpochedDataset(colored[order], labels[order], fs)


def tone_marked_trials(
    trials_per_class: int = 60,
    channels: int = 6,
    timesteps: int = 100,
    fs: float = 250.0,
    tone_freq: float = 10.0,
    tone_window=(25, 50),
    tone_channels=(1, 3),
    tone_amp: float = 1.0,
    seed=0,
) -> EpochedDataset:
    """Two-class trials where class 1 carries a fixed-phase tone.

    The tone occupies `tone_window` samples on `tone_channels` only, so
    importance maps over time, space, and frequency all have a known
    ground truth to localize.
    """
    rng = np.random.default_rng(seed)
    n = 2 * trials_per_class
    trials = rng.standard_normal((n, channels, timesteps))
    labels = np.repeat(np.arange(2), trials_per_class)
    lo, hi = tone_window
    tone = tone_amp * np.sin(2.0 * np.pi * tone_freq * np.arange(lo, hi) / fs)
    for c in tone_channels:
        trials[labels == 1, c, lo:hi] += tone
    order = rng.permutation(n)
    return EpochedDataset(trials[order], labels[order], fs)


def mirrored_subject_trials(
    trials_per_cell: int = 60,
    channels: int = 8,
    timesteps: int = 64,
    fs: float = 250.0,
    amp: float = 1.0,
    seed=0,
) -> tuple[EpochedDataset, np.ndarray]:
    """Two-subject, two-class set whose class patterns swap across subjects.

    Subject 0 sees template A for class 0 and template B for class 1;
    subject 1 sees the reverse. A model without any notion of subject
    identity faces perfectly contradictory evidence and cannot beat
    chance, while one that can condition on the subject can saturate.

    Returns the dataset and the per-trial subject indices.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(timesteps)
    template_a = np.outer(rng.standard_normal(channels), np.sin(2 * np.pi * 3 * t / timesteps))
    template_b = np.outer(rng.standard_normal(channels), np.sin(2 * np.pi * 5 * t / timesteps))
    trials, labels, subjects = [], [], []
    for subject in (0, 1):
        for label in (0, 1):
            pattern = template_a if (label == subject) else template_b
            block = rng.standard_normal((trials_per_cell, channels, timesteps))
            block += amp * pattern[None]
            trials.append(block)
            labels.extend([label] * trials_per_cell)
            subjects.extend([subject] * trials_per_cell)
    trials = np.concatenate(trials)
    labels = np.array(labels)
    subjects = np.array(subjects)
    order = rng.permutation(trials.shape[0])
    dataset = EpochedDataset(trials[order], labels[order], fs)
    return dataset, subjects[order]


def burst_condition_series(
    n_trials: int,
    trial_len: int = 250,
    frequencies=(10.0, 30.0),
    fs: float = 250.0,
    snr: float = 4.0,
    seed=0,
) -> tuple[MultichannelSeries, np.ndarray, np.ndarray]:
    """Single-channel series of labeled oscillation bursts.

    Each trial is one event of `trial_len` samples whose type is drawn
    uniformly from the given frequencies; the per-sample condition
    timecourse equals the event type. Observation noise is calibrated
    against a noise-free probe at the requested signal-to-noise ratio.

    Returns
    -------
    series : MultichannelSeries (1, n_trials * trial_len)
    condition_tc : ndarray (n_trials * trial_len,) of int
    trial_labels : ndarray (n_trials,) of int
    """
    k = len(frequencies)
    rng = np.random.default_rng(seed)
    labels = rng.integers(k, size=n_trials)
    state_tc = np.repeat(labels, trial_len)
    uniform = np.full((k, k), 1.0 / k)
    probe_spec = SimSpec(
        frequencies, uniform, (1.0,) * k, 0.0, duration=n_trials * trial_len, fs=fs
    )
    children = np.random.SeedSequence(_seed_int(seed)).spawn(2)
    clean = render(probe_spec, state_tc, children[0])
    obs_noise = float(clean.data.std()) / np.sqrt(snr)
    noisy = clean.data + obs_noise * np.random.default_rng(children[1]).standard_normal(
        clean.data.shape
    )
    return MultichannelSeries(noisy, fs), state_tc, labels

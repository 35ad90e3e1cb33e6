"""Spectral and evoked evaluation: Welch PSD, STFT/iSTFT, Morlet wavelets,
covariance, evoked averages and correlations, and frequency-dominance
state extraction.

The STFT here is the one the temporo-spectral feature shuffles reuse, so
its inverse must be exact (overlap-add with window-power normalization).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .core import EpochedDataset, MultichannelSeries
from .errors import ConfigError, FrequencyError, ShapeError

__all__ = [
    "PSDEstimate",
    "Spectrogram",
    "welch_psd",
    "stft",
    "istft",
    "morlet_transform",
    "naive_state_extraction",
    "dominance_fraction",
    "evoked_average",
    "evoked_correlation",
    "covariance",
]


@dataclass(frozen=True)
class PSDEstimate:
    """One-sided power spectral density per channel.

    freqs is the grid in Hz; power has shape (C, F). Estimator metadata
    is kept so grid resolution is always diagnosable.
    """

    freqs: np.ndarray
    power: np.ndarray
    seg_len: int
    overlap: float
    window: str


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT coefficients, shape (C, n_frames, F)."""

    values: np.ndarray
    freqs: np.ndarray
    frame_starts: np.ndarray
    win_len: int
    hop: int
    window: str
    n_samples: int
    fs: float


def welch_psd(
    series: MultichannelSeries,
    seg_len: int | None = None,
    overlap: float = 0.5,
    window: str = "hann",
) -> PSDEstimate:
    """Average windowed periodograms into a one-sided density estimate.

    Defaults: segment length 2 * fs samples, 50% overlap, Hann window.
    No detrending, so DC power stays in the 0 Hz bin.
    """
    if seg_len is None:
        seg_len = int(2 * series.fs)
    seg_len = int(seg_len)
    if seg_len > series.timesteps:
        raise ShapeError(f"seg_len {seg_len} exceeds series length {series.timesteps}")
    freqs, power = sps.welch(
        series.data,
        fs=series.fs,
        window=window,
        nperseg=seg_len,
        noverlap=int(seg_len * overlap),
        detrend=False,
        scaling="density",
        axis=-1,
    )
    return PSDEstimate(freqs, power, seg_len, overlap, window)


def local_maxima_freqs(psd: PSDEstimate, channel: int = 0) -> np.ndarray:
    """Frequencies of strict interior local maxima of one channel's PSD."""
    p = psd.power[channel]
    mask = (p[1:-1] > p[:-2]) & (p[1:-1] >= p[2:])
    return psd.freqs[1:-1][mask]


def _window(name: str, n: int) -> np.ndarray:
    if name == "hann":
        return sps.windows.hann(n, sym=False)
    if name == "hamming":
        return sps.windows.hamming(n, sym=False)
    raise ConfigError(f"unknown window {name!r}")


def stft(
    series: MultichannelSeries, win_len: int, hop: int = 1, window: str = "hamming"
) -> Spectrogram:
    """Short-time Fourier transform with frame starts 0, hop, 2*hop, ...

    Requires 1 <= hop <= win_len <= T so overlap-add inversion covers
    every sample of the analyzed span.
    """
    T = series.timesteps
    if win_len < 1 or win_len > T:
        raise ConfigError(f"win_len {win_len} outside [1, {T}]")
    if hop < 1 or hop > win_len:
        raise ConfigError(f"hop {hop} outside [1, win_len={win_len}]")
    win = _window(window, win_len)
    starts = np.arange(0, T - win_len + 1, hop)
    frames = np.stack([series.data[:, s : s + win_len] for s in starts], axis=1)
    values = np.fft.rfft(frames * win, axis=-1)
    freqs = np.fft.rfftfreq(win_len, 1.0 / series.fs)
    return Spectrogram(values, freqs, starts, win_len, hop, window, T, series.fs)


def istft(spec: Spectrogram) -> MultichannelSeries:
    """Invert stft by overlap-add with window-power normalization.

    Exact (max abs error < 1e-8) on the span the frames cover; samples
    past the last frame cannot be recovered and raise ConfigError if the
    frame grid left a tail uncovered.
    """
    covered = spec.frame_starts[-1] + spec.win_len
    if covered != spec.n_samples:
        raise ConfigError(
            f"frame grid covers {covered} of {spec.n_samples} samples; "
            "choose T, win_len, hop with (T - win_len) % hop == 0"
        )
    win = _window(spec.window, spec.win_len)
    frames = np.fft.irfft(spec.values, n=spec.win_len, axis=-1)
    C = frames.shape[0]
    out = np.zeros((C, spec.n_samples))
    norm = np.zeros(spec.n_samples)
    for i, s in enumerate(spec.frame_starts):
        out[:, s : s + spec.win_len] += frames[:, i] * win
        norm[s : s + spec.win_len] += win**2
    if np.min(norm) <= 1e-12:
        raise ConfigError("window/hop combination leaves samples with zero weight")
    return MultichannelSeries(out / norm, spec.fs)


def morlet_transform(
    series: MultichannelSeries, freqs, cycles: float = 7.0
) -> tuple[np.ndarray, np.ndarray]:
    """Complex Morlet wavelet power, shape (C, F, T).

    Each kernel is a complex exponential under a Gaussian envelope with
    sigma_t = cycles / (2 pi f), normalized by the envelope sum so a
    unit-amplitude tone at the center frequency gives power ~ 1/4 =
    |envelope-weighted phasor|^2 of a half-amplitude analytic signal.

    Returns
    -------
    power : ndarray (C, F, T)
    edge : ndarray (F,) of int
        Per-frequency count of edge samples (one wavelet support) whose
        values are contaminated by the boundary; trim before use.
    """
    fs = series.fs
    freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    for f in freqs:
        if not 0 < f < fs / 2:
            raise FrequencyError(f"wavelet frequency {f} Hz outside (0, {fs / 2})")
    C, T = series.data.shape
    power = np.empty((C, freqs.size, T))
    edge = np.empty(freqs.size, dtype=np.int64)
    for i, f in enumerate(freqs):
        sigma_t = cycles / (2.0 * np.pi * f)
        half = int(np.ceil(4.0 * sigma_t * fs))
        t = np.arange(-half, half + 1) / fs
        envelope = np.exp(-(t**2) / (2.0 * sigma_t**2))
        kernel = envelope * np.exp(2j * np.pi * f * t)
        kernel = kernel / envelope.sum()
        for c in range(C):
            conv = sps.fftconvolve(series.data[c], kernel, mode="same")
            power[c, i] = np.abs(conv) ** 2
        edge[i] = half
    return power, edge


def naive_state_extraction(power: np.ndarray, freqs, candidate_freqs) -> np.ndarray:
    """Per-timepoint argmax over candidate frequency rows of a power array.

    power is (F, T) for one channel (or (C, F, T); channel 0 is used).
    Ties take the lowest candidate index.
    """
    power = np.asarray(power)
    if power.ndim == 3:
        power = power[0]
    freqs = np.asarray(freqs, dtype=np.float64)
    rows = []
    for f in np.atleast_1d(candidate_freqs):
        dist = np.abs(freqs - f)
        j = int(np.argmin(dist))
        if dist[j] > 1e-9:
            raise FrequencyError(f"candidate {f} Hz not on the transform grid")
        rows.append(j)
    return np.argmax(power[rows, :], axis=0)


def dominance_fraction(
    series: MultichannelSeries,
    freqs,
    threshold: float = 2.0,
    cycles: float = 7.0,
    channel: int = 0,
) -> float:
    """Fraction of timesteps where one frequency's wavelet power exceeds
    threshold times every other candidate frequency's power.

    Edge samples (largest wavelet support) are excluded.
    """
    power, edge = morlet_transform(series, freqs, cycles)
    trim = int(edge.max())
    p = power[channel][:, trim : power.shape[2] - trim]
    if p.shape[1] == 0:
        raise ShapeError("series too short for the wavelet support")
    top2 = np.sort(p, axis=0)[-2:, :]
    return float(np.mean(top2[1] > threshold * top2[0]))


def evoked_average(epochs: EpochedDataset, per_condition: bool = False):
    """Across-trial mean and variance (N-1), overall or per condition.

    Returns (mean, var) with shape (C, T), or (means, vars) with shape
    (K, C, T) when per_condition is set. A single trial gives NaN
    variance.
    """

    def stats(trials):
        mean = trials.mean(axis=0)
        if trials.shape[0] < 2:
            var = np.full(mean.shape, np.nan)
        else:
            var = trials.var(axis=0, ddof=1)
        return mean, var

    if not per_condition:
        return stats(epochs.trials)
    means, variances = [], []
    for k in range(epochs.class_count):
        m, v = stats(epochs.trials[epochs.labels == k])
        means.append(m)
        variances.append(v)
    return np.stack(means), np.stack(variances)


def evoked_correlation(
    real: EpochedDataset, generated: EpochedDataset
) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel Pearson correlation of evoked means and variances.

    Compares the trial-averaged timecourse of the two datasets channel
    by channel; a timecourse with zero variance yields NaN.
    """
    if real.channels != generated.channels or real.timesteps != generated.timesteps:
        raise ShapeError("datasets must share channel count and trial length")
    mean_r, var_r = evoked_average(real)
    mean_g, var_g = evoked_average(generated)

    def corr(a, b):
        a = a - a.mean()
        b = b - b.mean()
        denom = np.sqrt((a**2).sum() * (b**2).sum())
        if denom == 0 or not np.isfinite(denom):
            return np.nan
        return float((a * b).sum() / denom)

    mean_corr = np.array([corr(mean_r[c], mean_g[c]) for c in range(real.channels)])
    var_corr = np.array([corr(var_r[c], var_g[c]) for c in range(real.channels)])
    return mean_corr, var_corr


def covariance(series: MultichannelSeries) -> np.ndarray:
    """Sample covariance (N-1) across channels, shape (C, C)."""
    if series.timesteps < 2:
        raise ShapeError("need at least 2 samples for a covariance")
    return np.cov(series.data, ddof=1)

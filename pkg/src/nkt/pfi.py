"""Permutation feature importance for trial classifiers and forecasters.

Importance of a feature window is measured by shuffling its content
across trials while labels stay put, then scoring the accuracy drop of
a trained model. Windows can live in time, across sensors, in the
frequency domain, in the short-time Fourier plane, or in joint
combinations; an inverse flag shuffles everything outside the window
instead. Kernel-level variants score the output deviation of a single
convolution kernel, and an FIR analysis probes a kernel's frequency
response with white noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal as sps
from numpy.lib.stride_tricks import sliding_window_view

from .core import EpochedDataset, MultichannelSeries
from .decoders import LDAModel, predict_lda
from .errors import (
    ConfigError,
    InterfaceError,
    NormalizationError,
    RangeError,
    ShapeError,
)
from .specanalysis import PSDEstimate, welch_psd

__all__ = [
    "FeatureWindow",
    "PfiResult",
    "run_pfi",
    "kernel_pfi",
    "kernel_fir_analysis",
    "nearest_sensor_groups",
]

_KINDS = (
    "temporal",
    "spatial",
    "spatiotemporal",
    "spectral",
    "temporospectral",
    "spatiospectral",
)


@dataclass(frozen=True)
class FeatureWindow:
    """What gets shuffled, and how wide the window is.

    time_ms sets the temporal window length (for temporospectral it is
    the short-time analysis window); sensors sets the spatial group
    size when no explicit groups are supplied; hz sets the frequency
    window width. inverse shuffles the complement of the window.
    smooth extends each temporospectral block to the adjacent time
    frames on either side, matching the smoothed profile variant.
    """

    kind: str
    time_ms: float | None = None
    sensors: int | None = None
    hz: float | None = None
    inverse: bool = False
    smooth: bool = True

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown feature window kind {self.kind!r}")
        if self.time_ms is not None and self.time_ms < 0:
            raise RangeError(f"time_ms must be nonnegative, got {self.time_ms}")
        if self.sensors is not None and self.sensors < 1:
            raise RangeError(f"sensors must be at least 1, got {self.sensors}")
        if self.hz is not None and self.hz < 0:
            raise RangeError(f"hz must be nonnegative, got {self.hz}")


@dataclass(frozen=True)
class PfiResult:
    """Accuracy loss (or kernel output deviation) per feature window.

    axes holds one descriptor array per grid dimension: window centers
    in milliseconds, channel-group ids, or band centers in hertz. delta
    is the mean importance over permutations with shape matching the
    axes grid; raw keeps every permutation's value as (n_perm, *grid).
    baseline is the unshuffled accuracy (for kernel importance: the
    unshuffled kernel output standard deviation).
    """

    window: FeatureWindow
    axes: tuple
    delta: np.ndarray
    raw: np.ndarray
    baseline: float
    n_perm: int

    def ci_width(self, z: float = 1.96) -> np.ndarray:
        """Half-width of the normal confidence interval per feature."""
        if self.n_perm < 2:
            raise RangeError("confidence intervals need at least 2 permutations")
        return z * self.raw.std(axis=0, ddof=1) / np.sqrt(self.n_perm)


def nearest_sensor_groups(coords, size: int) -> list[np.ndarray]:
    """One group per sensor: itself plus its size-1 nearest neighbours.

    coords is (C, 2) sensor positions; distances are Euclidean and ties
    resolve toward lower channel indices.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError(f"coords must be (C, 2), got {coords.shape}")
    c = coords.shape[0]
    if not 1 <= size <= c:
        raise RangeError(f"group size must lie in [1, {c}], got {size}")
    d = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    return [np.sort(np.argsort(d[i], kind="stable")[:size]) for i in range(c)]


# ---------------------------------------------------------------------------
# feature grids: masks over a domain representation plus axis descriptors


def _resolve_groups(window, groups, channels):
    if groups is not None:
        out = []
        for g in groups:
            idx = np.asarray(g, dtype=np.int64).ravel()
            if idx.size == 0:
                raise ShapeError("sensor groups must not be empty")
            if idx.min() < 0 or idx.max() >= channels:
                raise RangeError(f"group indices must lie in [0, {channels})")
            out.append(idx)
        return out
    k = window.sensors if window.sensors is not None else 1
    if k > channels:
        raise ShapeError(f"spatial window of {k} sensors exceeds {channels} channels")
    return [np.arange(s, s + k) for s in range(channels - k + 1)]


def _length_from_units(amount, unit_size, grid_size, what):
    """Convert a physical window length to grid cells (ceil at least 1)."""
    if amount is None:
        return 1
    cells = int(round(amount / unit_size))
    if cells == 0 and amount > 0:
        cells = 1
    if cells > grid_size:
        raise ShapeError(f"{what} window of {cells} cells exceeds the grid of {grid_size}")
    return cells


def _block_starts(grid_size, length):
    if length == 0:
        return np.array([0])
    return np.arange(grid_size - length + 1)


def _feature_grid(window, channels, timesteps, fs, groups):
    """Build (domain, masks, axes, grid_shape, stft_len) for one window kind.

    domain is "time" (masks over (C, T)), "rfft" (masks over (C, F)) or
    "stft" (masks over (frames, bins)); masks are row-major over the
    grid shape and already complemented when window.inverse is set.
    """
    kind = window.kind
    masks, axes, shape = [], (), ()
    stft_len = 0

    if kind in ("temporal", "spatial", "spatiotemporal"):
        domain = "time"
        if kind != "spatial":
            if window.time_ms is None:
                raise ConfigError(f"{kind} windows need time_ms")
            w = _length_from_units(window.time_ms, 1000.0 / fs, timesteps, "time")
            starts = _block_starts(timesteps, w)
            centers = (starts + (w - 1) / 2.0) / fs * 1000.0
        if kind == "temporal":
            for s in starts:
                m = np.zeros((channels, timesteps), dtype=bool)
                m[:, s : s + w] = True
                masks.append(m)
            axes, shape = (centers,), (len(starts),)
        else:
            grp = _resolve_groups(window, groups, channels)
            ids = np.arange(len(grp), dtype=np.float64)
            if kind == "spatial":
                for g in grp:
                    m = np.zeros((channels, timesteps), dtype=bool)
                    m[g, :] = True
                    masks.append(m)
                axes, shape = (ids,), (len(grp),)
            else:
                for g in grp:
                    for s in starts:
                        m = np.zeros((channels, timesteps), dtype=bool)
                        m[np.ix_(g, np.arange(s, s + w))] = True
                        masks.append(m)
                axes, shape = (ids, centers), (len(grp), len(starts))

    elif kind in ("spectral", "spatiospectral"):
        domain = "rfft"
        freqs = np.fft.rfftfreq(timesteps, 1.0 / fs)
        f_bins = freqs.size
        l = _length_from_units(window.hz, fs / timesteps, f_bins, "frequency")
        starts = _block_starts(f_bins, l)
        centers = np.array(
            [freqs[s : s + l].mean() if l else freqs[min(s, f_bins - 1)] for s in starts]
        )
        if kind == "spectral":
            for s in starts:
                m = np.zeros((channels, f_bins), dtype=bool)
                m[:, s : s + l] = True
                masks.append(m)
            axes, shape = (centers,), (len(starts),)
        else:
            grp = _resolve_groups(window, groups, channels)
            ids = np.arange(len(grp), dtype=np.float64)
            for g in grp:
                for s in starts:
                    m = np.zeros((channels, f_bins), dtype=bool)
                    m[np.ix_(g, np.arange(s, s + l))] = True
                    masks.append(m)
            axes, shape = (ids, centers), (len(grp), len(starts))

    else:
        domain = "stft"
        if window.time_ms is None or window.time_ms <= 0:
            raise ConfigError("temporospectral windows need a positive time_ms")
        stft_len = _length_from_units(window.time_ms, 1000.0 / fs, timesteps, "time")
        n_frames = timesteps - stft_len + 1
        freqs = np.fft.rfftfreq(stft_len, 1.0 / fs)
        f_bins = freqs.size
        l = _length_from_units(window.hz, fs / stft_len, f_bins, "frequency")
        f_starts = _block_starts(f_bins, l)
        f_centers = np.array([freqs[s : s + l].mean() for s in f_starts])
        t_centers = (np.arange(n_frames) + (stft_len - 1) / 2.0) / fs * 1000.0
        for n in range(n_frames):
            lo = n - 1 if window.smooth else n
            hi = n + 2 if window.smooth else n + 1
            lo, hi = max(lo, 0), min(hi, n_frames)
            for s in f_starts:
                m = np.zeros((n_frames, f_bins), dtype=bool)
                m[lo:hi, s : s + l] = True
                masks.append(m)
        axes, shape = (t_centers, f_centers), (n_frames, len(f_starts))

    if window.inverse:
        masks = [~m for m in masks]
    return domain, masks, axes, shape, stft_len


def _to_domain(trials, domain, stft_len):
    if domain == "time":
        return trials
    if domain == "rfft":
        return np.fft.rfft(trials, axis=2)
    win = sps.windows.hamming(stft_len, sym=False)
    frames = sliding_window_view(trials, stft_len, axis=2)
    return np.fft.rfft(frames * win, axis=3)


def _from_domain(arr, domain, stft_len, timesteps):
    if domain == "time":
        return arr
    if domain == "rfft":
        return np.fft.irfft(arr, n=timesteps, axis=2)
    win = sps.windows.hamming(stft_len, sym=False)
    frames = np.fft.irfft(arr, n=stft_len, axis=3) * win
    out = np.zeros((arr.shape[0], arr.shape[1], timesteps))
    norm = np.zeros(timesteps)
    for n in range(arr.shape[2]):
        out[:, :, n : n + stft_len] += frames[:, :, n]
        norm[n : n + stft_len] += win**2
    return out / norm


def _apply_mask(base, donor, mask, domain):
    out = base.copy()
    if domain == "stft":
        out[:, :, mask] = donor[:, :, mask]
    else:
        out[:, mask] = donor[:, mask]
    return out


def _shuffle_passes(trials, window, fs, groups, n_perm, seed, metric):
    """Shared core: shuffle each feature window across trials and score it.

    One trial permutation is drawn per pass and reused for every window
    in that pass, so full-window and inverse empty-window runs with the
    same seed shuffle identically. metric maps shuffled trials to the
    importance value for one (permutation, feature) cell.
    """
    if n_perm < 1:
        raise RangeError(f"n_perm must be at least 1, got {n_perm}")
    channels, timesteps = trials.shape[1], trials.shape[2]
    domain, masks, axes, shape, stft_len = _feature_grid(
        window, channels, timesteps, fs, groups
    )
    base = _to_domain(trials, domain, stft_len)
    rng = np.random.default_rng(seed)
    raw = np.empty((n_perm, len(masks)))
    for p in range(n_perm):
        donor = base[rng.permutation(trials.shape[0])]
        for j, mask in enumerate(masks):
            shuffled = _apply_mask(base, donor, mask, domain)
            raw[p, j] = metric(_from_domain(shuffled, domain, stft_len, timesteps))
    return axes, shape, raw


def _predict_fn(model, subject_ids):
    if isinstance(model, LDAModel):
        return lambda trials: np.argmax(
            predict_lda(model, trials.reshape(trials.shape[0], -1)), axis=1
        )
    proba = getattr(model, "predict_proba", None)
    if callable(proba):
        if subject_ids is None:
            return lambda trials: np.argmax(proba(trials), axis=1)
        return lambda trials: np.argmax(proba(trials, subject_ids), axis=1)
    if callable(model):
        return lambda trials: np.asarray(model(trials))
    raise InterfaceError(
        f"{type(model).__name__} has no predict interface (predict_proba, "
        "LDA model, or a callable returning labels)"
    )


def run_pfi(
    model,
    dataset: EpochedDataset,
    window: FeatureWindow,
    n_perm: int = 10,
    seed: int = 0,
    groups=None,
    subject_ids=None,
) -> PfiResult:
    """Accuracy loss per feature window of a trained classifier.

    For each of n_perm seeded trial permutations, the window's content
    is replaced across trials (labels unchanged) and the model is
    re-evaluated; the importance of the window is the mean drop from
    the unshuffled baseline accuracy. The dataset is never modified.

    groups overrides the spatial grouping with explicit channel index
    lists; subject_ids is forwarded to models that take them.

    Raises
    ------
    InterfaceError
        If the model exposes no way to predict labels.
    ShapeError
        If a window does not fit inside the trial or frequency grid.
    """
    predict = _predict_fn(model, subject_ids)
    trials, labels = dataset.trials, dataset.labels
    baseline = float(np.mean(predict(trials) == labels))

    def metric(shuffled):
        return baseline - float(np.mean(predict(shuffled) == labels))

    axes, shape, raw = _shuffle_passes(
        trials, window, dataset.fs, groups, n_perm, seed, metric
    )
    return PfiResult(
        window, axes, raw.mean(axis=0).reshape(shape), raw.reshape(n_perm, *shape),
        baseline, n_perm,
    )


# ---------------------------------------------------------------------------
# kernel-level importance


def _kernel_evaluator(model, layer, in_ch, out_ch, subject_ids):
    if not (hasattr(model, "conv_kernel") and hasattr(model, "layer_input")):
        raise InterfaceError(
            f"{type(model).__name__} does not expose conv_kernel/layer_input"
        )
    weights, dilation = model.conv_kernel(layer)
    if not 0 <= out_ch < weights.shape[0]:
        raise IndexError(f"out_ch must lie in [0, {weights.shape[0]})")
    if not 0 <= in_ch < weights.shape[1]:
        raise IndexError(f"in_ch must lie in [0, {weights.shape[1]})")
    taps = weights[out_ch, in_ch]

    def kernel_out(trials):
        h = (
            model.layer_input(trials, layer)
            if subject_ids is None
            else model.layer_input(trials, layer, subject_ids)
        )
        x = h[:, in_ch]
        t_out = x.shape[1] - (taps.size - 1) * dilation
        y = np.zeros((x.shape[0], t_out))
        for k in range(taps.size):
            y += taps[k] * x[:, k * dilation : k * dilation + t_out]
        return y

    return kernel_out


def kernel_pfi(
    model,
    layer: int,
    in_ch: int,
    out_ch: int,
    dataset: EpochedDataset,
    window: FeatureWindow,
    n_perm: int = 10,
    seed: int = 0,
    groups=None,
    subject_ids=None,
    normalized: bool = False,
) -> PfiResult:
    """Mean absolute output deviation of one conv kernel under shuffling.

    The model receives the same shuffled inputs as model-level
    importance, but the score is the mean |original - shuffled| of the
    selected kernel's output (the in_ch -> out_ch tap set of the named
    layer) instead of an accuracy drop. The normalized flag divides by
    the unshuffled kernel output's standard deviation, which is also
    stored as the result's baseline.

    Raises
    ------
    IndexError
        If layer, in_ch, or out_ch name no kernel.
    """
    kernel_out = _kernel_evaluator(model, layer, in_ch, out_ch, subject_ids)
    reference = kernel_out(dataset.trials)
    scale = 1.0
    if normalized:
        scale = float(reference.std())
        if scale == 0.0:
            raise NormalizationError("kernel output has zero variance")

    def metric(shuffled):
        return float(np.mean(np.abs(reference - kernel_out(shuffled)))) / scale

    axes, shape, raw = _shuffle_passes(
        dataset.trials, window, dataset.fs, groups, n_perm, seed, metric
    )
    return PfiResult(
        window, axes, raw.mean(axis=0).reshape(shape), raw.reshape(n_perm, *shape),
        float(reference.std()), n_perm,
    )


def kernel_fir_analysis(
    model,
    layer: int,
    in_ch: int,
    out_ch: int,
    n_samples: int = 131072,
    seed: int = 0,
    normalized: bool = False,
    fs: float | None = None,
    subject_ids=None,
) -> PSDEstimate:
    """Frequency response of one kernel probed with white noise.

    Standard normal noise is fed through the model up to the named
    layer; the Welch power spectral density of the kernel's output is
    returned. normalized scales the spectrum to a peak of 1 so shapes
    are comparable across kernels.

    Raises
    ------
    IndexError
        If layer, in_ch, or out_ch name no kernel.
    ConfigError
        If no sampling rate is available (pass fs for models that do
        not carry one).
    """
    kernel_out = _kernel_evaluator(model, layer, in_ch, out_ch, subject_ids)
    if fs is None:
        fs = float(getattr(model, "fs", 0.0))
    if fs <= 0:
        raise ConfigError("pass fs: the model does not carry a sampling rate")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((1, model.channels, n_samples))
    y = kernel_out(noise)
    psd = welch_psd(MultichannelSeries(y, fs))
    if normalized:
        peak = psd.power.max()
        if peak == 0.0:
            raise NormalizationError("kernel output carries no power")
        psd = PSDEstimate(psd.freqs, psd.power / peak, psd.seg_len, psd.overlap, psd.window)
    return psd

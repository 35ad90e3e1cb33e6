"""Containers, normalization, stratified splitting, and binary tensor IO.

Every other module builds on the two containers defined here:
MultichannelSeries for continuous C x T signals and EpochedDataset for
N x C x T trial tensors with integer condition labels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateChannelError,
    FormatError,
    NumericsError,
    RangeError,
    ShapeError,
    StratifyError,
)

_MAGIC = b"NKT1"
_VERSION = 1


def _read_only(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MultichannelSeries:
    """A C x T real-valued timeseries with a sampling rate in Hz.

    Parameters
    ----------
    data : ndarray, shape (C, T)
        Channel-major samples, stored as read-only float64.
    fs : float
        Sampling rate in Hz, strictly positive.
    """

    data: np.ndarray
    fs: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeError(f"series data must be 2-D (C, T), got ndim={data.ndim}")
        if data.shape[0] < 1:
            raise ShapeError("series needs at least one channel")
        if not self.fs > 0:
            raise RangeError(f"fs must be positive, got {self.fs}")
        if data.size and not np.all(np.isfinite(data)):
            raise NumericsError("series data contains non-finite values")
        object.__setattr__(self, "data", _read_only(data))
        object.__setattr__(self, "fs", float(self.fs))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def timesteps(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.data.shape[1] / self.fs


@dataclass(frozen=True)
class EpochedDataset:
    """N trials of shape C x T plus integer condition labels.

    Labels live in [0, class_count). class_count defaults to
    max(label) + 1 when not given.
    """

    trials: np.ndarray
    labels: np.ndarray
    fs: float
    class_count: int = 0

    def __post_init__(self):
        trials = np.asarray(self.trials, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if trials.ndim != 3:
            raise ShapeError(f"trials must be 3-D (N, C, T), got ndim={trials.ndim}")
        if labels.ndim != 1 or labels.shape[0] != trials.shape[0]:
            raise ShapeError(
                f"labels length {labels.shape} does not match {trials.shape[0]} trials"
            )
        if not self.fs > 0:
            raise RangeError(f"fs must be positive, got {self.fs}")
        count = self.class_count
        if count == 0:
            count = int(labels.max()) + 1 if labels.size else 0
        if labels.size and (labels.min() < 0 or labels.max() >= count):
            raise ShapeError(f"labels must lie in [0, {count})")
        object.__setattr__(self, "trials", _read_only(trials))
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "fs", float(self.fs))
        object.__setattr__(self, "class_count", count)

    @property
    def n_trials(self) -> int:
        return self.trials.shape[0]

    @property
    def channels(self) -> int:
        return self.trials.shape[1]

    @property
    def timesteps(self) -> int:
        return self.trials.shape[2]


@dataclass(frozen=True)
class NormParams:
    """Per-channel normalization parameters.

    mean and std always present; maxabs and clip are filled in by the
    quantization pipeline and stay None for plain standardization.
    """

    mean: np.ndarray
    std: np.ndarray
    maxabs: np.ndarray | None = None
    clip: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.maxabs is not None:
            object.__setattr__(self, "maxabs", np.asarray(self.maxabs, dtype=np.float64))


def epoch(series: MultichannelSeries, onsets, window, labels) -> EpochedDataset:
    """Cut fixed-length trials out of a continuous series.

    Parameters
    ----------
    series : MultichannelSeries
    onsets : sequence of int
        Sample indices the window offsets are measured from.
    window : (start_offset, end_offset)
        Half-open sample range relative to each onset; trial length is
        end_offset - start_offset.
    labels : sequence of int
        One condition label per onset.

    Returns
    -------
    EpochedDataset
    """
    onsets = list(onsets)
    labels = list(labels)
    if len(onsets) != len(labels):
        raise ShapeError(f"{len(onsets)} onsets but {len(labels)} labels")
    start, end = int(window[0]), int(window[1])
    if end <= start:
        raise ShapeError(f"window end {end} must exceed start {start}")
    T = series.timesteps
    trials = np.empty((len(onsets), series.channels, end - start))
    for n, onset in enumerate(onsets):
        lo, hi = onset + start, onset + end
        if lo < 0 or hi > T:
            raise RangeError(f"onset {onset} puts window [{lo}, {hi}) outside [0, {T})")
        trials[n] = series.data[:, lo:hi]
    return EpochedDataset(trials, np.asarray(labels), series.fs)


def standardize(series: MultichannelSeries) -> tuple[MultichannelSeries, NormParams]:
    """Remove each channel's mean and divide by its sample std (N-1).

    Raises
    ------
    DegenerateChannelError
        If any channel has zero variance.
    """
    mean = series.data.mean(axis=1)
    std = series.data.std(axis=1, ddof=1)
    bad = np.flatnonzero(~(std > 0))
    if bad.size:
        raise DegenerateChannelError(f"channel {bad[0]} has zero variance")
    out = (series.data - mean[:, None]) / std[:, None]
    return MultichannelSeries(out, series.fs), NormParams(mean, std)


def apply_norm(series: MultichannelSeries, params: NormParams) -> MultichannelSeries:
    """Apply stored normalization: (x - mean) / std per channel."""
    out = (series.data - params.mean[:, None]) / params.std[:, None]
    return MultichannelSeries(out, series.fs)


def invert_norm(series: MultichannelSeries, params: NormParams) -> MultichannelSeries:
    """Undo standardize: x * std + mean per channel."""
    out = series.data * params.std[:, None] + params.mean[:, None]
    return MultichannelSeries(out, series.fs)


def split_stratified(
    dataset: EpochedDataset, train_fraction: float = 0.8, seed: int = 0
) -> tuple[EpochedDataset, EpochedDataset]:
    """Split trials per class into train and validation sets.

    Per class, ceil(n * train_fraction) trials go to the training side
    (remainder trials land in training), the rest to validation. The
    partition is a deterministic function of the seed.

    Raises
    ------
    StratifyError
        If any class has fewer than 2 trials.
    """
    if not 0 < train_fraction < 1:
        raise RangeError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for k in range(dataset.class_count):
        idx = np.flatnonzero(dataset.labels == k)
        if idx.size < 2:
            raise StratifyError(f"class {k} has {idx.size} trial(s), need at least 2")
        idx = rng.permutation(idx)
        n_train = int(np.ceil(idx.size * train_fraction))
        train_idx.append(idx[:n_train])
        val_idx.append(idx[n_train:])
    train_idx = np.concatenate(train_idx)
    val_idx = np.concatenate(val_idx)

    def take(idx):
        return EpochedDataset(
            dataset.trials[idx], dataset.labels[idx], dataset.fs, dataset.class_count
        )

    return take(train_idx), take(val_idx)


def subset_dataset(dataset: EpochedDataset, indices) -> EpochedDataset:
    """Return a new dataset holding the trials at the given indices.

    class_count is preserved even when the subset is missing some
    classes, so label semantics stay compatible with the parent set.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"indices must be 1-D, got ndim={idx.ndim}")
    if idx.size and (idx.min() < 0 or idx.max() >= dataset.n_trials):
        raise RangeError(f"indices must lie in [0, {dataset.n_trials})")
    return EpochedDataset(
        dataset.trials[idx], dataset.labels[idx], dataset.fs, dataset.class_count
    )


def save_array(path, array: np.ndarray, fs: float = 0.0) -> None:
    """Write a float64 tensor in the NKT1 binary format.

    Layout: magic ``NKT1``, u8 version, u8 rank, rank x u64 little-endian
    dims, f64 little-endian fs, then the payload as f64 little-endian
    values in row-major order.
    """
    array = np.ascontiguousarray(array, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BB", _VERSION, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(struct.pack("<d", fs))
        fh.write(array.astype("<f8").tobytes(order="C"))


def load_array(path) -> tuple[np.ndarray, float]:
    """Read an NKT1 file back; returns (tensor, fs)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {_MAGIC!r}")
    if len(blob) < 6:
        raise FormatError("file truncated inside the header")
    version, rank = struct.unpack_from("<BB", blob, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}")
    offset = 6
    if len(blob) < offset + 8 * rank + 8:
        raise FormatError("file truncated inside the dims")
    dims = struct.unpack_from(f"<{rank}Q", blob, offset)
    offset += 8 * rank
    (fs,) = struct.unpack_from("<d", blob, offset)
    offset += 8
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = blob[offset:]
    if len(payload) != 8 * count:
        raise FormatError(
            f"payload holds {len(payload)} bytes, expected {8 * count} for dims {dims}"
        )
    array = np.frombuffer(payload, dtype="<f8").reshape(dims)
    return array.astype(np.float64), fs


def save_series(path, series: MultichannelSeries) -> None:
    save_array(path, series.data, series.fs)


def load_series(path) -> MultichannelSeries:
    array, fs = load_array(path)
    if array.ndim != 2:
        raise FormatError(f"expected a rank-2 tensor for a series, got rank {array.ndim}")
    return MultichannelSeries(array, fs)


def write_csv(path, header, rows) -> None:
    """Write a plain CSV: header row plus str()-formatted cells, '.' decimals."""
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(c) if isinstance(c, float) else str(c) for c in row) + "\n")

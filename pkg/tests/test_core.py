import struct

import numpy as np
import pytest

from nkt import core
from nkt.errors import (
    DegenerateChannelError,
    FormatError,
    RangeError,
    ShapeError,
    StratifyError,
)


def make_series(c=3, t=100, seed=0, fs=250.0):
    rng = np.random.default_rng(seed)
    return core.MultichannelSeries(rng.standard_normal((c, t)), fs)


def test_epoch_slices_columns():
    series = make_series(c=2, t=100)
    ds = core.epoch(series, onsets=[10], window=(0, 20), labels=[0])
    assert ds.trials.shape == (1, 2, 20)
    assert np.array_equal(ds.trials[0], series.data[:, 10:30])
    assert ds.fs == series.fs


def test_epoch_out_of_range_onset():
    series = make_series(t=100)
    with pytest.raises(RangeError):
        core.epoch(series, onsets=[95], window=(0, 20), labels=[0])
    with pytest.raises(RangeError):
        core.epoch(series, onsets=[3], window=(-5, 10), labels=[0])


def test_epoch_labels_and_class_count():
    series = make_series(t=100)
    ds = core.epoch(series, onsets=[10, 40], window=(0, 20), labels=[0, 1])
    assert ds.class_count >= 2
    assert np.array_equal(ds.labels, [0, 1])


def test_epoch_length_mismatch():
    series = make_series()
    with pytest.raises(ShapeError):
        core.epoch(series, onsets=[10, 20], window=(0, 5), labels=[0])


def test_standardize_two_point_channel():
    series = core.MultichannelSeries(np.array([[1.0, 3.0]]), fs=1.0)
    out, params = core.standardize(series)
    assert abs(params.mean[0] - 2.0) < 1e-15
    assert abs(params.std[0] - np.sqrt(2.0)) < 1e-15
    assert np.allclose(out.data[0], [-0.7071067811865475, 0.7071067811865475], atol=1e-12)


def test_standardize_moments_and_idempotence():
    series = make_series(c=4, t=1000, seed=1)
    out, _ = core.standardize(series)
    assert np.max(np.abs(out.data.mean(axis=1))) < 1e-10
    assert np.max(np.abs(out.data.std(axis=1, ddof=1) - 1.0)) < 1e-10
    again, _ = core.standardize(out)
    assert np.max(np.abs(again.data - out.data)) < 1e-12


def test_standardize_constant_channel_rejected():
    data = np.ones((2, 50))
    data[0] = np.random.default_rng(0).standard_normal(50)
    with pytest.raises(DegenerateChannelError):
        core.standardize(core.MultichannelSeries(data, fs=1.0))


def test_standardize_invert_roundtrip():
    series = make_series(c=3, t=500, seed=2)
    out, params = core.standardize(series)
    back = core.invert_norm(out, params)
    rel = np.max(np.abs(back.data - series.data)) / np.max(np.abs(series.data))
    assert rel < 1e-9


def test_split_exact_ratio():
    rng = np.random.default_rng(3)
    ds = core.EpochedDataset(
        rng.standard_normal((20, 2, 10)), np.repeat([0, 1], 10), fs=100.0
    )
    train, val = core.split_stratified(ds, train_fraction=0.8, seed=7)
    for k in (0, 1):
        assert np.sum(train.labels == k) == 8
        assert np.sum(val.labels == k) == 2


def test_split_remainder_goes_to_train():
    rng = np.random.default_rng(4)
    ds = core.EpochedDataset(rng.standard_normal((5, 1, 4)), np.zeros(5, int), fs=1.0)
    train, val = core.split_stratified(ds, train_fraction=0.8, seed=0)
    assert train.n_trials == 4 and val.n_trials == 1


def test_split_deterministic_and_conserving():
    rng = np.random.default_rng(5)
    ds = core.EpochedDataset(
        rng.standard_normal((30, 2, 6)), rng.integers(0, 3, 30), fs=1.0, class_count=3
    )
    a1, b1 = core.split_stratified(ds, 0.8, seed=11)
    a2, b2 = core.split_stratified(ds, 0.8, seed=11)
    assert np.array_equal(a1.trials, a2.trials) and np.array_equal(b1.labels, b2.labels)
    # multiset of (trial, label) pairs is conserved
    joined = np.concatenate([a1.trials, b1.trials])
    labels = np.concatenate([a1.labels, b1.labels])
    order_in = np.lexsort(ds.trials.reshape(30, -1).T)
    order_out = np.lexsort(joined.reshape(30, -1).T)
    assert np.array_equal(ds.trials[order_in], joined[order_out])
    assert np.array_equal(ds.labels[order_in], labels[order_out])


def test_split_single_trial_class_rejected():
    rng = np.random.default_rng(6)
    ds = core.EpochedDataset(
        rng.standard_normal((3, 1, 4)), np.array([0, 0, 1]), fs=1.0
    )
    with pytest.raises(StratifyError):
        core.split_stratified(ds, 0.8, seed=0)


def test_nkt1_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(7)
    for shape in [(4,), (3, 5), (2, 3, 4), (0, 0)]:
        arr = rng.standard_normal(shape)
        path = tmp_path / "a.nkt"
        core.save_array(path, arr, fs=123.5)
        back, fs = core.load_array(path)
        assert fs == 123.5
        assert back.shape == arr.shape
        assert np.array_equal(back, arr)


def test_nkt1_golden_bytes(tmp_path):
    # hand-assembled reference file for a 2x2 tensor
    values = [1.5, -2.0, 0.0, 3.25]
    blob = b"\x4e\x4b\x54\x31" + struct.pack("<BB", 1, 2)
    blob += struct.pack("<QQ", 2, 2) + struct.pack("<d", 250.0)
    blob += struct.pack("<4d", *values)
    path = tmp_path / "golden.nkt"
    path.write_bytes(blob)
    arr, fs = core.load_array(path)
    assert fs == 250.0
    assert np.array_equal(arr, np.array(values).reshape(2, 2))
    out = tmp_path / "rewritten.nkt"
    core.save_array(out, arr, fs=250.0)
    assert out.read_bytes() == blob


def test_nkt1_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.nkt"
    path.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(FormatError):
        core.load_array(path)
    core.save_array(path, np.ones((3, 3)), fs=1.0)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(FormatError):
        core.load_array(path)


def test_epoch_commutes_with_io(tmp_path):
    series = make_series(c=2, t=80, seed=8)
    path = tmp_path / "s.nkt"
    core.save_series(path, series)
    loaded = core.load_series(path)
    direct = core.epoch(series, [5, 30], (0, 10), [0, 1])
    via_io = core.epoch(loaded, [5, 30], (0, 10), [0, 1])
    assert np.array_equal(direct.trials, via_io.trials)


def test_series_validation():
    with pytest.raises(ShapeError):
        core.MultichannelSeries(np.zeros(5), fs=1.0)
    with pytest.raises(RangeError):
        core.MultichannelSeries(np.zeros((1, 5)), fs=0.0)
    empty = core.MultichannelSeries(np.zeros((1, 0)), fs=1.0)
    assert empty.timesteps == 0

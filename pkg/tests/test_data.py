"""Dataset container round-trips and synthetic benchmark properties."""

import struct

import numpy as np
import pytest

from emae.data import (
    HEADER_SIZE,
    SignalDataset,
    SynthConfig,
    load_dataset,
    save_dataset,
    synth_generate,
    uniform_centroid_rmse,
)
from emae.errors import ContractError, DatasetFormatError


def small_synth(**overrides):
    base = dict(n=30, channels=4, time_len=32, noise_scale=0.5, seed=7)
    base.update(overrides)
    return synth_generate(SynthConfig(**base))


# ---------------------------------------------------------------------------
# container round trips


def test_save_load_round_trip_elementwise(tmp_path):
    ds = small_synth()
    path = tmp_path / "d.eegd"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert np.array_equal(loaded.samples, ds.samples)
    assert np.array_equal(loaded.labels, ds.labels)
    assert (loaded.n, loaded.channels, loaded.time_len) == (30, 4, 32)


def test_save_load_save_byte_identical(tmp_path):
    ds = small_synth(seed=9)
    p1, p2 = tmp_path / "a.eegd", tmp_path / "b.eegd"
    save_dataset(ds, p1)
    save_dataset(load_dataset(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_file_size_formula(tmp_path):
    ds = small_synth(n=11, channels=3, time_len=16)
    path = tmp_path / "d.eegd"
    save_dataset(ds, path)
    assert path.stat().st_size == HEADER_SIZE + 11 * 3 * 16 * 8 + 11 * 16


def test_golden_two_sample_file_from_byte_oracle(tmp_path):
    # independent byte-level writer: header + 2 samples of 1x2 + 2 labels
    samples = [[[1.5, -2.5]], [[0.0, 42.0]]]
    labels = [[10.0, 20.0], [30.0, 40.0]]
    blob = b"EEGD" + struct.pack("<I", 1) + struct.pack("<Q", 2)
    blob += struct.pack("<I", 1) + struct.pack("<I", 2)
    for s in samples:
        for row in s:
            for value in row:
                blob += struct.pack("<d", value)
    for x, y in labels:
        blob += struct.pack("<d", x) + struct.pack("<d", y)
    path = tmp_path / "golden.eegd"
    path.write_bytes(blob)
    ds = load_dataset(path)
    assert np.array_equal(ds.samples, np.array(samples))
    assert np.array_equal(ds.labels, np.array(labels))


def test_zero_sample_header_rejected(tmp_path):
    blob = b"EEGD" + struct.pack("<I", 1) + struct.pack("<Q", 0)
    blob += struct.pack("<I", 1) + struct.pack("<I", 2)
    path = tmp_path / "empty.eegd"
    path.write_bytes(blob)
    with pytest.raises(DatasetFormatError, match="zero samples"):
        load_dataset(path)


def test_bad_magic_rejected(tmp_path):
    ds = small_synth()
    path = tmp_path / "d.eegd"
    save_dataset(ds, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"WHAT"
    path.write_bytes(bytes(blob))
    with pytest.raises(DatasetFormatError, match="magic"):
        load_dataset(path)


def test_truncated_payload_rejected(tmp_path):
    ds = small_synth()
    path = tmp_path / "d.eegd"
    save_dataset(ds, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(DatasetFormatError):
        load_dataset(path)


def test_nan_label_rejected_with_offset(tmp_path):
    ds = small_synth(n=3, channels=2, time_len=4)
    path = tmp_path / "d.eegd"
    save_dataset(ds, path)
    blob = bytearray(path.read_bytes())
    labels_off = HEADER_SIZE + 3 * 2 * 4 * 8
    bad_off = labels_off + 2 * 8  # second sample's x label
    blob[bad_off : bad_off + 8] = struct.pack("<d", float("nan"))
    path.write_bytes(bytes(blob))
    with pytest.raises(DatasetFormatError) as err:
        load_dataset(path)
    assert err.value.offset == bad_off


def test_dataset_invariants_validated():
    with pytest.raises(ContractError):
        SignalDataset(np.zeros((2, 3, 4)), np.zeros((3, 2)))
    with pytest.raises(ContractError):
        SignalDataset(np.zeros((1, 2, 2)), np.array([[np.inf, 0.0]]))


# ---------------------------------------------------------------------------
# synthesis


def test_synth_deterministic_per_seed():
    a = small_synth(seed=4)
    b = small_synth(seed=4)
    c = small_synth(seed=5)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.samples, c.samples)


def test_noiseless_single_channel_is_exact_sinusoid():
    cfg = SynthConfig(
        n=5, channels=4, time_len=64, noise_scale=0.0, signal_channels=(2,), seed=1
    )
    ds = synth_generate(cfg)
    t = np.arange(64) / 64.0
    u = ds.labels[:, 0] / cfg.label_bounds[0]
    v = ds.labels[:, 1] / cfg.label_bounds[1]
    expected = (20.0 * (0.25 + u))[:, None] * np.sin(
        2 * np.pi * 4 * t[None, :] + 2 * np.pi * v[:, None]
    )
    assert np.allclose(ds.samples[:, 2, :], expected, atol=1e-12)
    others = [c for c in range(4) if c != 2]
    assert np.all(ds.samples[:, others, :] == 0.0)


def test_labels_uniform_in_bounds():
    ds = synth_generate(SynthConfig(n=2000, channels=2, time_len=16, seed=11))
    assert np.all(ds.labels >= 0.0)
    assert np.all(ds.labels[:, 0] <= 400.0)
    assert np.all(ds.labels[:, 1] <= 300.0)
    assert abs(ds.labels[:, 0].mean() - 200.0) <= 0.05 * 200.0
    assert abs(ds.labels[:, 1].mean() - 150.0) <= 0.05 * 150.0


def test_band_power_probe_beats_label_std():
    # closed-form least squares on per-channel band power must decode the
    # labels well below their standard deviation
    cfg = SynthConfig(n=1500, channels=16, time_len=128, noise_scale=1.0, seed=3)
    ds = synth_generate(cfg)
    chans = cfg.resolved_signal_channels()
    feats = np.mean(ds.samples[:, chans, :] ** 2, axis=2)
    design = np.hstack([np.ones((ds.n, 1)), feats])
    coef, *_ = np.linalg.lstsq(design, ds.labels, rcond=None)
    pred = design @ coef
    rmse = np.sqrt(np.mean(np.sum((pred - ds.labels) ** 2, axis=1)))
    label_std = np.sqrt(ds.labels.var(axis=0).sum())
    assert rmse < label_std


def test_mean_predictor_matches_analytic_baseline():
    ds = synth_generate(SynthConfig(n=1500, channels=2, time_len=16, seed=13))
    centroid = ds.labels.mean(axis=0)
    empirical = np.sqrt(np.mean(np.sum((ds.labels - centroid) ** 2, axis=1)))
    analytic = uniform_centroid_rmse((400.0, 300.0))
    assert abs(empirical - analytic) <= 0.02 * analytic


def test_signal_channel_validation():
    with pytest.raises(ContractError):
        SynthConfig(n=1, channels=4, time_len=8, signal_channels=(5,))
    with pytest.raises(ContractError):
        SynthConfig(n=1, channels=4, time_len=8, signal_channels=(1, 1))

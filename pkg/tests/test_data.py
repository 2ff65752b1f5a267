import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from aerofed.data import (
    fit_stats, format_record, inject_anomalies, mote_to_device, normalize, parse_records,
    partition, read_labeled_csv, records_to_arrays, synthetic_log, write_labeled_csv,
    chronological_split,
)
from aerofed.errors import ConfigError

LINE = "2004-02-28 00:59:16.02785 3 1 19.3024 38.4629 45.08 2.68742"


def test_parse_reference_line():
    recs, skipped = parse_records(io.StringIO(LINE + "\n"))
    assert skipped == 0 and len(recs) == 1
    r = recs[0]
    assert (r.mote_id, r.temperature, r.humidity, r.light, r.voltage) == (1, 19.3024, 38.4629, 45.08, 2.68742)
    assert r.epoch == 3 and r.time.microsecond == 27850


def test_parse_empty():
    assert parse_records(io.StringIO("")) == ([], 0)


def test_short_line_skipped():
    recs, skipped = parse_records(io.StringIO("2004-02-28 00:59:16 3 1 19.3 38.4\n" + LINE))
    assert skipped == 1 and len(recs) == 1


@pytest.mark.parametrize("bad", [
    "2004-02-28 00:59:16.02785 3 99 19.3 38.4 45.0 2.6",   # mote out of range
    "2004-02-28 00:59:16.02785 3 1 nan 38.4 45.0 2.6",     # non-finite
    "2004-02-28 00:59:16.02785 3 1 abc 38.4 45.0 2.6",
    "2004-02-30 00:59:16.02785 3 1 19.3 38.4 45.0 2.6",     # impossible date
])
def test_bad_values_skipped(bad):
    assert parse_records(io.StringIO(bad)) == ([], 1)


def test_parse_from_path(tmp_path):
    p = tmp_path / "data.txt"
    p.write_text(LINE + "\n")
    assert len(parse_records(p)[0]) == 1
    with pytest.raises(OSError):
        parse_records(tmp_path / "missing.txt")


def test_reserialize_is_lossless():
    text = synthetic_log(n_per_mote=3, seed=1, n_motes=5)
    recs, skipped = parse_records(io.StringIO(text))
    assert skipped == 0
    again, _ = parse_records(io.StringIO("\n".join(format_record(r) for r in recs)))
    assert again == recs
    orig = [[float(v) for v in ln.split()[4:]] for ln in text.splitlines()]
    assert [[float(v) for v in format_record(r).split()[4:]] for r in recs] == orig


def test_constant_column_normalizes_to_zero():
    x = np.column_stack([np.arange(5.0), np.full(5, 3.0), np.arange(5.0) ** 2, -np.arange(5.0)])
    z = normalize(x, fit_stats(x))
    assert np.all(z[:, 1] == 0)


def test_single_record_fit_gives_zero_vector():
    x = np.array([[19.3, 38.4, 45.0, 2.6]])
    assert np.all(normalize(x, fit_stats(x)) == 0)


def test_fit_empty_rejected():
    with pytest.raises(ConfigError):
        fit_stats(np.zeros((0, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 200), st.integers(0, 2**31))
def test_zscore_mean_zero(n, seed):
    x = np.random.default_rng(seed).normal(50, 20, size=(n, 4))
    z = normalize(x, fit_stats(x))
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)


def test_mote_modulo():
    assert mote_to_device(31) == 0
    assert mote_to_device(1) == 0 and mote_to_device(30) == 29 and mote_to_device(54) == 23


def test_partition_all_to_uav0():
    motes = np.arange(1, 55).repeat(3)
    shards = partition(motes, [0] * 30)
    assert len(shards[0]) == len(motes) and all(len(s) == 0 for s in shards[1:])


def test_partition_unknown_uav():
    with pytest.raises(ConfigError):
        partition(np.array([1, 2]), [7] + [0] * 29)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 54), min_size=1, max_size=300),
       st.lists(st.integers(0, 4), min_size=30, max_size=30))
def test_partition_is_partition(motes, assoc):
    motes = np.array(motes)
    shards = partition(motes, assoc)
    joined = np.concatenate(shards)
    assert sum(len(s) for s in shards) == len(motes)
    assert np.array_equal(np.sort(joined), np.arange(len(motes)))


def test_unassociated_devices_drop_out():
    motes = np.array([1, 2, 3])
    shards = partition(motes, [None, -1] + [0] * 28)
    assert np.array_equal(shards[0], [2])


def test_chronological_split_per_mote():
    motes = np.repeat([1, 2], 10)
    tr, va, te = chronological_split(motes)
    assert (len(tr), len(va), len(te)) == (14, 2, 4)
    assert not (set(tr) & set(va) or set(va) & set(te))
    for m in (1, 2):
        idx = set(np.flatnonzero(motes == m))
        assert max(set(tr) & idx) < min(set(va) & idx) < min(set(te) & idx)


def test_rate_zero_untouched():
    x = np.random.default_rng(0).normal(size=(200, 4))
    out = inject_anomalies(x, rate=0.0, seed=1)
    assert not out.labels.any() and np.array_equal(out.features, x)


def test_rate_one_spike_all_anomalous():
    x = np.random.default_rng(0).normal(size=(200, 4))
    out = inject_anomalies(x, rate=1.0, kinds=("spike",), seed=1)
    assert out.labels.all()
    shift = np.abs(out.features - x)
    assert np.allclose(shift.max(axis=1), 3.0) and np.all((shift > 0).sum(axis=1) == 1)


def test_rate_out_of_range():
    with pytest.raises(ConfigError):
        inject_anomalies(np.zeros((3, 4)), rate=1.5)


def test_rate_005_binomial_interval():
    x = np.random.default_rng(0).normal(size=(10_000, 4))
    motes = np.repeat(np.arange(1, 51), 200)
    n = int(inject_anomalies(x, motes, rate=0.05, seed=3).labels.sum())
    lo, hi = sps.binom.interval(0.999, 10_000, 0.05)
    assert lo <= n <= hi


def test_stuck_and_drift_shapes():
    x = np.random.default_rng(2).normal(size=(400, 4))
    stuck = inject_anomalies(x, rate=0.2, kinds=("stuck",), seed=5)
    flagged = np.flatnonzero(stuck.labels)
    assert flagged.size and all(np.array_equal(stuck.features[i], stuck.features[i - 1])
                                for i in flagged if stuck.labels[i - 1])
    drift = inject_anomalies(x, rate=0.2, kinds=("drift",), seed=5)
    assert np.abs(drift.features - x).max() <= 3.0 + 1e-12


def test_injection_reproducible(tmp_path):
    x = np.random.default_rng(0).normal(size=(500, 4))
    motes = np.repeat(np.arange(1, 6), 100)
    a = inject_anomalies(x, motes, rate=0.1, seed=[4, 2])
    b = inject_anomalies(x, motes, rate=0.1, seed=[4, 2])
    write_labeled_csv(tmp_path / "a.csv", a)
    write_labeled_csv(tmp_path / "b.csv", b)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "f0,f1,f2,f3,label,mote"
    back = read_labeled_csv(tmp_path / "a.csv")
    assert np.array_equal(back.features, a.features) and np.array_equal(back.labels, a.labels)


def test_synthetic_log_parses_cleanly():
    recs, skipped = parse_records(io.StringIO(synthetic_log(n_per_mote=20, seed=0)))
    feats, motes = records_to_arrays(recs)
    assert skipped == 0 and feats.shape == (54 * 20, 4) and set(motes) == set(range(1, 55))

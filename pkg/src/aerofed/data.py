"""Intel Berkeley lab sensor logs: parsing, scaling, sharding, anomaly injection.

A log line has eight whitespace separated fields::

    date time epoch moteid temperature humidity light voltage

e.g. ``2004-02-28 00:59:16.02785 3 1 19.3024 38.4629 45.08 2.68742``.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

N_MOTES = 54
FEATURES = ("temperature", "humidity", "light", "voltage")
STD_FLOOR = 1e-6
ANOMALY_KINDS = ("spike", "stuck", "drift")
STUCK_WINDOW = 5
DRIFT_WINDOW = 20


@dataclass(frozen=True)
class SensorRecord:
    date: dt.date
    time: dt.time
    epoch: int
    mote_id: int
    temperature: float
    humidity: float
    light: float
    voltage: float

    @property
    def features(self):
        return np.array([self.temperature, self.humidity, self.light, self.voltage])


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class LabeledSamples:
    """Column-oriented labeled sample set.

    ``labels`` is 1 for anomalous and 0 for normal rows.
    """

    features: np.ndarray
    labels: np.ndarray
    motes: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return LabeledSamples(self.features[idx], self.labels[idx], self.motes[idx])


def _parse_line(line):
    parts = line.split()
    if len(parts) != 8:
        return None
    try:
        date = dt.date.fromisoformat(parts[0])
        time = dt.time.fromisoformat(_pad_fraction(parts[1]))
        epoch = int(parts[2])
        mote = int(parts[3])
        values = [float(p) for p in parts[4:]]
    except ValueError:
        return None
    if not 1 <= mote <= N_MOTES or not all(np.isfinite(values)):
        return None
    return SensorRecord(date, time, epoch, mote, *values)


def _pad_fraction(text):
    # fromisoformat on 3.10 wants 0, 3 or 6 fractional digits
    if "." not in text:
        return text
    whole, frac = text.split(".", 1)
    return f"{whole}.{frac[:6].ljust(6, '0')}"


def parse_records(stream):
    """Parse a text stream of log lines.

    Returns ``(records, n_skipped)``.  Malformed, incomplete, out-of-range or
    non-finite lines are skipped and counted; blank lines are ignored.
    """
    if isinstance(stream, (str, Path)):
        with open(stream) as fh:
            return parse_records(fh)
    records, skipped = [], 0
    for line in stream:
        if not line.strip():
            continue
        rec = _parse_line(line)
        if rec is None:
            skipped += 1
        else:
            records.append(rec)
    return records, skipped


def format_record(rec):
    t = rec.time.isoformat(timespec="microseconds" if rec.time.microsecond else "seconds")
    return (
        f"{rec.date.isoformat()} {t} {rec.epoch} {rec.mote_id} "
        f"{rec.temperature!r} {rec.humidity!r} {rec.light!r} {rec.voltage!r}"
    )


def records_to_arrays(records):
    """Stack records into ``(features[n, 4], motes[n])``."""
    if not records:
        return np.zeros((0, 4)), np.zeros(0, dtype=int)
    feats = np.array([[r.temperature, r.humidity, r.light, r.voltage] for r in records])
    motes = np.array([r.mote_id for r in records], dtype=int)
    return feats, motes


def fit_stats(records_or_features):
    feats = records_or_features
    if not isinstance(feats, np.ndarray):
        feats, _ = records_to_arrays(list(feats))
    if len(feats) == 0:
        raise ConfigError("cannot fit normalization statistics on an empty set")
    return NormStats(feats.mean(axis=0), np.maximum(feats.std(axis=0), STD_FLOOR))


def normalize(x, stats):
    """Z-score a record, a feature vector or a feature matrix."""
    if isinstance(x, SensorRecord):
        x = x.features
    return (np.asarray(x, dtype=float) - stats.mean) / stats.std


def mote_to_device(mote_id, n_devices=30):
    return (mote_id - 1) % n_devices


def partition(motes, association, n_devices=30, n_uavs=5):
    """Split sample indices into per-UAV shards.

    ``motes`` gives the source mote of each sample; ``association[d]`` is
    the UAV index serving device ``d`` or ``None``.  Returns a list of
    ``n_uavs`` index arrays, disjoint by construction.
    """
    motes = np.asarray(motes, dtype=int)
    if len(association) != n_devices:
        raise ConfigError(f"association covers {len(association)} devices, expected {n_devices}")
    dev_to_uav = np.full(n_devices, -1)
    for d, u in enumerate(association):
        if u is None or u < 0:
            continue
        if not 0 <= u < n_uavs:
            raise ConfigError(f"device {d} mapped to unknown UAV {u}")
        dev_to_uav[d] = u
    owner = dev_to_uav[mote_to_device(motes, n_devices)] if motes.size else np.zeros(0, int)
    return [np.flatnonzero(owner == u) for u in range(n_uavs)]


def chronological_split(motes, train_frac=0.8, val_frac=0.1):
    """Per-mote chronological split into train / validation / test indices.

    Samples must already be in chronological order within each mote.  The
    validation slice is the tail of the training period.
    """
    motes = np.asarray(motes)
    train, val, test = [], [], []
    for m in np.unique(motes):
        idx = np.flatnonzero(motes == m)
        n = len(idx)
        n_fit = int(round(n * (train_frac - val_frac)))
        n_trainval = int(round(n * train_frac))
        train.append(idx[:n_fit])
        val.append(idx[n_fit:n_trainval])
        test.append(idx[n_trainval:])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.zeros(0, int)
    return cat(train), cat(val), cat(test)


def inject_anomalies(features, motes=None, rate=0.05, kinds=ANOMALY_KINDS,
                     magnitude_sigmas=3.0, seed=0, sigma=1.0):
    """Perturb a fraction ``rate`` of samples and label them anomalous.

    Events are placed along each mote's sequence.  ``spike`` shifts one
    random feature by +/- magnitude*sigma for one sample; ``stuck`` freezes
    all features at the previous reading for 5 samples; ``drift`` adds a
    linear ramp to one feature reaching magnitude*sigma after 20 samples.
    Event starts are drawn so the expected labeled fraction equals ``rate``.
    ``sigma`` is the feature scale; 1.0 for z-scored inputs.

    Returns a :class:`LabeledSamples`.
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"anomaly rate must lie in [0, 1], got {rate}")
    kinds = tuple(kinds)
    unknown = set(kinds) - set(ANOMALY_KINDS)
    if unknown or not kinds:
        raise ConfigError(f"anomaly kinds must be a non-empty subset of {ANOMALY_KINDS}")
    feats = np.array(features, dtype=float, copy=True)
    n = len(feats)
    motes = np.zeros(n, dtype=int) if motes is None else np.asarray(motes, dtype=int)
    labels = np.zeros(n, dtype=int)
    if rate == 0.0 or n == 0:
        return LabeledSamples(feats, labels, motes.copy())

    widths = {"spike": 1, "stuck": STUCK_WINDOW, "drift": DRIFT_WINDOW}
    mean_w = np.mean([widths[k] for k in kinds])
    # solve f = q*W / (1 + q*(W-1)) for the per-free-slot start probability q
    p_start = rate / (mean_w - rate * (mean_w - 1))
    rng = np.random.default_rng(seed)
    n_feat = feats.shape[1]

    for m in np.unique(motes):
        idx = np.flatnonzero(motes == m)
        i = 0
        while i < len(idx):
            if rng.random() >= p_start:
                i += 1
                continue
            kind = kinds[rng.integers(len(kinds))]
            w = min(widths[kind], len(idx) - i)
            window = idx[i:i + w]
            if kind == "spike":
                j = rng.integers(n_feat)
                feats[window, j] += rng.choice((-1.0, 1.0)) * magnitude_sigmas * sigma
            elif kind == "stuck":
                frozen = feats[idx[i - 1]].copy() if i > 0 else feats[window[0]].copy()
                feats[window] = frozen
            else:
                j = rng.integers(n_feat)
                sign = rng.choice((-1.0, 1.0))
                ramp = magnitude_sigmas * sigma * np.arange(1, w + 1) / DRIFT_WINDOW
                feats[window, j] += sign * ramp
            labels[window] = 1
            i += w
    return LabeledSamples(feats, labels, motes.copy())


def write_labeled_csv(path, samples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f0", "f1", "f2", "f3", "label", "mote"])
        for f, lab, mote in zip(samples.features, samples.labels, samples.motes):
            w.writerow([*(repr(float(v)) for v in f), int(lab), int(mote)])


def read_labeled_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    feats = np.array([[float(r[f"f{i}"]) for i in range(4)] for r in rows]).reshape(-1, 4)
    labels = np.array([int(r["label"]) for r in rows], dtype=int)
    motes = np.array([int(r["mote"]) for r in rows], dtype=int)
    return LabeledSamples(feats, labels, motes)


def synthetic_log(n_per_mote=400, seed=0, n_motes=N_MOTES):
    """Generate an Intel-Lab-format log from per-mote 4-D Gaussians.

    Each mote gets its own mean (site-to-site variation) around lab-like
    levels; readings are 31 s apart starting 2004-02-28.  Returns the text.
    """
    rng = np.random.default_rng(seed)
    base = np.array([21.0, 38.0, 180.0, 2.6])
    site_spread = np.array([2.5, 5.0, 120.0, 0.08])
    noise = np.array([0.6, 1.5, 25.0, 0.02])
    site_means = base + rng.normal(size=(n_motes, 4)) * site_spread
    start = dt.datetime(2004, 2, 28, 0, 0, 0)
    buf = io.StringIO()
    for k in range(n_per_mote):
        ts = start + dt.timedelta(seconds=31 * k)
        for m in range(n_motes):
            v = site_means[m] + rng.normal(size=4) * noise
            frac = rng.integers(0, 100000)
            buf.write(
                f"{ts.date().isoformat()} {ts.time().isoformat()}.{frac:05d} {k} {m + 1} "
                f"{v[0]:.4f} {v[1]:.4f} {v[2]:.2f} {v[3]:.5f}\n"
            )
    return buf.getvalue()

"""Experiment configuration, execution, evaluation and plot-data export.

Config files are flat ``section.key = value`` lines; ``#`` starts a comment.
Every key has a default, so an empty file is a valid configuration.

A run directory contains::

    config.resolved   the full configuration, re-loadable
    rounds.csv        one row per federated episode
    agent.csv         one row per decision period (afl-ca2c only, else header)
    test_set.csv      the labeled test set
    checkpoints/      parameter blobs every 10 episodes and at the end
    summary           JSON summary with detection metrics and energy totals
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as datamod
from . import env as envmod
from .afl import ROUND_HEADER, Federation
from .agent import AGENT_HEADER, AgentHyper, AgentNets, RewardWeights, train
from .errors import ConfigError
from .gan import GanHyper, ScorerConfig, anomaly_score, calibrate_threshold, classify, load_gan, save_gan
from .sim import Scenario, VHetNetSim, device_shards

log = logging.getLogger(__name__)

METHODS = ("afl-ca2c", "fl-all", "standalone")


@dataclass
class RunConfig:
    method: str = "afl-ca2c"
    seed: int = 0
    episodes: int = 100
    synthetic: bool = False
    dataset_path: str = "data/data.txt"
    synthetic_per_mote: int = 400
    workers: int = 1
    quorum: float = 1.0
    checkpoint_every: int = 10


@dataclass
class DataConfig:
    train_frac: float = 0.8
    val_frac: float = 0.1


@dataclass
class AnomalyConfig:
    rate: float = 0.05
    # the scorer sees one reading at a time; stuck and early drift samples look normal to it
    kinds: tuple = ("spike",)
    magnitude_sigmas: float = 3.0


@dataclass
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    scenario: Scenario = field(default_factory=Scenario)
    energy: envmod.EnergyParams = field(default_factory=envmod.EnergyParams)
    latency: envmod.LatencyParams = field(default_factory=envmod.LatencyParams)
    gan: GanHyper = field(default_factory=GanHyper)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    agent: AgentHyper = field(default_factory=AgentHyper)
    reward: RewardWeights = field(default_factory=RewardWeights)
    data: DataConfig = field(default_factory=DataConfig)
    anomaly: AnomalyConfig = field(default_factory=AnomalyConfig)


# -- config I/O -------------------------------------------------------------

_SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(ExperimentConfig)}
_SKIP = {("scorer", "threshold")}


def _parse_value(key, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, tuple) or ("," in raw and isinstance(default, (int, float))):
            items = [p.strip() for p in raw.split(",") if p.strip()]
            elem = type(default[0]) if isinstance(default, tuple) and default else float
            return tuple(elem(p) for p in items)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


def parse_config(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} lacks a section prefix")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config key {key!r} (no section {section!r})")
        base = _SECTIONS[section]()
        defaults = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
        if name not in defaults or (section, name) in _SKIP:
            raise ConfigError(f"unknown config key {key!r}")
        values.setdefault(section, {})[name] = _parse_value(key, raw, defaults[name])

    parts = {}
    for section, factory in _SECTIONS.items():
        base = factory()
        try:
            parts[section] = dataclasses.replace(base, **values.get(section, {}))
        except ConfigError as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    cfg = ExperimentConfig(**parts)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    checks = [
        ("run.method", cfg.run.method in METHODS, f"must be one of {METHODS}"),
        ("run.episodes", cfg.run.episodes >= 0, "must be >= 0"),
        ("run.workers", cfg.run.workers >= 1, "must be >= 1"),
        ("run.quorum", 0.0 < cfg.run.quorum <= 1.0, "must lie in (0, 1]"),
        ("run.checkpoint_every", cfg.run.checkpoint_every >= 1, "must be >= 1"),
        ("gan.K", cfg.gan.K >= 1, "must be >= 1"),
        ("gan.N", cfg.gan.N >= 1, "must be >= 1"),
        ("scorer.quantile", 0.0 < cfg.scorer.quantile <= 1.0, "must lie in (0, 1]"),
        ("anomaly.rate", 0.0 <= cfg.anomaly.rate <= 1.0, "must lie in [0, 1]"),
        ("anomaly.kinds", set(cfg.anomaly.kinds) <= set(datamod.ANOMALY_KINDS) and cfg.anomaly.kinds,
         f"must be a non-empty subset of {datamod.ANOMALY_KINDS}"),
        ("data.train_frac", 0.0 < cfg.data.val_frac < cfg.data.train_frac < 1.0,
         "need 0 < val_frac < train_frac < 1"),
        ("scenario.n_uavs", 1 <= cfg.scenario.n_uavs <= 10, "must lie in [1, 10]"),
        ("scenario.n_devices", cfg.scenario.n_devices >= 1, "must be >= 1"),
        ("scenario.radius", cfg.scenario.radius > 0, "must be positive"),
    ]
    for key, ok, msg in checks:
        if not ok:
            raise ConfigError(f"{key} {msg}")


def load_config(path):
    return parse_config(Path(path).read_text())


def dump_config(cfg):
    lines = []
    for section in _SECTIONS:
        part = getattr(cfg, section)
        for f in dataclasses.fields(part):
            if (section, f.name) in _SKIP:
                continue
            lines.append(f"{section}.{f.name} = {_format_value(getattr(part, f.name))}")
    return "\n".join(lines) + "\n"


# -- metrics ------------------------------------------------------------------

@dataclass
class DetectionMetrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self):
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def accuracy(self):
        total = self.tp + self.fp + self.fn + self.tn
        return (self.tp + self.tn) / total if total else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other):
        return DetectionMetrics(self.tp + other.tp, self.fp + other.fp,
                                self.fn + other.fn, self.tn + other.tn)

    def as_dict(self):
        return {"precision": self.precision, "recall": self.recall, "accuracy": self.accuracy,
                "f1": self.f1, "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def compute_metrics(labels, predictions):
    labels = np.asarray(labels).astype(bool)
    preds = np.asarray(predictions).astype(bool)
    if labels.size == 0 or labels.shape != preds.shape:
        raise ConfigError("labels and predictions must be non-empty and equally long")
    return DetectionMetrics(
        int(np.sum(labels & preds)), int(np.sum(~labels & preds)),
        int(np.sum(labels & ~preds)), int(np.sum(~labels & ~preds)),
    )


def evaluate_models(models, test, val_features, scorer):
    """Score, calibrate on the normal validation slice, classify, measure."""
    theta = calibrate_threshold(anomaly_score(val_features, models, scorer), scorer.quantile)
    preds = classify(anomaly_score(test.features, models, scorer), theta)
    return compute_metrics(test.labels, preds), theta


# -- dataset preparation --------------------------------------------------------

@dataclass
class Prepared:
    stats: datamod.NormStats
    train_features: np.ndarray
    train_motes: np.ndarray
    val_features: np.ndarray
    test: datamod.LabeledSamples
    n_skipped: int


def prepare_data(cfg):
    if cfg.run.synthetic:
        text = datamod.synthetic_log(cfg.run.synthetic_per_mote, seed=cfg.run.seed)
        records, skipped = datamod.parse_records(io.StringIO(text))
    else:
        path = Path(cfg.run.dataset_path)
        if not path.exists():
            raise FileNotFoundError(
                f"dataset {path} not found; download the Intel lab data.txt or run with --synthetic")
        records, skipped = datamod.parse_records(path)
    if not records:
        raise ConfigError("dataset contains no usable records")
    feats, motes = datamod.records_to_arrays(records)
    tr, va, te = datamod.chronological_split(motes, cfg.data.train_frac, cfg.data.val_frac)
    stats = datamod.fit_stats(feats[tr])
    norm = datamod.normalize(feats, stats)
    a = cfg.anomaly
    test = datamod.inject_anomalies(norm[te], motes[te], a.rate, a.kinds, a.magnitude_sigmas,
                                    seed=[cfg.run.seed, 51])
    return Prepared(stats, norm[tr], motes[tr], norm[va], test, skipped)


# -- runs ----------------------------------------------------------------------

@dataclass
class World:
    cfg: ExperimentConfig
    prepared: Prepared
    federation: Federation
    sim: VHetNetSim


def build_world(cfg, prepared=None):
    prepared = prepared or prepare_data(cfg)
    seed = cfg.run.seed
    sc = cfg.scenario
    devices = envmod.place_devices(sc.n_devices, [seed, 1], sc.mobile_frac, sc.device_speed, sc.area)
    uavs = envmod.place_uavs(sc.n_uavs, [seed, 2], cfg.energy.battery_capacity, sc.area)
    fed = Federation.create(cfg.gan, cfg.energy, cfg.latency, uavs, prepared.val_features,
                            seed=seed, workers=cfg.run.workers, quorum=cfg.run.quorum)
    shards = device_shards(prepared.train_features, prepared.train_motes, sc.n_devices)
    sim = VHetNetSim(sc, devices, uavs, cfg.energy, cfg.latency, cfg.reward, cfg.gan.K,
                     device_data=shards, federation=fed, seed=seed)
    return World(cfg, prepared, fed, sim)


class _CsvLog:
    def __init__(self, path, header):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(header)
        self.fh.flush()

    def write(self, row):
        self.w.writerow(row)
        self.fh.flush()

    def close(self):
        self.fh.close()


def _agent_row(row):
    t, reward, cov, fed_time, val_loss, mask, eps = row
    f = lambda v: "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))
    return (t, f(reward), f(cov), f(fed_time), f(val_loss), mask, f(eps))


def _checkpoint(world, directory):
    fed = world.federation
    if world.cfg.run.method == "standalone":
        for u, m in enumerate(fed.locals):
            save_gan(directory, m, world.cfg.scorer, name=f"uav{u}")
    else:
        save_gan(directory, fed.global_gan(), world.cfg.scorer, name="global")


def run(cfg, out_dir):
    """Execute one configured experiment and return the run directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(dump_config(cfg))
    (out / "checkpoints").mkdir(exist_ok=True)
    rounds = _CsvLog(out / "rounds.csv", ROUND_HEADER)
    agent_log = _CsvLog(out / "agent.csv", AGENT_HEADER)
    logs, agent_rows = [], []
    try:
        world = build_world(cfg)
        datamod.write_labeled_csv(out / "test_set.csv", world.prepared.test)
        _execute(world, cfg, out, rounds, agent_log, logs, agent_rows)
        _checkpoint(world, out / "checkpoints" / "final")
        summary = _summarize(world, logs, agent_rows)
        (out / "summary").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except Exception as exc:
        (out / "error").write_text(f"{type(exc).__name__}: {exc}\nepisodes logged: {len(logs)}\n")
        raise
    finally:
        rounds.close()
        agent_log.close()
    return out


def _execute(world, cfg, out, rounds, agent_log, logs, agent_rows):
    sim, fed = world.sim, world.federation
    every = cfg.run.checkpoint_every

    def after_episode(ep, rlog):
        logs.append(rlog)
        rounds.write(rlog.row())
        if (ep + 1) % every == 0:
            _checkpoint(world, out / "checkpoints" / f"ep{ep + 1:04d}")

    if cfg.run.method == "afl-ca2c":
        nets = AgentNets.create(sim.s_dim, sim.n_discrete, sim.c_dim, cfg.agent, cfg.run.seed)

        def on_period(t, info, row):
            agent_rows.append(row)
            agent_log.write(_agent_row(row))
            after_episode(t, info.round_log)

        train(sim, nets, cfg.run.episodes, cfg.run.seed, on_period=on_period)
        return

    # baselines keep the UAVs where they were deployed
    for ep in range(cfg.run.episodes):
        sim.association = envmod.associate(sim.devices.positions, sim.uav_xy(), cfg.scenario.radius)
        if cfg.run.method == "fl-all":
            indicator = envmod.eligible(fed.uavs, fed.energy, fed.hyper.K)
            _, rlog = fed.run_episode(indicator, sim.shards(), ep)
        else:
            rlog = fed.run_standalone_episode(sim.shards(), ep)
        sim.advance_devices(ep)
        after_episode(ep, rlog)


def evaluate_world(world):
    """Detection metrics of the trained model(s) on the labeled test set."""
    cfg, fed, prep = world.cfg, world.federation, world.prepared
    if cfg.run.method != "standalone":
        metrics, theta = evaluate_models(fed.global_gan(), prep.test, prep.val_features, cfg.scorer)
        return {"metrics": metrics.as_dict(), "threshold": theta}
    trained = [u for u, x in enumerate(fed.uavs) if x.spent_train > 0]
    per_uav = {}
    for u in trained:
        m, theta = evaluate_models(fed.locals[u], prep.test, prep.val_features, cfg.scorer)
        per_uav[str(u)] = dict(m.as_dict(), threshold=theta)
    keys = ("precision", "recall", "accuracy", "f1")
    mean = {k: float(np.mean([p[k] for p in per_uav.values()])) if per_uav else 0.0 for k in keys}
    return {"metrics": mean, "per_uav": per_uav}


def _plateau_episode(series, window=10, tol=0.05):
    s = smoothed(series, window)
    for t in range(2 * window - 1, len(s)):
        prev = s[t - window]
        if prev != 0 and abs(s[t] - prev) / abs(prev) < tol:
            return t
    return None


def smoothed(series, window=10):
    """Trailing moving average after forward-filling gaps (NaN)."""
    x = np.array(series, dtype=float)
    last = np.nan
    for i, v in enumerate(x):
        if np.isnan(v):
            x[i] = last
        else:
            last = v
    out = np.full(len(x), np.nan)
    for i in range(len(x)):
        chunk = x[max(0, i - window + 1):i + 1]
        chunk = chunk[~np.isnan(chunk)]
        if chunk.size:
            out[i] = chunk.mean()
    return out


def _summarize(world, logs, agent_rows):
    cfg, fed = world.cfg, world.federation
    n_uavs = len(fed.uavs)
    total = 0.0
    for rl in logs:
        total += rl.energy_J
    masks = [rl.selection for rl in logs]
    strict = sum(1 for m in masks if 0 < sum(m) < n_uavs)
    loss_series = [rl.gen_loss + rl.disc_loss for rl in logs]
    ev = evaluate_world(world)
    return {
        "method": cfg.run.method,
        "seed": cfg.run.seed,
        "episodes": len(logs),
        "total_energy_J": total,
        "energy_upload_J": sum(rl.energy_upload for rl in logs),
        "energy_train_J": sum(rl.energy_train for rl in logs),
        "energy_fly_J": sum(rl.energy_fly for rl in logs),
        "mean_uav_energy_J": total / n_uavs,
        "uav_final_energy_J": [u.energy for u in fed.uavs],
        "strict_subset_fraction": strict / len(logs) if logs else 0.0,
        "mean_selected": float(np.mean([sum(m) for m in masks])) if masks else 0.0,
        "final_val_loss": logs[-1].val_loss if logs else None,
        "plateau_episode": _plateau_episode(loss_series),
        "mean_reward": float(np.mean([r[1] for r in agent_rows])) if agent_rows else None,
        "detection": ev,
        "global_version": fed.global_models.version,
        "n_test": len(world.prepared.test),
        "n_test_anomalies": int(world.prepared.test.labels.sum()),
        "records_skipped": world.prepared.n_skipped,
    }


def evaluate_checkpoint(checkpoint_dir, test_set, val_features, scorer_cfg, name="global"):
    """Metrics of a stored checkpoint.  Raises FileNotFoundError when missing."""
    models, stored = load_gan(checkpoint_dir, name=name)
    scorer = scorer_cfg or stored or ScorerConfig()
    metrics, _ = evaluate_models(models, test_set, val_features, scorer)
    return metrics


def evaluate_run(run_dir):
    """Re-evaluate the final checkpoint(s) of a run against its own test set."""
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.resolved")
    prepared = prepare_data(cfg)
    test = datamod.read_labeled_csv(run_dir / "test_set.csv")
    ckpt = run_dir / "checkpoints" / "final"
    if cfg.run.method == "standalone":
        results = {}
        for path in sorted(ckpt.glob("uav*.json")):
            m = evaluate_checkpoint(ckpt, test, prepared.val_features, cfg.scorer, name=path.stem)
            results[path.stem] = m.as_dict()
        return results
    return {"global": evaluate_checkpoint(ckpt, test, prepared.val_features, cfg.scorer).as_dict()}


# -- plot data -------------------------------------------------------------------

def _read_rounds(run_dir):
    path = Path(run_dir) / "rounds.csv"
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_plot_data(run_dir):
    """Write convergence.csv, energy.csv and detection.csv into ``run_dir``."""
    run_dir = Path(run_dir)
    rows = _read_rounds(run_dir)
    summary_path = run_dir / "summary"
    summary = json.loads(summary_path.read_text()) if summary_path.exists() else None
    n_uavs = len(rows[0]["selection_mask"]) if rows else 1
    if summary and summary.get("uav_final_energy_J"):
        n_uavs = len(summary["uav_final_energy_J"])

    with open(run_dir / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "gen_loss", "disc_loss"])
        for r in rows:
            w.writerow([r["episode"], r["gen_loss"], r["disc_loss"]])

    with open(run_dir / "energy.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "cumulative_mean_uav_energy_J"])
        cum = 0.0
        for r in rows:
            cum += float(r["energy_J"]) if r["energy_J"] else 0.0
            w.writerow([r["episode"], repr(cum / n_uavs)])

    with open(run_dir / "detection.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "precision", "recall", "accuracy", "f1"])
        if summary and summary.get("detection"):
            m = summary["detection"]["metrics"]
            w.writerow([summary["method"], *(repr(float(m[k])) for k in ("precision", "recall", "accuracy", "f1"))])
    return [run_dir / n for n in ("convergence.csv", "energy.csv", "detection.csv")]

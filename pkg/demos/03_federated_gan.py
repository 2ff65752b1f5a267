"""Federated GAN rounds over five UAVs: everyone versus a selected pair.

Run: python3 demos/03_federated_gan.py
"""
import io

import numpy as np

from aerofed import data
from aerofed.afl import Federation
from aerofed.env import EnergyParams, LatencyParams, place_uavs
from aerofed.gan import GanHyper, ScorerConfig, anomaly_score, calibrate_threshold

feats, motes = data.records_to_arrays(data.parse_records(io.StringIO(data.synthetic_log(120, seed=0)))[0])
train, val, test = data.chronological_split(motes)
stats = data.fit_stats(feats[train])
z = data.normalize(feats, stats)
shards = [z[train][s] for s in data.partition(motes[train], np.arange(30) % 5)]

hyper = GanHyper(K=30)
for label, indicator in [("all five", [1, 1, 1, 1, 1]), ("UAVs 0 and 3", [1, 0, 0, 1, 0])]:
    fed = Federation.create(hyper, EnergyParams(), LatencyParams(), place_uavs(5, 0), z[val], seed=0)
    for ep in range(20):
        _, log = fed.run_episode(indicator, shards, ep)
    spent = sum(u.spent for u in fed.uavs)
    print(f"{label:>13}: val BCE {log.val_loss:.3f}, round time {log.latency_s:.1f} s, "
          f"energy over 20 rounds {spent:.0f} J")

# Score a normal reading and a 3-sigma spike with the last global model.
scorer = ScorerConfig()
models = fed.global_gan()
theta = calibrate_threshold(anomaly_score(z[val], models, scorer), scorer.quantile)
normal = z[test][0]
spike = normal + np.array([3.0, 0, 0, 0])
print(f"threshold {theta:.3f}; normal {anomaly_score(normal, models, scorer):.3f}, "
      f"spiked {anomaly_score(spike, models, scorer):.3f}")

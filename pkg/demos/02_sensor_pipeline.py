"""From a raw Intel-Lab-style log to per-UAV shards and a labeled test set.

Run: python3 demos/02_sensor_pipeline.py
"""
import io

import numpy as np

from aerofed import data

# No dataset download needed: the generator writes the same 8-field text format.
text = data.synthetic_log(n_per_mote=100, seed=0)
print(text.splitlines()[0])

records, skipped = data.parse_records(io.StringIO(text + "garbage line\n"))
print(f"{len(records)} records parsed, {skipped} skipped")

feats, motes = data.records_to_arrays(records)
train, val, test = data.chronological_split(motes)
stats = data.fit_stats(feats[train])
z = data.normalize(feats, stats)
print("training means after z-scoring:", np.round(z[train].mean(axis=0), 12))

# 54 motes fold onto 30 ground devices; devices attach to 5 UAVs.
association = np.arange(30) % 5
shards = data.partition(motes[train], association)
print("shard sizes per UAV:", [len(s) for s in shards])

labeled = data.inject_anomalies(z[test], motes[test], rate=0.05, kinds=("spike",), seed=1)
print(f"test set: {len(labeled)} samples, {labeled.labels.mean():.3f} anomalous")

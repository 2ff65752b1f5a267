"""The three-way comparison at case-study scale on the synthetic dataset.

Writes runs under ./runs/ and prints mean UAV energy and F1 per method.

Run: python3 demos/05_case_study.py [episodes]   (a few minutes for 100 episodes)
"""
import json
import sys

from aerofed.experiment import ExperimentConfig, emit_plot_data, run

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 100
for method in ("standalone", "afl-ca2c", "fl-all"):
    cfg = ExperimentConfig()
    cfg.run.synthetic = True
    cfg.run.method = method
    cfg.run.episodes = episodes
    out = run(cfg, f"runs/{method}")
    emit_plot_data(out)
    s = json.loads((out / "summary").read_text())
    print(f"{method:>10}: mean UAV energy {s['mean_uav_energy_J']:7.1f} J, "
          f"F1 {s['detection']['metrics']['f1']:.3f}, plateau at episode {s['plateau_episode']}")

"""End-to-end acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL`` line (collected again
in the terminal summary).  The case-study comparisons run at full default
scale on the synthetic stand-in dataset and share one set of run directories.
"""

import json
import math
import time

import numpy as np
import pytest

from aerofed import checks
from aerofed.afl import Federation
from aerofed.env import EnergyParams, LatencyParams, UavState, fly
from aerofed.experiment import ExperimentConfig, run
from aerofed.gan import GanHyper

SEEDS = (0, 1, 2)
METHODS = ("afl-ca2c", "fl-all", "standalone")


def full_config(method, seed, episodes):
    cfg = ExperimentConfig()
    cfg.run.synthetic = True
    cfg.run.method, cfg.run.seed, cfg.run.episodes = method, seed, episodes
    return cfg


def summary(run_dir):
    return json.loads((run_dir / "summary").read_text())


@pytest.fixture(scope="session")
def case_study(tmp_path_factory):
    """100-episode runs of every method for three seeds: {(method, seed): (summary, seconds)}."""
    base = tmp_path_factory.mktemp("case_study")
    out = {}
    for seed in SEEDS:
        for m in METHODS:
            t0 = time.perf_counter()
            d = run(full_config(m, seed, 100), base / f"{m}-{seed}")
            out[m, seed] = (summary(d), time.perf_counter() - t0)
    return out


def test_criterion_01_energy_constants(report):
    t0 = time.perf_counter()
    hyper = GanHyper(K=30)
    uavs = [UavState(np.array([500.0, 500.0]), 10_000.0) for _ in range(5)]
    val = np.random.default_rng(0).normal(size=(64, 4))
    fed = Federation.create(hyper, EnergyParams(), LatencyParams(), uavs, val)
    shard = np.random.default_rng(1).normal(size=(200, 4))
    fed.run_episode([1, 0, 0, 0, 0], [shard] * 5, 0)
    episode_j = 10_000.0 - fed.uavs[0].energy
    flown = fly(UavState(np.array([0.0, 0.0]), 1000.0), (500.0, 0.0), EnergyParams().fly_j_per_m)
    fly_j = 1000.0 - flown.energy
    dt = time.perf_counter() - t0
    ok = episode_j == 60.0 and fly_j == 150.0 and dt < 1.0
    report(1, ok, f"episode {episode_j} J (want 60), 0.5 km flight {fly_j} J (want 150), {dt:.2f} s")


def test_criterion_02_gradient_suite(report):
    t0 = time.perf_counter()
    results = checks.gradcheck_suite(100, seed=0)
    dt = time.perf_counter() - t0
    worst = max(max(r.max_rel_param, r.max_rel_input) for r in results)
    report(2, len(results) == 100 and worst < 1e-4 and dt < 30,
           f"100 configs, worst relative error {worst:.2e} (< 1e-4), {dt:.1f} s")


def test_criterion_03_fedavg_oracle(report):
    worst, perm_ok = checks.fedavg_oracle(n_sets=50, seed=0)
    report(3, worst <= 1e-12 and perm_ok,
           f"max deviation {worst:.2e} (<= 1e-12), permutation-exact {perm_ok}")


def test_criterion_04_gan_equilibrium(report):
    t0 = time.perf_counter()
    res = checks.gan_equilibrium(seed=0)
    dt = time.perf_counter() - t0
    z = np.abs(res.gen_mean - res.data_mean) / res.std_err
    report(4, res.loss_ok and res.mean_ok and dt < 120,
           f"disc loss {res.disc_loss:.3f} (2 ln 2 +- 0.5), |mean gap| {np.round(z, 2)} SE (<= 3), {dt:.1f} s")


def test_criterion_05_convergence(report, tmp_path):
    t0 = time.perf_counter()
    s = summary(run(full_config("afl-ca2c", 0, 120), tmp_path / "conv"))
    dt = time.perf_counter() - t0
    ep = s["plateau_episode"]
    report(5, ep is not None and ep < 120 and dt < 900,
           f"plateau at episode {ep} (< 120), {dt:.0f} s")


def test_criterion_06_energy_ordering(report, case_study):
    lines, ok = [], True
    for seed in SEEDS:
        e = {m: case_study[m, seed][0]["mean_uav_energy_J"] for m in METHODS}
        strict = case_study["afl-ca2c", seed][0]["strict_subset_fraction"]
        order = e["standalone"] < e["afl-ca2c"] < e["fl-all"]
        margin = e["fl-all"] >= 1.10 * e["afl-ca2c"] if strict >= 0.30 else True
        ok &= order and margin
        lines.append(f"seed {seed}: {e['standalone']:.0f} < {e['afl-ca2c']:.0f} < {e['fl-all']:.0f} J"
                     f" (strict subsets {strict:.2f})")
    secs = sum(t for _, t in case_study.values())
    report(6, ok and secs < 1800, "; ".join(lines) + f"; {secs:.0f} s for 9 runs")


def test_criterion_07_detection_ordering(report, case_study):
    wins, lines = 0, []
    for seed in SEEDS:
        afl = case_study["afl-ca2c", seed][0]["detection"]["metrics"]["f1"]
        alone = case_study["standalone", seed][0]["detection"]["metrics"]["f1"]
        wins += afl >= alone
        lines.append(f"seed {seed}: {afl:.3f} vs {alone:.3f}")
    report(7, wins >= 2, f"AFL-CA2C F1 >= standalone mean F1 in {wins}/3 seeds ({'; '.join(lines)})")


def test_criterion_08_ca2c_oracles(report):
    mism = checks.greedy_oracle(n_states=1000, seed=0)
    fact, joint = checks.joint_vs_factorized(seed=0)
    gap = (joint - fact) / abs(joint)
    report(8, mism == 0 and gap <= 0.05,
           f"greedy mismatches {mism}/1000; factorized {fact:.4f} vs joint {joint:.4f} (gap {gap:.1%})")


def test_criterion_09_degenerate_placement(report):
    t0 = time.perf_counter()
    cov, opt = checks.train_placement(seed=0)
    dt = time.perf_counter() - t0
    report(9, cov >= 0.9 * opt and dt < 300,
           f"trained coverage {cov:.3f} vs grid optimum {opt:.3f} ({cov / opt:.0%}, need 90%), {dt:.0f} s")


def test_criterion_10_determinism(report, tmp_path):
    same = []
    for m in METHODS:
        a = run(full_config(m, 7, 5), tmp_path / f"{m}-a")
        b = run(full_config(m, 7, 5), tmp_path / f"{m}-b")
        same.append(all((a / f).read_bytes() == (b / f).read_bytes() for f in ("rounds.csv", "summary")))
    report(10, all(same), f"byte-identical rounds.csv and summary for {dict(zip(METHODS, same))}")

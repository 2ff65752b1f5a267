import numpy as np
import pytest

from aerofed.agent import CompoundAction, RewardWeights
from aerofed.checks import joint_vs_factorized, tiny_instance
from aerofed.env import EnergyParams, LatencyParams, UavState, place_devices
from aerofed.sim import Scenario, VHetNetSim, cap_moves, device_shards


def make(n_uavs=2, n_devices=4, **kw):
    sc = Scenario(n_uavs=n_uavs, n_devices=n_devices, mobile_frac=0.0, max_move_m=kw.pop("cap", 0.0))
    devices = place_devices(n_devices, 0, 0.0, 0.0)
    uavs = [UavState(np.array([500.0, 500.0]), 1e4) for _ in range(n_uavs)]
    return VHetNetSim(sc, devices, uavs, EnergyParams(), LatencyParams(), RewardWeights(1, 0, 0), 30, **kw)


def test_cap_moves_shortens_long_moves_only():
    cur = np.array([[0.0, 0.0], [0.0, 0.0]])
    tgt = np.array([[300.0, 400.0], [3.0, 4.0]])
    out = cap_moves(cur, tgt, 50.0)
    np.testing.assert_allclose(out, [[30.0, 40.0], [3.0, 4.0]])
    assert cap_moves(cur, tgt, 0.0) is tgt


def test_step_charges_flight_and_reports_coverage():
    sim = make()
    info = sim.step(CompoundAction(0, np.array([0.5, 0.8, 0.5, 0.5])), 0)
    assert sim.uavs[0].spent_fly == pytest.approx(300 * 0.3)
    assert sim.uavs[1].spent_fly == 0.0
    assert info.reward == info.coverage == sim.coverage()
    assert info.selection == (False, False)


def test_flight_cap_applies():
    sim = make(cap=50.0)
    sim.step(CompoundAction(0, np.array([1.0, 1.0, 0.5, 0.5])), 0)
    assert sim.uavs[0].spent_fly == pytest.approx(50 * 0.3)


def test_fixed_subset_mask():
    sim = make(fixed_subset=2)
    mask = sim.eligible_actions()
    assert mask.sum() == 1 and mask[2]


def test_state_tracks_previous_selection():
    sim = make()
    sim.step(CompoundAction(0b10, np.full(4, 0.5)), 0)
    s = sim.observe()
    assert list(s[-4:-2]) == [0.0, 1.0]


def test_device_shards_modulo():
    feats = np.arange(12.0).reshape(6, 2)
    motes = np.array([1, 31, 2, 32, 3, 4])
    shards = device_shards(feats, motes, 30)
    assert len(shards[0]) == 2 and len(shards[1]) == 2 and len(shards[5]) == 0


def test_joint_decode_and_limits():
    sc = Scenario(n_uavs=2, n_devices=3, mobile_frac=0.0)
    _, devices = tiny_instance()
    uavs = [UavState(np.array([400.0, 400.0]), 1e4), UavState(np.array([600.0, 600.0]), 1e4)]
    sim = VHetNetSim(sc, devices, uavs, EnergyParams(), LatencyParams(), RewardWeights(), 30, joint=True)
    assert sim.n_discrete == 4 * 27
    subset, assoc = sim.decode(3 + 4 * (0 + 3 * 1 + 9 * 2))
    assert subset == 3 and list(assoc) == [-1, 0, 1]
    with pytest.raises(ValueError):
        make(n_uavs=3, n_devices=4, joint=True)


def test_factorized_within_five_percent_of_joint():
    fact, joint = joint_vs_factorized(0, grid=np.arange(300.0, 701.0, 100.0))
    assert fact >= joint - 0.05 * abs(joint)

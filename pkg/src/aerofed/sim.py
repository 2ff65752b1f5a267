"""Decision-period simulator driven by the CA2C agent or by a fixed baseline.

Per period: UAVs fly to the commanded positions, devices associate with the
nearest UAV in range, the selected UAVs run one federated episode on the
data of their associated devices, the reward is computed, and mobile devices
move on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import env as envmod
from .agent import StepInfo, compute_reward, encode_state, subset_bits, subset_eligibility
from .data import mote_to_device


@dataclass
class Scenario:
    area: float = 1000.0
    n_uavs: int = 5
    n_devices: int = 30
    radius: float = 200.0
    mobile_frac: float = 0.2
    device_speed: float = 50.0
    haps_x: float = 500.0
    haps_y: float = 500.0
    max_move_m: float = 50.0  # flight per decision period; <= 0 disables the cap


def device_shards(features, motes, n_devices):
    """Split training features by simulated device (mote -> device modulo rule)."""
    dev = mote_to_device(np.asarray(motes, dtype=int), n_devices)
    return [features[dev == d] for d in range(n_devices)]


def cap_moves(current, targets, max_move):
    """Shorten each requested move to at most ``max_move`` metres along its segment."""
    if max_move <= 0:
        return targets
    delta = targets - current
    dist = np.linalg.norm(delta, axis=1, keepdims=True)
    scale = np.minimum(1.0, max_move / np.maximum(dist, 1e-300))
    return current + delta * scale


class VHetNetSim:
    """The world as seen by the HAPS.

    ``federation`` may be ``None``; then no learning happens and both the
    execution time and the accuracy loss are zero (placement-only tasks).
    ``fixed_subset`` pins the admissible discrete actions to one subset.
    ``joint`` switches the discrete action to (subset, explicit association)
    pairs, enumerable only for tiny instances.
    """

    def __init__(self, scenario, devices, uavs, energy, latency, weights, k_rounds,
                 device_data=None, federation=None, seed=0, mobility=True,
                 fixed_subset=None, joint=False):
        self.sc = scenario
        self.devices = devices
        self.uavs = uavs
        self.energy = energy
        self.latency = latency
        self.weights = weights
        self.k_rounds = k_rounds
        self.device_data = device_data
        self.federation = federation
        self.seed = seed
        self.mobility = mobility
        self.fixed_subset = fixed_subset
        self.joint = joint
        self.association = envmod.associate(devices.positions, self.uav_xy(), scenario.radius)
        self.selection = np.zeros(scenario.n_uavs, dtype=bool)
        self.round_logs = []
        if joint and (scenario.n_devices > 3 or scenario.n_uavs > 2):
            raise ValueError("joint discrete actions are limited to <= 3 devices and <= 2 UAVs")

    # -- action space ---------------------------------------------------------
    @property
    def n_subsets(self):
        return 1 << self.sc.n_uavs

    @property
    def n_discrete(self):
        if self.joint:
            return self.n_subsets * (self.sc.n_uavs + 1) ** self.sc.n_devices
        return self.n_subsets

    @property
    def c_dim(self):
        return 2 * self.sc.n_uavs

    @property
    def s_dim(self):
        return len(self.observe())

    def decode(self, d):
        """(subset index, explicit association or None)."""
        if not self.joint:
            return d, None
        subset, code = d % self.n_subsets, d // self.n_subsets
        base = self.sc.n_uavs + 1
        assoc = []
        for _ in range(self.sc.n_devices):
            assoc.append(code % base - 1)
            code //= base
        return subset, np.array(assoc)

    def eligible_actions(self):
        ok = envmod.eligible(self.uavs, self.energy, self.k_rounds)
        subsets = subset_eligibility(ok)
        if self.fixed_subset is not None:
            subsets = np.zeros_like(subsets)
            subsets[self.fixed_subset] = True
        if not self.joint:
            return subsets
        return np.tile(subsets, self.n_discrete // self.n_subsets)

    # -- observation ------------------------------------------------------------
    def uav_xy(self):
        return np.array([u.position for u in self.uavs])

    def observe(self):
        return encode_state(
            self.devices.positions, self.uav_xy(), self.association, self.selection,
            [u.energy for u in self.uavs], self.energy.battery_capacity, self.sc.area,
        )

    def terminal(self):
        return False

    def shards(self):
        if self.device_data is None:
            return [np.zeros((0, 4)) for _ in self.uavs]
        out = []
        for u in range(self.sc.n_uavs):
            parts = [self.device_data[d] for d in np.flatnonzero(self.association == u)]
            out.append(np.concatenate(parts) if parts else np.zeros((0, 4)))
        return out

    def coverage(self):
        return envmod.coverage_capacity(self.devices.positions, self.uav_xy(), self.association,
                                        self.sc.radius)

    def advance_devices(self, t):
        if self.mobility:
            self.devices = envmod.step_mobility(self.devices, [self.seed, t, 41], self.sc.area)

    # -- transition ---------------------------------------------------------------
    def step(self, action, t):
        subset, explicit = self.decode(action.discrete)
        targets = np.clip(np.asarray(action.continuous).reshape(-1, 2), 0, 1) * self.sc.area
        targets = cap_moves(self.uav_xy(), targets, self.sc.max_move_m)
        fly_before = sum(u.spent_fly for u in self.uavs)
        for i, u in enumerate(self.uavs):
            self.uavs[i] = envmod.fly(u, targets[i], self.energy.fly_j_per_m)
        if self.federation is not None:
            self.federation.uavs = self.uavs
        fly_spent = sum(u.spent_fly for u in self.uavs) - fly_before

        if explicit is not None:
            self.association = explicit
        else:
            self.association = envmod.associate(self.devices.positions, self.uav_xy(), self.sc.radius)
        cov = self.coverage()
        self.selection = subset_bits(subset, self.sc.n_uavs)

        if self.federation is not None:
            _, rlog = self.federation.run_episode(self.selection, self.shards(), t)
            rlog.energy_fly = fly_spent
            fed_time, acc_loss = rlog.latency_s, rlog.val_loss
            self.round_logs.append(rlog)
        else:
            rlog, fed_time, acc_loss = None, 0.0, 0.0

        reward = compute_reward(cov, fed_time, acc_loss, self.weights)
        self.advance_devices(t)
        return StepInfo(reward, cov, fed_time, acc_loss, tuple(bool(b) for b in self.selection), rlog)

"""Ground devices, UAVs and the HAPS: geometry, coverage, latency and energy.

Everything lives in the 2-D ground plane of a square area; UAV altitude is
not modeled.  A device is sensed by a UAV when it lies within the coverage
radius of the UAV's ground projection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

AREA = 1000.0
HAPS_XY = (500.0, 500.0)


@dataclass
class EnergyParams:
    e_upload: float = 30.0  # J per model upload
    e_local_round: float = 1.0  # J per local training round
    fly_rate_j_per_km: float = 300.0
    battery_capacity: float = 10_000.0

    def __post_init__(self):
        for name in ("e_upload", "e_local_round", "fly_rate_j_per_km", "battery_capacity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"energy.{name} must be positive")

    @property
    def fly_j_per_m(self):
        return self.fly_rate_j_per_km / 1000.0

    def participation_cost(self, k_rounds):
        return k_rounds * self.e_local_round + self.e_upload


@dataclass
class LatencyParams:
    t_local_round: float | tuple = 0.5  # s per round; scalar or one value per UAV
    upload_a: float = 1.0  # s
    upload_b: float = 0.004  # s per m to the HAPS ground point
    t_agg: float = 0.5
    t_broadcast: float = 0.5

    def __post_init__(self):
        vals = np.atleast_1d(self.t_local_round)
        if np.any(vals < 0) or min(self.upload_a, self.upload_b, self.t_agg, self.t_broadcast) < 0:
            raise ConfigError("latency parameters must be non-negative")

    def local_round_time(self, uav_index):
        t = np.atleast_1d(np.asarray(self.t_local_round, dtype=float))
        return float(t[0] if t.size == 1 else t[uav_index])


@dataclass
class Devices:
    """All ground devices, column-wise."""

    positions: np.ndarray  # (n, 2) metres
    mobile: np.ndarray  # (n,) bool
    speed: np.ndarray  # (n,) metres per decision period
    waypoints: np.ndarray  # (n, 2)

    def __len__(self):
        return len(self.positions)

    def copy(self):
        return Devices(self.positions.copy(), self.mobile.copy(), self.speed.copy(),
                       self.waypoints.copy())


@dataclass
class UavState:
    position: np.ndarray
    energy: float
    spent_fly: float = 0.0
    spent_train: float = 0.0
    spent_upload: float = 0.0

    @property
    def spent(self):
        return self.spent_fly + self.spent_train + self.spent_upload

    def copy(self):
        return replace(self, position=np.array(self.position, dtype=float))


def place_devices(n, seed, mobile_frac=0.2, speed=50.0, area=AREA):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, area, size=(n, 2))
    mobile = np.zeros(n, dtype=bool)
    n_mobile = int(round(mobile_frac * n))
    mobile[rng.permutation(n)[:n_mobile]] = True
    speeds = np.where(mobile, speed, 0.0)
    waypoints = np.where(mobile[:, None], rng.uniform(0, area, size=(n, 2)), pos)
    return Devices(pos, mobile, speeds, waypoints)


def place_uavs(n, seed, energy=10_000.0, area=AREA):
    rng = np.random.default_rng(seed)
    return [UavState(rng.uniform(0, area, size=2), float(energy)) for _ in range(n)]


def step_mobility(devices, seed, area=AREA):
    """Move mobile devices ``speed`` metres toward their waypoint.

    A device that reaches its waypoint stops there and draws a new one.
    """
    rng = np.random.default_rng(seed)
    out = devices.copy()
    for i in np.flatnonzero(devices.mobile & (devices.speed > 0)):
        delta = out.waypoints[i] - out.positions[i]
        dist = float(np.hypot(*delta))
        if dist <= out.speed[i]:
            out.positions[i] = out.waypoints[i]
            out.waypoints[i] = rng.uniform(0, area, size=2)
        else:
            out.positions[i] = out.positions[i] + delta * (out.speed[i] / dist)
    np.clip(out.positions, 0.0, area, out=out.positions)
    return out


def covered(device_xy, uav_xy, radius):
    d = np.asarray(device_xy, dtype=float) - np.asarray(uav_xy, dtype=float)
    return bool(np.hypot(*d) <= radius)


def _distances(dev_xy, uav_xy):
    dev_xy = np.asarray(dev_xy, dtype=float).reshape(-1, 2)
    uav_xy = np.asarray(uav_xy, dtype=float).reshape(-1, 2)
    return np.linalg.norm(dev_xy[:, None, :] - uav_xy[None, :, :], axis=2)


def coverage_capacity(device_xy, uav_xy, association, radius):
    """Fraction of devices covered by the UAV they are associated with."""
    assoc = np.asarray(association, dtype=int)
    if assoc.size == 0:
        return 0.0
    if radius <= 0:
        raise ConfigError("coverage radius must be positive")
    d = _distances(device_xy, uav_xy)
    ok = assoc >= 0
    hit = np.zeros(len(assoc), dtype=bool)
    hit[ok] = d[np.flatnonzero(ok), assoc[ok]] <= radius
    return float(hit.mean())


def associate(device_xy, uav_xy, radius):
    """Nearest UAV within ``radius`` per device, -1 if none.  Ties go to the lower index."""
    d = _distances(device_xy, uav_xy)
    if d.shape[1] == 0:
        return np.full(d.shape[0], -1)
    best = np.argmin(d, axis=1)  # argmin returns the first minimum
    in_range = d[np.arange(len(d)), best] <= radius
    return np.where(in_range, best, -1)


def fly(uav, target, fly_j_per_m=0.3):
    """Fly toward ``target``, stopping early if the battery runs dry."""
    target = np.asarray(target, dtype=float)
    delta = target - uav.position
    dist = float(np.hypot(*delta))
    out = uav.copy()
    if dist == 0.0:
        return out
    cost = dist * fly_j_per_m
    if cost <= uav.energy:
        out.position = target.copy()
        out.energy = uav.energy - cost
        out.spent_fly += cost
    else:
        reach = uav.energy / fly_j_per_m
        out.position = uav.position + delta * (reach / dist)
        out.spent_fly += uav.energy
        out.energy = 0.0
    return out


def training_energy(k_rounds, uploads, params=None):
    params = params or EnergyParams()
    if k_rounds < 0 or uploads < 0:
        raise ConfigError("round and upload counts must be non-negative")
    return k_rounds * params.e_local_round + uploads * params.e_upload


def upload_time(uav_xy, latency, haps_xy=HAPS_XY):
    dist = float(np.hypot(*(np.asarray(uav_xy, dtype=float) - np.asarray(haps_xy))))
    return latency.upload_a + latency.upload_b * dist


def fed_round_time(selected, uav_positions, latency, k_rounds, haps_xy=HAPS_XY):
    """Federated execution time of one aggregation round.

    ``selected`` are UAV indices into ``uav_positions``.  The slowest
    selected UAV (local rounds plus upload) gates aggregation; with no
    UAV selected only aggregation and broadcast remain.
    """
    tail = latency.t_agg + latency.t_broadcast
    sel = list(selected)
    if not sel:
        return tail
    finish = [
        k_rounds * latency.local_round_time(u) + upload_time(uav_positions[u], latency, haps_xy)
        for u in sel
    ]
    return max(finish) + tail


def eligible(uavs, energy, k_rounds):
    """Mask of UAVs holding enough energy for one full participation."""
    need = energy.participation_cost(k_rounds)
    return np.array([u.energy >= need for u in uavs], dtype=bool)


def snapshot(period, devices, uavs, association):
    """Plain dict describing the world at one decision period."""
    return {
        "period": int(period),
        "devices": [[round(float(x), 6), round(float(y), 6)] for x, y in devices.positions],
        "uavs": [
            {"position": [round(float(v), 6) for v in u.position], "energy": round(float(u.energy), 6)}
            for u in uavs
        ],
        "association": [int(a) for a in association],
    }


def write_snapshot_line(fh, snap):
    fh.write(json.dumps(snap, sort_keys=True) + "\n")

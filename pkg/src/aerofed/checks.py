"""Brute-force and finite-difference checks of the learning machinery.

Each check compares a production code path against an independent
reference: central finite differences, an explicit weighted mean, an
exhaustive enumeration or a grid search.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import env as envmod
from .afl import aggregate
from .agent import (
    AgentHyper,
    AgentNets,
    RewardWeights,
    compute_reward,
    select_action,
    subset_bits,
    train,
)
from .nn import MlpSpec, mlp_backward, mlp_forward, mlp_init
from .sim import Scenario, VHetNetSim

FD_STEP = 1e-5
REL_FLOOR = 1e-6


def relative_error(analytic, numeric, floor=REL_FLOOR):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_param_grad(spec, params, x, upstream, h=FD_STEP):
    """Central differences of sum(forward(params, x) * upstream)."""
    f = lambda p: float(np.sum(mlp_forward(spec, p, x) * upstream))
    grad = np.zeros_like(params)
    for i in range(params.size):
        p = params.copy()
        p[i] += h
        up = f(p)
        p[i] -= 2 * h
        grad[i] = (up - f(p)) / (2 * h)
    return grad


def numeric_input_grad(spec, params, x, upstream, h=FD_STEP):
    f = lambda xx: float(np.sum(mlp_forward(spec, params, xx) * upstream))
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += h
        up = f(xp)
        xp[idx] -= 2 * h
        grad[idx] = (up - f(xp)) / (2 * h)
    return grad


@dataclass
class GradResult:
    spec: MlpSpec
    max_rel_param: float
    max_rel_input: float


def random_spec(rng, activations=("linear", "tanh", "sigmoid"), max_layers=4, max_width=6):
    n_layers = int(rng.integers(2, max_layers + 1))
    sizes = tuple(int(rng.integers(1, max_width + 1)) for _ in range(n_layers))
    acts = tuple(str(rng.choice(activations)) for _ in range(n_layers - 1))
    return MlpSpec(sizes, acts)


def gradcheck_one(spec, seed, batch=3):
    rng = np.random.default_rng(seed)
    params = mlp_init(spec, seed) + rng.normal(0, 0.1, spec.n_params)
    x = rng.normal(size=(batch, spec.n_in))
    up = rng.normal(size=(batch, spec.n_out))
    if "relu" in spec.activations:
        x = _nudge_off_kinks(spec, params, x)
    g_p, g_x = mlp_backward(spec, params, x, up)
    n_p = numeric_param_grad(spec, params, x, up)
    n_x = numeric_input_grad(spec, params, x, up)
    return GradResult(spec, float(relative_error(g_p, n_p).max()),
                      float(relative_error(g_x, n_x).max()))


def _nudge_off_kinks(spec, params, x, margin=1e-3, tries=50):
    """Redraw inputs until no relu pre-activation sits within ``margin`` of zero."""
    from .nn import forward_trace

    rng = np.random.default_rng(0)
    for _ in range(tries):
        zs, _ = forward_trace(spec, params, x)
        near = any(np.any(np.abs(z) < margin) for z, a in zip(zs, spec.activations) if a == "relu")
        if not near:
            return x
        x = x + rng.normal(0, 0.05, size=x.shape)
    return x


def gradcheck_suite(n_configs=100, seed=0, activations=("linear", "tanh", "sigmoid")):
    rng = np.random.default_rng(seed)
    return [gradcheck_one(random_spec(rng, activations), [seed, i]) for i in range(n_configs)]


# -- federated averaging --------------------------------------------------------

def reference_weighted_mean(vectors, weights):
    total = math.fsum(weights)
    return np.array([
        math.fsum(w * v[j] for v, w in zip(vectors, weights)) / total
        for j in range(len(vectors[0]))
    ])


def fedavg_oracle(n_sets=50, seed=0, max_members=5, max_params=200):
    """Max deviation from the reference mean and whether permutations agree exactly."""
    rng = np.random.default_rng(seed)
    worst, perm_ok = 0.0, True
    for _ in range(n_sets):
        m = int(rng.integers(1, max_members + 1))
        n_g, n_d = int(rng.integers(1, max_params + 1)), int(rng.integers(1, max_params + 1))
        subs = [((rng.normal(size=n_g), rng.normal(size=n_d)), int(rng.integers(1, 500)))
                for _ in range(m)]
        out = aggregate(subs)
        sizes = [float(n) for _, n in subs]
        ref_g = reference_weighted_mean([s[0][0] for s in subs], sizes)
        ref_d = reference_weighted_mean([s[0][1] for s in subs], sizes)
        worst = max(worst, float(np.abs(out.generator - ref_g).max()),
                    float(np.abs(out.discriminator - ref_d).max()))
        perm = [subs[i] for i in rng.permutation(m)]
        out2 = aggregate(perm)
        perm_ok &= bool(np.array_equal(out.generator, out2.generator)
                        and np.array_equal(out.discriminator, out2.discriminator))
    return worst, perm_ok


# -- CA2C discrete choice ----------------------------------------------------------

def enumerate_greedy(nets, s, eligible_mask):
    """Loop over every admissible subset, one forward pass at a time."""
    best_d, best_q = None, -np.inf
    for d in range(nets.n_discrete):
        if not eligible_mask[d]:
            continue
        onehot = np.zeros(nets.n_discrete)
        onehot[d] = 1.0
        xa = np.concatenate([s, onehot])
        c = mlp_forward(nets.actor.spec, nets.actor.params, xa)
        q = float(mlp_forward(nets.critic.spec, nets.critic.params, np.concatenate([xa, c]))[0])
        if q > best_q:
            best_d, best_q = d, q
    return best_d


def greedy_oracle(n_states=1000, seed=0, n_devices=30, n_uavs=5):
    """Number of random states where vectorized greedy selection disagrees with enumeration."""
    from .agent import state_dim

    rng = np.random.default_rng(seed)
    nets = AgentNets.create(state_dim(n_devices, n_uavs), 1 << n_uavs, 2 * n_uavs,
                            AgentHyper(hidden=(32, 32)), seed)
    mismatches = 0
    for _ in range(n_states):
        s = rng.uniform(size=state_dim(n_devices, n_uavs))
        mask = rng.random(1 << n_uavs) < 0.7
        mask[0] = True
        a = select_action(nets, s, 0.0, 0.0, mask, rng)
        mismatches += a.discrete != enumerate_greedy(nets, s, mask)
    return mismatches


# -- joint vs factorized discrete actions -----------------------------------------------

def tiny_instance(seed=0):
    rng = np.random.default_rng(seed)
    sc = Scenario(n_uavs=2, n_devices=3, mobile_frac=0.0, max_move_m=0.0)
    devices = envmod.place_devices(3, [seed, 1], 0.0, 0.0)
    # keep the devices reasonably close so sharing a UAV matters
    devices.positions = rng.uniform(300, 700, size=(3, 2))
    devices.waypoints = devices.positions.copy()
    return sc, devices


def surrogate_acc_loss(selected, association, covered_mask, loss_scale=2 * math.log(2)):
    """Accuracy-loss stand-in: falls with the share of covered devices feeding selected UAVs."""
    feeding = sum(1 for d, u in enumerate(association)
                  if u >= 0 and covered_mask[d] and selected[u])
    return loss_scale * (1.0 - 0.5 * feeding / len(association))


def _coverage_mask(dists, assoc, radius):
    return np.array([a >= 0 and dists[i, a] <= radius for i, a in enumerate(assoc)])


def joint_vs_factorized(seed=0, grid=None, weights=None, k=30):
    """Best reward over a position grid: factorized association rule vs exhaustive joint search.

    Returns ``(best_factorized, best_joint)``.
    """
    sc, devices = tiny_instance(seed)
    weights = weights or RewardWeights()
    latency = envmod.LatencyParams()
    grid = np.arange(200.0, 800.0 + 1e-9, 100.0) if grid is None else grid
    points = np.array(list(itertools.product(grid, grid)))
    all_assoc = [np.array(a) for a in itertools.product(range(-1, sc.n_uavs), repeat=sc.n_devices)]
    subsets = [(s, subset_bits(s, sc.n_uavs)) for s in range(1 << sc.n_uavs)]
    best_fact, best_joint = -np.inf, -np.inf
    for i, j in itertools.product(range(len(points)), repeat=2):
        uav_xy = np.array([points[i], points[j]])
        dists = np.linalg.norm(devices.positions[:, None, :] - uav_xy[None], axis=2)
        rule = envmod.associate(devices.positions, uav_xy, sc.radius)
        for _, sel in subsets:
            t = envmod.fed_round_time(np.flatnonzero(sel), uav_xy, latency, k)

            def reward(assoc):
                mask = _coverage_mask(dists, assoc, sc.radius)
                return compute_reward(float(mask.mean()), t,
                                      surrogate_acc_loss(sel, assoc, mask), weights)

            best_fact = max(best_fact, reward(rule))
            for assoc in all_assoc:
                best_joint = max(best_joint, reward(assoc))
    return best_fact, best_joint


# -- placement ----------------------------------------------------------------------

def grid_optimal_coverage(device_xy, n_uavs, radius, area=1000.0, step=10.0):
    """Best coverage fraction over UAV positions on a grid (brute force over coverage masks)."""
    grid = np.arange(0.0, area + 1e-9, step)
    pts = np.array(list(itertools.product(grid, grid)))
    d = np.linalg.norm(pts[:, None, :] - np.asarray(device_xy)[None], axis=2)
    masks = np.unique(((d <= radius) * (1 << np.arange(len(device_xy)))).sum(axis=1))
    best = 0
    for combo in itertools.combinations_with_replacement(masks, n_uavs):
        m = 0
        for c in combo:
            m |= int(c)
        best = max(best, bin(m).count("1"))
    return best / len(device_xy)


def placement_instance(seed=0, n_devices=6, n_uavs=2):
    sc = Scenario(n_uavs=n_uavs, n_devices=n_devices, mobile_frac=0.0, max_move_m=0.0)
    devices = envmod.place_devices(n_devices, [seed, 1], 0.0, 0.0)
    uavs = envmod.place_uavs(n_uavs, [seed, 2], energy=1e9)
    return sc, devices, uavs


def train_placement(seed=0, periods=5000, warmup=3000, eval_periods=5):
    """Coverage-only CA2C with gamma = 0 on a static instance.

    The reward is piecewise constant in the UAV positions, so the run opens
    with ``warmup`` periods of uniform random placements before the actor
    starts to follow the critic.  Returns ``(trained_coverage, grid_optimum)``.
    """
    sc, devices, uavs = placement_instance(seed)
    energy = envmod.EnergyParams(battery_capacity=1e9)
    weights = RewardWeights(coverage=1.0, time=0.0, accuracy=0.0)
    sim = VHetNetSim(sc, devices, uavs, energy, envmod.LatencyParams(), weights, 30,
                     seed=seed, mobility=False, fixed_subset=0)
    hyper = AgentHyper(gamma=0.0, sigma=0.1, hidden=(64, 64), batch_size=64,
                       lr_actor=1e-3, lr_critic=1e-3, tau=0.01,
                       warmup_periods=warmup, updates_per_period=3)
    nets = AgentNets.create(sim.s_dim, sim.n_discrete, sim.c_dim, hyper, seed)
    nets, _, _ = train(sim, nets, periods, seed)
    rng = np.random.default_rng(0)
    for t in range(eval_periods):
        a = select_action(nets, sim.observe(), 0.0, 0.0, sim.eligible_actions(), rng)
        sim.step(a, periods + t)
    optimum = grid_optimal_coverage(devices.positions, sc.n_uavs, sc.radius)
    return sim.coverage(), optimum


# -- GAN equilibrium ------------------------------------------------------------------

@dataclass
class EquilibriumResult:
    disc_loss: float
    gen_mean: np.ndarray
    data_mean: np.ndarray
    std_err: np.ndarray

    @property
    def loss_ok(self):
        return abs(self.disc_loss - 2 * math.log(2)) <= 0.5

    @property
    def mean_ok(self):
        return bool(np.all(np.abs(self.gen_mean - self.data_mean) <= 3 * self.std_err))


def gan_equilibrium(seed=0, n_eval=2000, mean=(1.0, -2.0), std=(0.5, 1.5),
                    phases=((1e-3, 2000), (2e-4, 2000), (5e-5, 2000)), avg_every=10):
    """Train one GAN on a 2-D Gaussian and measure how close it sits to equilibrium.

    Learning rate steps down through ``phases``; parameters are averaged
    uniformly over the last phase (snapshots every ``avg_every`` rounds), which
    damps the rotation GAN iterates show around the equilibrium.  The standard
    error per coordinate is that of a difference of two ``n_eval``-sample means.
    """
    from .gan import GanHyper, GanModels, disc_loss, local_train, sample_noise

    rng = np.random.default_rng([seed, 61])
    mean, std = np.asarray(mean), np.asarray(std)
    data = rng.normal(mean, std, size=(8000, 2))
    hyper = GanHyper(n_features=2, latent_dim=4, hidden=(32, 32), batch_size=64)
    models = GanModels.create(hyper, [seed, 62])
    for net in (models.generator, models.discriminator):
        net.adam.beta1 = 0.5
    g_sum = d_sum = 0.0
    n_snap = 0
    for i, (lr, rounds) in enumerate(phases):
        models.generator.adam.lr = models.discriminator.adam.lr = lr
        last = i == len(phases) - 1
        chunk = avg_every if last else rounds
        for j in range(rounds // chunk):
            models, _ = local_train(models, data, hyper, [seed, 63, i, j], rounds=chunk)
            if last:
                g_sum = g_sum + models.generator.params
                d_sum = d_sum + models.discriminator.params
                n_snap += 1
    models = models.with_params(g_sum / n_snap, d_sum / n_snap, models.version)
    real = rng.normal(mean, std, size=(n_eval, 2))
    z = sample_noise(rng, n_eval, hyper.latent_dim)
    fake = models.generator(z)
    se = np.sqrt(real.var(axis=0, ddof=1) / n_eval + fake.var(axis=0, ddof=1) / n_eval)
    return EquilibriumResult(disc_loss(models, real, z), fake.mean(axis=0), real.mean(axis=0), se)

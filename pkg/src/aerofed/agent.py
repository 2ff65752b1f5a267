"""Compound-action actor-critic (CA2C) for UAV selection and placement.

The discrete part of an action is an index ``d`` (by default the bitmask of
selected UAVs); the continuous part ``c`` holds normalized UAV target
positions.  The actor proposes ``c`` for a given state and discrete choice,
the critic scores ``(state, d, c)``, and the discrete choice is the
critic's argmax over the proposals of all admissible ``d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nn import MlpSpec, Net, forward_trace, mlp_backward, soft_update

LN2 = math.log(2.0)


@dataclass
class AgentHyper:
    gamma: float = 0.95
    tau: float = 0.01
    eps_start: float = 0.9
    eps_end: float = 0.05
    eps_decay_periods: int = 100
    sigma: float = 0.1
    batch_size: int = 64
    buffer_capacity: int = 10_000
    hidden: tuple = (64, 64)
    hidden_act: str = "tanh"
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    clip_norm: float = 10.0
    warmup_periods: int = 0  # uniform-random actions, critic-only updates
    updates_per_period: int = 1

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.tau <= 1.0:
            raise ConfigError("agent.gamma and agent.tau must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ConfigError("agent.batch_size and agent.buffer_capacity must be positive")
        if self.sigma < 0:
            raise ConfigError("agent.sigma must be non-negative")

    def epsilon(self, t):
        if self.eps_decay_periods <= 0:
            return self.eps_end
        frac = min(1.0, t / self.eps_decay_periods)
        return self.eps_start + (self.eps_end - self.eps_start) * frac


@dataclass
class RewardWeights:
    coverage: float = 1.0
    time: float = 0.5
    accuracy: float = 0.5
    time_horizon_s: float = 60.0
    loss_scale: float = 2 * LN2

    def __post_init__(self):
        if min(self.coverage, self.time, self.accuracy) < 0:
            raise ConfigError("reward weights must be non-negative")


def compute_reward(coverage, fed_time, acc_loss, weights):
    w = weights
    r = w.coverage * coverage
    if w.time:
        r -= w.time * fed_time / w.time_horizon_s
    if w.accuracy:
        r -= w.accuracy * acc_loss / w.loss_scale
    return float(r)


# -- state ------------------------------------------------------------------

def encode_state(device_xy, uav_xy, prev_association, prev_selection, energies, capacity,
                 area=1000.0):
    """Flat state vector with every component in [0, 1].

    Association entries are ``(uav + 1) / n_uavs`` with 0 for unassociated.
    """
    n_uavs = len(uav_xy)
    assoc = (np.asarray(prev_association, dtype=float) + 1.0) / n_uavs
    parts = [
        np.clip(np.asarray(device_xy, dtype=float).ravel() / area, 0, 1),
        np.clip(np.asarray(uav_xy, dtype=float).ravel() / area, 0, 1),
        assoc,
        np.asarray(prev_selection, dtype=float),
        np.clip(np.asarray(energies, dtype=float) / capacity, 0, 1),
    ]
    return np.concatenate(parts)


def state_dim(n_devices, n_uavs):
    return 2 * n_devices + 2 * n_uavs + n_devices + n_uavs + n_uavs


def subset_bits(d, n_uavs):
    return np.array([(d >> u) & 1 for u in range(n_uavs)], dtype=bool)


def subset_eligibility(uav_ok):
    """Admissible subsets: those containing only eligible UAVs (the empty set always is)."""
    uav_ok = np.asarray(uav_ok, dtype=bool)
    n = len(uav_ok)
    bad = sum(1 << u for u in range(n) if not uav_ok[u])
    return np.array([(d & bad) == 0 for d in range(1 << n)], dtype=bool)


@dataclass
class CompoundAction:
    discrete: int
    continuous: np.ndarray


# -- replay -------------------------------------------------------------------

class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions with uniform sampling."""

    def __init__(self, capacity, s_dim, c_dim, n_discrete):
        self.capacity = capacity
        self.s = np.zeros((capacity, s_dim))
        self.d = np.zeros(capacity, dtype=int)
        self.c = np.zeros((capacity, c_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, s_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.elig2 = np.ones((capacity, n_discrete), dtype=bool)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def add(self, s, action, reward, s2, done=False, next_eligible=None):
        i = self._next
        self.s[i], self.d[i], self.c[i] = s, action.discrete, action.continuous
        self.r[i], self.s2[i], self.done[i] = reward, s2, done
        self.elig2[i] = True if next_eligible is None else next_eligible
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, rng, n):
        return rng.integers(0, self.size, n)

    def batch(self, idx):
        return Batch(self.s[idx], self.d[idx], self.c[idx], self.r[idx], self.s2[idx],
                     self.done[idx], self.elig2[idx])


@dataclass
class Batch:
    s: np.ndarray
    d: np.ndarray
    c: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    elig2: np.ndarray

    def __len__(self):
        return len(self.r)


# -- networks -----------------------------------------------------------------

@dataclass
class AgentNets:
    actor: Net
    critic: Net
    actor_target: np.ndarray
    critic_target: np.ndarray
    n_discrete: int
    c_dim: int
    hyper: AgentHyper = field(default_factory=AgentHyper)

    @classmethod
    def create(cls, s_dim, n_discrete, c_dim, hyper, seed):
        act = hyper.hidden_act
        a_spec = MlpSpec.build(s_dim + n_discrete, hyper.hidden, c_dim, act, "sigmoid")
        q_spec = MlpSpec.build(s_dim + n_discrete + c_dim, hyper.hidden, 1, act, "linear")
        actor = Net.create(a_spec, [seed, 21], lr=hyper.lr_actor)
        critic = Net.create(q_spec, [seed, 22], lr=hyper.lr_critic)
        return cls(actor, critic, actor.params.copy(), critic.params.copy(), n_discrete, c_dim, hyper)

    def actor_inputs(self, s, d):
        s = np.atleast_2d(s)
        onehot = np.zeros((len(s), self.n_discrete))
        onehot[np.arange(len(s)), np.asarray(d)] = 1.0
        return np.hstack([s, onehot])

    def propose(self, s, d, target=False):
        x = self.actor_inputs(s, d)
        p = self.actor_target if target else self.actor.params
        return forward_trace(self.actor.spec, p, x)[1][-1]

    def q_values(self, s, d, c, target=False):
        x = np.hstack([self.actor_inputs(s, d), np.atleast_2d(c)])
        p = self.critic_target if target else self.critic.params
        return forward_trace(self.critic.spec, p, x)[1][-1][:, 0]

    def greedy_scores(self, s, candidates, target=False):
        """Actor proposals and critic values for each candidate discrete action of one state."""
        candidates = np.asarray(candidates, dtype=int)
        ss = np.repeat(np.atleast_2d(s), len(candidates), axis=0)
        c = self.propose(ss, candidates, target)
        return c, self.q_values(ss, candidates, c, target)


def select_action(nets, s, eps, sigma, eligible_mask, rng):
    """Greedy-in-Q discrete choice with epsilon exploration and Gaussian noise on c."""
    cands = np.flatnonzero(eligible_mask)
    if cands.size == 0:
        raise ConfigError("no admissible discrete action")
    c_all, q = nets.greedy_scores(s, cands)
    k = int(np.argmax(q))  # first maximum -> smallest index among ties
    if eps > 0 and rng.random() < eps:
        k = int(rng.integers(cands.size))
    c = c_all[k].copy()
    if sigma > 0:
        c = np.clip(c + rng.normal(0.0, sigma, size=c.shape), 0.0, 1.0)
    return CompoundAction(int(cands[k]), c)


def random_action(nets, eligible_mask, rng):
    """Uniform admissible discrete choice with uniform continuous part."""
    cands = np.flatnonzero(eligible_mask)
    if cands.size == 0:
        raise ConfigError("no admissible discrete action")
    return CompoundAction(int(rng.choice(cands)), rng.uniform(0.0, 1.0, nets.c_dim))


def critic_targets(nets, batch):
    """r + gamma * max_d' Q_target(s', d', mu_target(s', d')) over admissible d'."""
    gamma = nets.hyper.gamma
    y = batch.r.astype(float).copy()
    if gamma == 0.0:
        return y
    live = np.flatnonzero(~batch.done)
    if live.size == 0:
        return y
    n_d = nets.n_discrete
    s2 = np.repeat(batch.s2[live], n_d, axis=0)
    d2 = np.tile(np.arange(n_d), live.size)
    c2 = nets.propose(s2, d2, target=True)
    q2 = nets.q_values(s2, d2, c2, target=True).reshape(live.size, n_d)
    q2 = np.where(batch.elig2[live], q2, -np.inf)
    y[live] += gamma * q2.max(axis=1)
    return y


def critic_loss(nets, batch, y=None):
    y = critic_targets(nets, batch) if y is None else y
    q = nets.q_values(batch.s, batch.d, batch.c)
    return float(np.mean((q - y) ** 2))


def critic_update(nets, batch):
    """One Adam step on the TD mean-squared error, then a soft target update."""
    y = critic_targets(nets, batch)
    x = np.hstack([nets.actor_inputs(batch.s, batch.d), batch.c])
    crit = nets.critic
    trace = forward_trace(crit.spec, crit.params, x)
    q = trace[1][-1][:, 0]
    up = (2.0 / len(batch)) * (q - y)
    grad, _ = mlp_backward(crit.spec, crit.params, x, up[:, None], trace=trace)
    crit.apply_grad(grad, nets.hyper.clip_norm)
    nets.critic_target = soft_update(nets.critic_target, crit.params, nets.hyper.tau)
    return float(np.mean((q - y) ** 2))


def actor_objective(nets, batch):
    """Mean critic value of the actor's proposals on the batch states."""
    c = nets.propose(batch.s, batch.d)
    return float(nets.q_values(batch.s, batch.d, c).mean())


def actor_gradient(nets, batch):
    """Gradient of :func:`actor_objective` w.r.t. the actor parameters."""
    actor, crit = nets.actor, nets.critic
    xa = nets.actor_inputs(batch.s, batch.d)
    ta = forward_trace(actor.spec, actor.params, xa)
    c = ta[1][-1]
    xq = np.hstack([xa, c])
    tq = forward_trace(crit.spec, crit.params, xq)
    up = np.full((len(batch), 1), 1.0 / len(batch))
    _, dxq = mlp_backward(crit.spec, crit.params, xq, up, trace=tq)
    dc = dxq[:, -nets.c_dim:]
    grad, _ = mlp_backward(actor.spec, actor.params, xa, dc, trace=ta)
    return grad


def actor_update(nets, batch):
    """Ascend the critic along the continuous action, then soft-update the target actor."""
    grad = actor_gradient(nets, batch)
    nets.actor.apply_grad(-grad, nets.hyper.clip_norm)
    nets.actor_target = soft_update(nets.actor_target, nets.actor.params, nets.hyper.tau)
    return grad


AGENT_HEADER = ("t", "reward", "coverage", "fed_time_s", "val_loss", "selection_mask", "eps")


@dataclass
class StepInfo:
    reward: float
    coverage: float
    fed_time_s: float
    val_loss: float
    selection: tuple
    round_log: object = None


def train(sim, nets, periods, seed, buffer=None, on_period=None):
    """Interact with ``sim`` for ``periods`` decision periods, learning as it goes.

    ``sim`` must provide ``observe()``, ``eligible_actions()``, ``step(action, t)``
    returning a :class:`StepInfo`, and ``terminal()``.  Returns
    ``(nets, rows, buffer)`` where ``rows`` follow :data:`AGENT_HEADER`.
    """
    hyper = nets.hyper
    rng = np.random.default_rng([seed, 31])
    s_dim = nets.actor.spec.n_in - nets.n_discrete
    if buffer is None:
        buffer = ReplayBuffer(hyper.buffer_capacity, s_dim, nets.c_dim, nets.n_discrete)
    rows = []
    s = sim.observe()
    for t in range(periods):
        eps = hyper.epsilon(t)
        if t < hyper.warmup_periods:
            action = random_action(nets, sim.eligible_actions(), rng)
        else:
            action = select_action(nets, s, eps, hyper.sigma, sim.eligible_actions(), rng)
        info = sim.step(action, t)
        s2 = sim.observe()
        done = sim.terminal()
        buffer.add(s, action, info.reward, s2, done, sim.eligible_actions())
        if len(buffer) >= hyper.batch_size:
            for _ in range(hyper.updates_per_period):
                batch = buffer.batch(buffer.sample_indices(rng, hyper.batch_size))
                critic_update(nets, batch)
                # the actor only climbs the critic once warmup has given it something to climb
                if t >= hyper.warmup_periods:
                    actor_update(nets, batch)
        mask = "".join("1" if b else "0" for b in info.selection)
        rows.append((t, info.reward, info.coverage, info.fed_time_s, info.val_loss, mask, eps))
        if on_period is not None:
            on_period(t, info, rows[-1])
        s = s2
        if done:
            break
    return nets, rows, buffer

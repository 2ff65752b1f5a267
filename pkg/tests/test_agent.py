import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aerofed.agent import (
    AgentHyper, AgentNets, Batch, CompoundAction, ReplayBuffer, RewardWeights, actor_gradient,
    actor_objective, actor_update, compute_reward, critic_loss, critic_targets, critic_update,
    encode_state, select_action, state_dim, subset_bits, subset_eligibility, train,
)
from aerofed.checks import enumerate_greedy
from aerofed.env import EnergyParams, LatencyParams, UavState, place_devices
from aerofed.errors import ConfigError
from aerofed.sim import Scenario, VHetNetSim

S_DIM, N_D, C_DIM = 6, 4, 2


def nets(gamma=0.9, tau=0.1, seed=0, **kw):
    return AgentNets.create(S_DIM, N_D, C_DIM, AgentHyper(gamma=gamma, tau=tau, hidden=(8, 8), **kw), seed)


def batch(n=16, seed=0, done=None):
    rng = np.random.default_rng(seed)
    return Batch(rng.uniform(size=(n, S_DIM)), rng.integers(0, N_D, n), rng.uniform(size=(n, C_DIM)),
                 rng.normal(size=n), rng.uniform(size=(n, S_DIM)),
                 np.zeros(n, bool) if done is None else done, np.ones((n, N_D), bool))


def test_reward_examples():
    assert compute_reward(0.7, 12.0, 1.0, RewardWeights(1, 0, 0)) == 0.7
    assert compute_reward(0.7, 12.0, 1.0, RewardWeights(0, 0, 0)) == 0.0
    w = RewardWeights()
    assert compute_reward(0.5, 20.0, 1.0, w) < compute_reward(0.5, 10.0, 1.0, w)
    with pytest.raises(ConfigError):
        RewardWeights(coverage=-1.0)


def test_state_layout():
    s = encode_state(np.full((30, 2), 500.0), np.zeros((5, 2)), np.full(30, -1), np.zeros(5), [1e4] * 5, 1e4)
    assert s.shape == (state_dim(30, 5),) == (110,)
    assert np.all((s >= 0) & (s <= 1))
    assert np.all(s[70:100] == 0)  # unassociated devices encode to 0


def test_subset_helpers():
    assert list(subset_bits(0b10110, 5)) == [False, True, True, False, True]
    ok = subset_eligibility([True, False, True])
    assert ok[0] and ok[0b101] and not ok[0b010] and not ok[0b111]


def test_greedy_is_deterministic_and_matches_enumeration():
    n = nets()
    rng = np.random.default_rng(0)
    s = rng.uniform(size=S_DIM)
    mask = np.ones(N_D, bool)
    a = select_action(n, s, 0.0, 0.0, mask, np.random.default_rng(1))
    b = select_action(n, s, 0.0, 0.0, mask, np.random.default_rng(2))
    assert a.discrete == b.discrete and np.array_equal(a.continuous, b.continuous)
    assert a.discrete == enumerate_greedy(n, s, mask)


def test_single_eligible_subset_chosen():
    mask = np.zeros(N_D, bool)
    mask[2] = True
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert select_action(nets(), rng.uniform(size=S_DIM), 0.9, 0.3, mask, rng).discrete == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 1))
def test_never_selects_ineligible(seed, eps):
    rng = np.random.default_rng(seed)
    mask = rng.random(N_D) < 0.5
    mask[0] = True
    a = select_action(nets(), rng.uniform(size=S_DIM), eps, 0.2, mask, rng)
    assert mask[a.discrete] and np.all((a.continuous >= 0) & (a.continuous <= 1))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 5.0), st.floats(-3, 3))
def test_argmax_invariant_under_increasing_transform(seed, scale, shift):
    n = nets(seed=seed % 100)
    s = np.random.default_rng(seed).uniform(size=S_DIM)
    mask = np.ones(N_D, bool)
    base = select_action(n, s, 0.0, 0.0, mask, np.random.default_rng(0)).discrete
    # a positive affine map of the linear head transforms every Q the same way
    crit = n.critic.params
    n_last = n.critic.spec.layer_sizes[-2] + 1
    crit[-n_last:-1] *= scale
    crit[-1] = crit[-1] * scale + shift
    assert select_action(n, s, 0.0, 0.0, mask, np.random.default_rng(0)).discrete == base


def test_gamma_zero_and_terminal_targets():
    b = batch()
    assert np.array_equal(critic_targets(nets(gamma=0.0), b), b.r)
    done = np.ones(16, bool)
    bd = batch(done=done)
    assert np.array_equal(critic_targets(nets(gamma=0.95), bd), bd.r)
    mixed = batch(done=np.arange(16) % 2 == 0)
    y = critic_targets(nets(gamma=0.95), mixed)
    assert np.array_equal(y[::2], mixed.r[::2]) and not np.array_equal(y[1::2], mixed.r[1::2])


def test_critic_step_lowers_frozen_batch_loss():
    n, b = nets(lr_critic=1e-3), batch(32)
    y = critic_targets(n, b)
    before = critic_loss(n, b, y)
    critic_update(n, b)
    assert critic_loss(n, b, y) < before


def test_actor_gradient_zero_when_critic_ignores_c():
    n = nets()
    spec = n.critic.spec
    n_in, n_h = spec.layer_sizes[0], spec.layer_sizes[1]
    W = n.critic.params[: n_in * n_h].reshape(n_h, n_in)
    W[:, -C_DIM:] = 0.0
    assert not actor_gradient(n, batch()).any()


def test_actor_gradient_matches_finite_differences():
    n, b = nets(seed=3), batch(8, seed=5)
    g = actor_gradient(n, b)
    h, p0 = 1e-6, n.actor.params.copy()
    rng = np.random.default_rng(0)
    for i in rng.choice(p0.size, 25, replace=False):
        n.actor.params = p0.copy()
        n.actor.params[i] += h
        up = actor_objective(n, b)
        n.actor.params[i] -= 2 * h
        num = (up - actor_objective(n, b)) / (2 * h)
        assert abs(g[i] - num) <= 1e-3 * max(abs(g[i]), abs(num), 1e-6)
    n.actor.params = p0


def test_actor_update_ascends_and_soft_updates_target():
    n, b = nets(tau=0.1, lr_actor=1e-3), batch(32)
    target0 = n.actor_target.copy()
    before = actor_objective(n, b)
    actor_update(n, b)
    assert actor_objective(n, b) > before
    np.testing.assert_allclose(n.actor_target, 0.1 * n.actor.params + 0.9 * target0, rtol=1e-12, atol=1e-15)


def test_replay_ring_and_uniform_sampling():
    buf = ReplayBuffer(100, 2, 1, 2)
    a = CompoundAction(1, np.array([0.5]))
    for i in range(150):
        buf.add(np.full(2, i), a, float(i), np.zeros(2))
    assert len(buf) == 100 and buf.r.min() == 50
    counts = np.bincount(buf.sample_indices(np.random.default_rng(0), 100_000), minlength=100)
    p = 0.01
    sigma = np.sqrt(100_000 * p * (1 - p))
    assert np.all(np.abs(counts - 100_000 * p) < 5 * sigma)


def small_sim(seed=0):
    sc = Scenario(n_uavs=2, n_devices=4, mobile_frac=0.5)
    devices = place_devices(4, [seed, 1], 0.5, 50.0)
    uavs = [UavState(np.array([300.0, 300.0]), 1e4), UavState(np.array([700.0, 700.0]), 1e4)]
    return VHetNetSim(sc, devices, uavs, EnergyParams(), LatencyParams(), RewardWeights(1, 0, 0), 30, seed=seed)


def agent_for(sim, seed=0, **kw):
    hyper = AgentHyper(hidden=(8, 8), batch_size=8, **kw)
    return AgentNets.create(sim.s_dim, sim.n_discrete, sim.c_dim, hyper, seed)


def test_train_zero_periods_is_noop():
    sim = small_sim()
    n = agent_for(sim)
    before = n.actor.params.copy()
    _, rows, buf = train(sim, n, 0, seed=0)
    assert rows == [] and len(buf) == 0 and np.array_equal(n.actor.params, before)


def test_buffer_size_after_t_periods():
    sim = small_sim()
    _, rows, buf = train(sim, agent_for(sim, buffer_capacity=12), 20, seed=0)
    assert len(rows) == 20 and len(buf) == 12


def test_train_is_reproducible():
    out = []
    for _ in range(2):
        sim = small_sim(4)
        n, rows, _ = train(sim, agent_for(sim, seed=4), 25, seed=4)
        out.append((rows, n.critic.params.copy()))
    assert out[0][0] == out[1][0] and np.array_equal(out[0][1], out[1][1])


def test_warmup_actions_are_uniform_and_admissible():
    sim = small_sim()
    n = agent_for(sim, warmup_periods=30)
    _, rows, buf = train(sim, n, 30, seed=0)
    assert buf.c[:30].std() > 0.2

import numpy as np
import pytest
from scipy import stats

from adaeq.mdp import (MdpSpec, ReplayBuffer, Transition, bellman_residual, epsilon_greedy,
                       exact_q_values, make_chain_mdp, make_noisy_gridworld, make_random_mdp,
                       rollout_mc_returns)


def _single_state(reward=1.0, gamma=0.99):
    return MdpSpec(np.ones((1, 1, 1)), np.full((1, 1), reward), 0.0, gamma)


def test_spec_validation():
    P = np.full((2, 1, 2), 0.5)
    with pytest.raises(ValueError):
        MdpSpec(P * 1.1, np.zeros((2, 1)), 0.0, 0.9)
    with pytest.raises(ValueError):
        MdpSpec(P, np.zeros((2, 1)), 0.0, 1.0)
    with pytest.raises(ValueError):
        MdpSpec(P, np.zeros((2, 2)), 0.0, 0.9)
    with pytest.raises(ValueError):
        MdpSpec(P, np.zeros((2, 1)), -0.1, 0.9)
    with pytest.raises(ValueError):
        MdpSpec(P, np.zeros((2, 1)), 0.0, 0.9, frozenset({0, 1}))
    mdp = MdpSpec(P, np.zeros((2, 1)), 0.0, 0.9)
    with pytest.raises(ValueError):
        mdp.transition[0, 0, 0] = 1.0


def test_one_by_two_grid():
    mdp = make_noisy_gridworld(2, 1, 0.0, 0.9)
    q = exact_q_values(mdp)
    assert q[0, 1] == 1.0  # moving right enters the goal
    assert q[0, 3] == pytest.approx(0.9)  # bumping the wall, then right
    assert mdp.terminal_states == frozenset({1})


def test_gridworld_deterministic_construction():
    a, b = make_noisy_gridworld(4, 4, 1.0, 0.95, seed=3), make_noisy_gridworld(4, 4, 1.0, 0.95, seed=3)
    assert np.array_equal(a.transition, b.transition) and np.array_equal(a.reward_mean, b.reward_mean)
    assert a.to_json() == b.to_json()
    assert (a.transition.max(axis=2) == 1.0).all()
    with pytest.raises(ValueError):
        make_noisy_gridworld(1, 1)


def test_gridworld_optimal_values():
    mdp = make_noisy_gridworld(4, 4, 0.0, 0.9)
    v = exact_q_values(mdp).max(axis=1)
    # Manhattan distance d to the goal gives V = gamma^(d-1)
    for s in range(15):
        x, y = s % 4, s // 4
        assert v[s] == pytest.approx(0.9 ** (6 - x - y - 1), abs=1e-9)


def test_random_mdp_is_row_stochastic_and_seeded():
    mdp = make_random_mdp(10, 5, 3, seed=1)
    assert np.abs(mdp.transition.sum(axis=2) - 1).max() <= 1e-12
    assert ((mdp.transition > 0).sum(axis=2) == 3).all()
    other = make_random_mdp(10, 5, 3, seed=2)
    assert not np.array_equal(mdp.transition, other.transition)
    with pytest.raises(ValueError):
        make_random_mdp(4, 2, 5)


def test_json_roundtrip():
    for mdp in (make_noisy_gridworld(3, 2, 0.5, 0.9, 7), make_random_mdp(6, 2, 2, 0.1, 0.8, 4),
                make_chain_mdp(5)):
        back = MdpSpec.from_json(mdp.to_json())
        assert np.array_equal(back.transition, mdp.transition)
        assert np.array_equal(back.reward_mean, mdp.reward_mean)
        assert back.terminal_states == mdp.terminal_states
    with pytest.raises(ValueError):
        MdpSpec.from_json('{"kind": "nope"}')


def test_deterministic_random_mdp_matches_geometric_sum():
    mdp = make_random_mdp(12, 1, 1, gamma=0.8, seed=5)
    q = exact_q_values(mdp)
    succ = mdp.transition[:, 0].argmax(axis=1)
    for s0 in range(12):
        s, total = s0, 0.0
        for t in range(400):
            total += 0.8**t * mdp.reward_mean[s, 0]
            s = succ[s]
        assert q[s0, 0] == pytest.approx(total, abs=1e-9)


def test_bellman_residual_small():
    for mdp in (make_random_mdp(10, 5, 2, gamma=0.9, seed=0), make_noisy_gridworld(4, 4, 0.0, 0.95)):
        assert bellman_residual(mdp, exact_q_values(mdp)) <= 1e-9


def test_gamma_near_zero_gives_mean_reward():
    mdp = make_random_mdp(8, 3, 2, gamma=1e-12, seed=3)
    assert np.allclose(exact_q_values(mdp), mdp.reward_mean, atol=1e-10)


def test_policy_evaluation_against_monte_carlo():
    mdp = make_random_mdp(10, 5, 2, reward_noise_tau=0.5, gamma=0.5, seed=8)
    uniform = np.full((10, 5), 0.2)
    q = exact_q_values(mdp, uniform)
    rng = np.random.default_rng(0)
    n, horizon = 200_000, 40  # gamma^40 ~ 1e-12
    s0, a0 = 3, 2
    s = np.full(n, s0)
    a = np.full(n, a0)
    ret = np.zeros(n)
    cum = np.cumsum(mdp.transition, axis=2)
    for t in range(horizon):
        noise = mdp.reward_noise[s, a] * rng.uniform(-1, 1, n)
        ret += 0.5**t * (mdp.reward_mean[s, a] + noise)
        s = (rng.random(n)[:, None] > cum[s, a]).sum(axis=1)
        a = rng.integers(0, 5, n)
    se = ret.std(ddof=1) / np.sqrt(n)
    assert abs(ret.mean() - q[s0, a0]) < 3 * se


def test_policy_evaluation_of_deterministic_actions():
    mdp = make_noisy_gridworld(4, 4, 0.0, 0.9)
    qstar = exact_q_values(mdp)
    greedy = qstar.argmax(axis=1)
    assert np.allclose(exact_q_values(mdp, greedy), qstar, atol=1e-9)
    with pytest.raises(ValueError):
        exact_q_values(mdp, np.zeros((3, 3)))


def test_epsilon_greedy_unique_max():
    rng = np.random.default_rng(0)
    assert all(epsilon_greedy([0.1, 0.9, 0.3], 0.0, rng) == 1 for _ in range(100))
    with pytest.raises(ValueError):
        epsilon_greedy([0.0], 1.5, rng)


def test_epsilon_one_is_uniform():
    rng = np.random.default_rng(1)
    draws = np.array([epsilon_greedy([5.0, 0.0, 0.0, 0.0], 1.0, rng) for _ in range(100_000)])
    counts = np.bincount(draws, minlength=4)
    assert stats.chisquare(counts).pvalue > 0.001


def test_ties_split_evenly():
    rng = np.random.default_rng(2)
    draws = np.array([epsilon_greedy([1.0, 0.0, 1.0], 0.0, rng) for _ in range(100_000)])
    assert set(np.unique(draws)) == {0, 2}
    assert stats.binomtest(int((draws == 0).sum()), draws.size, 0.5).pvalue > 0.001


def test_rollout_geometric_sum():
    mdp = _single_state(1.0, 0.99)
    traj = rollout_mc_returns(mdp, np.zeros((1, 1)), H=1000, seed=0)
    assert len(traj) == 1001 and not traj.terminated
    assert traj.returns[0] == pytest.approx((1 - 0.99**1001) / (1 - 0.99), rel=1e-12)


def test_rollout_h1():
    mdp = make_random_mdp(5, 2, 2, gamma=0.7, seed=1)
    traj = rollout_mc_returns(mdp, np.zeros((5, 2)), H=1, seed=4)
    assert len(traj) == 2
    assert traj.returns[0] == pytest.approx(traj.rewards[0] + 0.7 * traj.rewards[1])
    with pytest.raises(ValueError):
        rollout_mc_returns(mdp, np.zeros((5, 2)), H=0)


def test_rollout_on_chain_matches_exact_up_to_truncation():
    mdp = make_chain_mdp(300, gamma=0.99)
    q = exact_q_values(mdp)
    H = 100
    traj = rollout_mc_returns(mdp, np.zeros(301, dtype=int), H=H, initial_state=0)
    assert len(traj) == H + 1
    vmax = np.abs(q).max()
    for t, (s, a) in enumerate(traj.pairs):
        assert abs(traj.returns[t] - q[s, a]) <= 0.99 ** (H - t) * vmax + 1e-9


def test_rollout_stops_at_terminal():
    mdp = make_chain_mdp(10, gamma=0.9)
    q = exact_q_values(mdp)
    traj = rollout_mc_returns(mdp, q, H=50, initial_state=4)
    assert traj.terminated and len(traj) == 6
    assert np.allclose(traj.returns, q[traj.states, traj.actions], atol=1e-12)


def test_rollout_callable_policy_and_seed():
    mdp = make_noisy_gridworld(4, 4, 1.0, 0.9)
    pol = lambda s, rng: int(rng.integers(4))
    a = rollout_mc_returns(mdp, pol, 30, seed=5)
    b = rollout_mc_returns(mdp, pol, 30, seed=5)
    assert np.array_equal(a.rewards, b.rewards) and np.array_equal(a.states, b.states)


def test_replay_buffer_fifo():
    buf = ReplayBuffer(3)
    for k in range(5):
        buf.add(Transition(k, 0, float(k), k + 1, False))
    assert len(buf) == 3
    assert [buf[i].s for i in range(3)] == [2, 3, 4]
    with pytest.raises(IndexError):
        buf[3]
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_replay_buffer_batches_distinct_and_uniform():
    buf = ReplayBuffer(100)
    for k in range(250):
        buf.add(Transition(k % 7, 0, float(k), 0, False))
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        buf.sample_indices(101, rng)
    idx = buf.sample_indices(8, rng, n_batches=20_000)
    assert all(len(set(row)) == 8 for row in idx[:2000])
    assert stats.chisquare(np.bincount(idx.ravel(), minlength=100)).pvalue > 0.001
    big = buf.sample_indices(60, rng, n_batches=3)
    assert all(len(set(row)) == 60 for row in big)
    batch = buf.sample(5, rng)
    assert len({t.r for t in batch}) == 5 and all(t.r >= 150 for t in batch)

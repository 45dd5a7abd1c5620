import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from adaeq.controller import (AdaptationConfig, adapt_size, adapt_size_verbose, characterize_error,
                              fit_uniform_halfwidths)
from adaeq.mdp import DegenerateTrajectoryError, exact_q_values, make_chain_mdp

CHAIN = make_chain_mdp(200, gamma=0.99)
Q_CHAIN = exact_q_values(CHAIN)


def test_config_validation():
    for kwargs in ({"c": -0.1}, {"n_min": 3}, {"n_max": 1}, {"adaptation_every": 0}, {"H": 1},
                   {"n_trajectories": 0}):
        with pytest.raises(ValueError):
            AdaptationConfig(**kwargs)


def test_increase_branch_uniform():
    cfg = AdaptationConfig(c=0.3, n_max=10)
    rng = np.random.default_rng(0)
    draws = np.array([adapt_size(4, 0.5, cfg, rng) for _ in range(100_000)])
    counts = np.bincount(draws, minlength=11)[5:]
    assert draws.min() == 5 and draws.max() == 10
    assert stats.chisquare(counts).pvalue > 0.001


def test_decrease_branch_uniform():
    cfg = AdaptationConfig(c=0.3, n_max=10)
    rng = np.random.default_rng(1)
    draws = np.array([adapt_size(7, 0.1, cfg, rng) for _ in range(60_000)])
    assert set(np.unique(draws)) == set(range(2, 7))
    assert stats.chisquare(np.bincount(draws)[2:]).pvalue > 0.001


def test_clamps_and_knife_edge():
    cfg = AdaptationConfig(c=0.3, n_max=10)
    rng = np.random.default_rng(0)
    assert adapt_size(2, 0.1, cfg, rng) == 2
    assert adapt_size(10, 0.9, cfg, rng) == 10
    assert adapt_size_verbose(5, 0.3, cfg, rng) == (5, 5, "hold")
    assert adapt_size_verbose(5, 0.9, cfg, rng).branch == "increase"
    with pytest.raises(ValueError):
        adapt_size(1, 0.5, cfg, rng)
    with pytest.raises(ValueError):
        adapt_size(11, 0.5, cfg, rng)


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 20), st.integers(0, 18), st.floats(0, 2), st.floats(0, 2), st.integers(0, 2**32 - 1))
def test_adapt_direction_and_range(n_max, offset, tau, c, seed):
    M_prev = 2 + offset % (n_max - 1)
    cfg = AdaptationConfig(c=c, n_max=n_max)
    M = adapt_size(M_prev, tau, cfg, np.random.default_rng(seed))
    assert 2 <= M <= n_max
    if tau < c:
        assert M <= M_prev
    if tau > c:
        assert M >= M_prev


def test_exact_tables_give_zero_error():
    q = np.repeat(Q_CHAIN[None], 4, axis=0)
    est = characterize_error(q, CHAIN, H=200, seed=0)
    assert est.tau_tilde < 1e-9
    assert est.per_approximator_stds.shape == (4,)
    assert est.n_pairs >= 2


def test_constant_offsets_are_invisible():
    q = Q_CHAIN[None] + np.array([0.0, 0.5, -1.0, 2.0])[:, None, None]
    est = characterize_error(q, CHAIN, H=200, seed=1)
    assert est.tau_tilde < 1e-9
    hw = fit_uniform_halfwidths(q, CHAIN, H=200, seed=1)
    assert np.allclose(hw.tau_hat, [0.0, 0.5, 1.0, 2.0], atol=1e-9)


def test_uniform_noise_std():
    rng = np.random.default_rng(3)
    q = Q_CHAIN[None] + rng.uniform(-0.6, 0.6, size=(10,) + Q_CHAIN.shape)
    est = characterize_error(q, CHAIN, H=200, seed=4, n_trajectories=20)
    assert est.tau_tilde == pytest.approx(0.6 / np.sqrt(3), rel=0.2)


def test_permutation_invariance():
    rng = np.random.default_rng(5)
    q = Q_CHAIN[None] + rng.uniform(-1, 1, size=(6,) + Q_CHAIN.shape) * np.arange(1, 7)[:, None, None]
    perm = rng.permutation(6)
    a = characterize_error(q, CHAIN, 200, seed=7)
    b = characterize_error(q[perm], CHAIN, 200, seed=7)
    assert a.tau_tilde == pytest.approx(b.tau_tilde, rel=1e-12)
    assert np.allclose(a.per_approximator_stds[perm], b.per_approximator_stds)


def test_halfwidths_of_injected_noise():
    rng = np.random.default_rng(8)
    tau = 0.4
    q = Q_CHAIN[None] + rng.uniform(-tau, tau, size=(5,) + Q_CHAIN.shape)
    hw = fit_uniform_halfwidths(q, CHAIN, H=200, seed=9, n_trajectories=20)
    assert (hw.tau_hat <= tau).all()
    assert (hw.tau_hat > 0.95 * tau).all()
    assert hw.tau_min <= hw.tau_max
    zero = fit_uniform_halfwidths(np.repeat(Q_CHAIN[None], 3, axis=0), CHAIN, H=200, seed=0)
    assert zero.tau_max < 1e-9


def test_degenerate_trajectory():
    mdp = make_chain_mdp(1)
    q = np.zeros((2,) + (2, 1))
    with pytest.raises(DegenerateTrajectoryError):
        characterize_error(q, mdp, H=10)
    with pytest.raises(ValueError):
        characterize_error(q, mdp, H=1)
    with pytest.raises(ValueError):
        characterize_error(np.zeros((2, 1)), mdp, H=10)

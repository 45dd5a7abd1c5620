"""Finite MDPs with exact Q-values, replay storage, exploration and MC returns."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

GRID_ACTIONS = ("up", "right", "down", "left")
_MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))


class ConvergenceError(RuntimeError):
    pass


class DegenerateTrajectoryError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Tabular MDP.  ``transition`` has shape ``(S, A, S)``.

    Rewards are ``reward_mean[s, a] + U(-reward_noise[s, a], reward_noise[s, a])``.
    Reaching a terminal state ends the episode; no value is bootstrapped
    from it.
    """

    transition: np.ndarray
    reward_mean: np.ndarray
    reward_noise: np.ndarray
    gamma: float
    terminal_states: frozenset = frozenset()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        if S < 1 or A < 1:
            raise ValueError("need at least one state and one action")
        if (P < 0).any() or np.abs(P.sum(axis=2) - 1.0).max() > 1e-12:
            raise ValueError("each P(.|s,a) must be non-negative and sum to 1")
        r = np.array(self.reward_mean, dtype=float)
        noise = np.broadcast_to(np.asarray(self.reward_noise, dtype=float), (S, A)).copy()
        if r.shape != (S, A):
            raise ValueError(f"reward_mean must have shape {(S, A)}, got {r.shape}")
        if (noise < 0).any():
            raise ValueError("reward_noise must be non-negative")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        terms = frozenset(int(t) for t in self.terminal_states)
        if any(not 0 <= t < S for t in terms):
            raise ValueError("terminal state index out of range")
        if len(terms) == S:
            raise ValueError("at least one state must be non-terminal")
        for arr in (P, r, noise):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward_mean", r)
        object.__setattr__(self, "reward_noise", noise)
        object.__setattr__(self, "terminal_states", terms)
        term = np.zeros(S, dtype=bool)
        term[list(terms)] = True
        term.setflags(write=False)
        object.__setattr__(self, "_terminal_mask", term)
        cum = np.cumsum(P, axis=2)
        cum[..., -1] = 1.0
        object.__setattr__(self, "_cum", cum)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def terminal_mask(self) -> np.ndarray:
        return self._terminal_mask

    @property
    def start_states(self) -> np.ndarray:
        return np.flatnonzero(~self._terminal_mask)

    def is_terminal(self, s: int) -> bool:
        return bool(self._terminal_mask[s])

    def sample_start(self, rng: np.random.Generator) -> int:
        starts = self.start_states
        return int(starts[rng.integers(starts.size)])

    def step(self, s: int, a: int, rng: np.random.Generator):
        """Return ``(reward, next_state, done)``."""
        u = rng.random(2)
        s_next = int(np.searchsorted(self._cum[s, a], u[0], side="right"))
        r = self.reward_mean[s, a] + self.reward_noise[s, a] * (2.0 * u[1] - 1.0)
        return float(r), s_next, bool(self._terminal_mask[s_next])

    def to_json(self) -> str:
        return json.dumps(self.params, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MdpSpec":
        params = json.loads(text)
        kind = params.pop("kind", None)
        makers = {"gridworld": make_noisy_gridworld, "random": make_random_mdp, "chain": make_chain_mdp}
        if kind not in makers:
            raise ValueError(f"unknown environment kind {kind!r}")
        return makers[kind](**params)


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int
    done: bool


# --------------------------------------------------------------------------
# Environments
# --------------------------------------------------------------------------

def make_noisy_gridworld(width: int = 4, height: int = 4, reward_noise_tau: float = 0.0,
                         gamma: float = 0.95, seed: int = 0) -> MdpSpec:
    """Deterministic grid moves; entering the bottom-right corner pays 1 and ends the episode.

    Actions are up, right, down, left; moves off the grid leave the agent in
    place.  Every reward carries ``U(-tau, tau)`` noise.
    """
    if width < 1 or height < 1 or width * height < 2:
        raise ValueError("grid needs at least two cells")
    S, A = width * height, 4
    goal = S - 1
    P = np.zeros((S, A, S))
    r = np.zeros((S, A))
    for y in range(height):
        for x in range(width):
            s = y * width + x
            for a, (dx, dy) in enumerate(_MOVES):
                nx = min(max(x + dx, 0), width - 1)
                ny = min(max(y + dy, 0), height - 1)
                s2 = ny * width + nx
                if s == goal:
                    s2 = goal
                P[s, a, s2] = 1.0
                if s2 == goal and s != goal:
                    r[s, a] = 1.0
    params = {"kind": "gridworld", "width": width, "height": height,
              "reward_noise_tau": reward_noise_tau, "gamma": gamma, "seed": seed}
    return MdpSpec(P, r, reward_noise_tau, gamma, frozenset({goal}), params)


def make_random_mdp(n_states: int = 10, n_actions: int = 5, branching: int = 2,
                    reward_noise_tau: float = 0.0, gamma: float = 0.9, seed: int = 0) -> MdpSpec:
    """Each (s, a) moves uniformly to ``branching`` random distinct successors."""
    if not 1 <= branching <= n_states:
        raise ValueError(f"branching must lie in [1, {n_states}], got {branching}")
    rng = np.random.default_rng(seed)
    P = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            P[s, a, rng.choice(n_states, size=branching, replace=False)] = 1.0 / branching
    r = rng.standard_normal((n_states, n_actions))
    params = {"kind": "random", "n_states": n_states, "n_actions": n_actions,
              "branching": branching, "reward_noise_tau": reward_noise_tau,
              "gamma": gamma, "seed": seed}
    return MdpSpec(P, r, reward_noise_tau, gamma, frozenset(), params)


def make_chain_mdp(length: int = 200, n_actions: int = 1, reward: float = 1.0,
                   gamma: float = 0.99, reward_noise_tau: float = 0.0) -> MdpSpec:
    """States ``0..length`` in a line; every action advances one step and pays ``reward``.

    State ``length`` is terminal, so an episode from state ``s`` lasts exactly
    ``length - s`` steps.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    S = length + 1
    P = np.zeros((S, n_actions, S))
    for s in range(S):
        P[s, :, min(s + 1, length)] = 1.0
    r = np.full((S, n_actions), float(reward))
    r[length] = 0.0
    params = {"kind": "chain", "length": length, "n_actions": n_actions, "reward": reward,
              "gamma": gamma, "reward_noise_tau": reward_noise_tau}
    return MdpSpec(P, r, reward_noise_tau, gamma, frozenset({length}), params)


# --------------------------------------------------------------------------
# Exact solutions
# --------------------------------------------------------------------------

def _continuation(mdp: MdpSpec) -> np.ndarray:
    """``gamma * P`` with transitions into terminal states zeroed."""
    return mdp.gamma * mdp.transition * (~mdp.terminal_mask)[None, None, :]


def exact_q_values(mdp: MdpSpec, policy: Optional[np.ndarray] = None, tol: float = 1e-10,
                   max_iter: int = 1_000_000) -> np.ndarray:
    """Q* by value iteration when ``policy`` is None, else Q^pi by a linear solve.

    ``policy`` is an ``(S, A)`` matrix of action probabilities or an ``(S,)``
    vector of deterministic actions.
    """
    S, A = mdp.n_states, mdp.n_actions
    G = _continuation(mdp)
    r = mdp.reward_mean
    if policy is None:
        q = np.zeros((S, A))
        for _ in range(max_iter):
            q_new = r + G @ q.max(axis=1)
            delta = np.abs(q_new - q).max()
            q = q_new
            # contraction: ||q - q*|| <= gamma/(1-gamma) * delta
            if delta * mdp.gamma / (1.0 - mdp.gamma) <= tol:
                return q
        raise ConvergenceError(f"value iteration did not converge in {max_iter} iterations")
    pi = np.asarray(policy)
    if pi.ndim == 1:
        pi = np.eye(A)[pi.astype(int)]
    if pi.shape != (S, A):
        raise ValueError(f"policy must have shape {(S, A)} or {(S,)}")
    # q = r + G pi q  as a system over S*A unknowns
    T = np.einsum("sat,tb->satb", G, pi).reshape(S * A, S * A)
    q = np.linalg.solve(np.eye(S * A) - T, r.reshape(-1)).reshape(S, A)
    resid = np.abs(r + np.einsum("sat,tb,tb->sa", G, pi, q) - q).max()
    if not np.isfinite(resid) or resid > tol:
        raise ConvergenceError(f"policy evaluation residual {resid:.3g} exceeds {tol}")
    return q


def bellman_residual(mdp: MdpSpec, q: np.ndarray) -> float:
    """Max-norm residual of the Bellman optimality equation."""
    return float(np.abs(mdp.reward_mean + _continuation(mdp) @ q.max(axis=1) - q).max())


# --------------------------------------------------------------------------
# Acting and evaluation
# --------------------------------------------------------------------------

def greedy_action(q_row, rng: np.random.Generator) -> int:
    q_row = np.asarray(q_row)
    best = np.flatnonzero(q_row == q_row.max())
    if best.size == 1:
        return int(best[0])
    return int(best[rng.integers(best.size)])


def epsilon_greedy(q_row, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(len(q_row)))
    return greedy_action(q_row, rng)


@dataclass
class TestTrajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    returns: np.ndarray
    terminated: bool

    __test__ = False  # not a pytest class

    @property
    def pairs(self) -> list:
        return list(zip(self.states.tolist(), self.actions.tolist()))

    def __len__(self) -> int:
        return int(self.states.size)


Policy = Union[np.ndarray, Callable[[int, np.random.Generator], int]]


def _as_policy(policy: Policy) -> Callable[[int, np.random.Generator], int]:
    if callable(policy):
        return policy
    q = np.asarray(policy, dtype=float)
    if q.ndim == 1:
        acts = q.astype(int)
        return lambda s, rng: int(acts[s])
    return lambda s, rng: greedy_action(q[s], rng)


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def rollout_mc_returns(mdp: MdpSpec, policy: Policy, H: int, gamma: Optional[float] = None,
                       seed: Union[int, np.random.Generator, None] = 0,
                       initial_state: Optional[int] = None) -> TestTrajectory:
    """Roll out ``H + 1`` steps (fewer if a terminal state is reached).

    ``policy`` is a Q table (acted on greedily), a deterministic action vector
    or a callable ``(s, rng) -> a``.  The return at step ``t`` is
    ``sum_{k=t}^{end} gamma^(k-t) r_k``.
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    gamma = mdp.gamma if gamma is None else gamma
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    act = _as_policy(policy)
    s = mdp.sample_start(rng) if initial_state is None else int(initial_state)
    states, actions, rewards = [], [], []
    done = False
    for _ in range(H + 1):
        a = act(s, rng)
        r, s_next, done = mdp.step(s, a, rng)
        states.append(s)
        actions.append(a)
        rewards.append(r)
        if done:
            break
        s = s_next
    rewards = np.asarray(rewards)
    return TestTrajectory(np.asarray(states), np.asarray(actions), rewards,
                          discounted_returns(rewards, gamma), done)


# --------------------------------------------------------------------------
# Replay buffer
# --------------------------------------------------------------------------

class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored column-wise."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.s = np.zeros(capacity, dtype=np.int64)
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s_next = np.zeros(capacity, dtype=np.int64)
        self.done = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self._next
        self.s[i], self.a[i], self.r[i], self.s_next[i], self.done[i] = t
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __getitem__(self, k: int) -> Transition:
        """k-th oldest stored transition."""
        if not 0 <= k < self.size:
            raise IndexError(k)
        i = (self._next - self.size + k) % self.capacity
        return Transition(int(self.s[i]), int(self.a[i]), float(self.r[i]),
                          int(self.s_next[i]), bool(self.done[i]))

    def sample_indices(self, batch_size: int, rng: np.random.Generator, n_batches: int = 1) -> np.ndarray:
        """``(n_batches, batch_size)`` storage slots; each row holds distinct slots."""
        if not 1 <= batch_size <= self.size:
            raise ValueError(f"batch_size must lie in [1, {self.size}], got {batch_size}")
        n = self.size
        if batch_size * batch_size > n:
            return np.stack([rng.choice(n, size=batch_size, replace=False) for _ in range(n_batches)])
        idx = rng.integers(0, n, size=(n_batches, batch_size))
        while True:
            srt = np.sort(idx, axis=1)
            bad = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
            if not bad.any():
                return idx
            idx[bad] = rng.integers(0, n, size=(int(bad.sum()), batch_size))

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        return [self[int(k)] for k in self.sample_indices(batch_size, rng)[0]]

"""Tabular ensemble Q-learning with a pluggable in-target ensemble size.

Every iteration draws one random subset of ``M_t`` tables, acts
epsilon-greedily on their minimum, stores the transition, and then updates
every table on its own mini-batch toward
``y = r + gamma * max_a' min_{j in subset} Q^j(s', a')``.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .controller import AdaptationConfig, adapt_size_verbose, characterize_error
from .diagnostics import RunRecord, measure_bias, measure_return, spec_hash
from .mdp import MdpSpec, ReplayBuffer, Transition, epsilon_greedy

POLICY_KINDS = ("fixed", "maxmin", "adaeq", "average")
INIT_SCHEMES = ("zeros", "uniform")


@dataclass
class EnsembleState:
    q: np.ndarray  # (N, S, A)
    current_M: int
    alpha: float = 0.1
    last_subset: tuple = ()
    n_subset_draws: int = 0

    def __post_init__(self):
        if self.q.ndim != 3:
            raise ValueError("q must have shape (N, S, A)")
        if not 1 <= self.current_M <= self.n_approximators:
            raise ValueError(f"current_M must lie in [1, {self.n_approximators}]")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def n_approximators(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class SizePolicy:
    kind: str
    M: Optional[int] = None
    adaptation: Optional[AdaptationConfig] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; choose from {POLICY_KINDS}")
        if self.kind == "fixed" and (self.M is None or self.M < 1):
            raise ValueError("fixed policy needs M >= 1")
        if self.kind == "adaeq" and self.adaptation is None:
            raise ValueError("adaeq policy needs an AdaptationConfig")

    @classmethod
    def fixed(cls, M: int) -> "SizePolicy":
        return cls("fixed", M=M)

    @classmethod
    def maxmin(cls) -> "SizePolicy":
        return cls("maxmin")

    @classmethod
    def adaeq(cls, config: AdaptationConfig) -> "SizePolicy":
        return cls("adaeq", adaptation=config)

    @classmethod
    def average(cls) -> "SizePolicy":
        return cls("average")

    def initial_size(self, N: int, M0: int) -> int:
        if self.kind == "fixed":
            if self.M > N:
                raise ValueError(f"fixed M={self.M} exceeds N={N}")
            return self.M
        if self.kind in ("maxmin", "average"):
            return N
        return M0

    def label(self) -> str:
        if self.kind == "fixed":
            return f"fixed{self.M}"
        if self.kind == "adaeq":
            return f"adaeq_c{self.adaptation.c:g}"
        return self.kind


@dataclass(frozen=True)
class TrainConfig:
    N: int = 10
    M0: int = 4
    alpha: float = 0.1
    batch_size: int = 32
    buffer_capacity: int = 100_000
    warmup_steps: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    init_scheme: str = "zeros"
    init_tau: float = 1.0
    max_episode_steps: int = 100
    eval_H: int = 200
    eval_trajectories: int = 1
    return_cap: int = 100
    shared_batch: bool = False
    update_one_random: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("need 1 <= batch_size <= buffer_capacity")
        if self.warmup_steps < 0 or self.max_episode_steps < 1:
            raise ValueError("warmup_steps must be >= 0 and max_episode_steps >= 1")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if not 0 < self.eps_decay_fraction <= 1:
            raise ValueError("eps_decay_fraction must lie in (0, 1]")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"init_scheme must be one of {INIT_SCHEMES}")

    def epsilon(self, step: int, n_steps: int) -> float:
        """Linear decay from ``eps_start`` to ``eps_end`` over the first fraction of training."""
        span = max(1.0, self.eps_decay_fraction * n_steps)
        frac = min(1.0, step / span)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


def init_ensemble(N: int, M0: int, mdp: MdpSpec, init_scheme: str = "zeros",
                  init_tau: float = 1.0, seed: int = 0, alpha: float = 0.1,
                  min_size: int = 2) -> EnsembleState:
    """``N`` independent tables; each uniform table draws from its own RNG stream.

    ``min_size`` is the smallest allowed ``M0`` (clipped to ``N`` so a
    single-table ensemble is plain Q-learning).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if not min(min_size, N) <= M0 <= N:
        raise ValueError(f"M0 must lie in [{min(min_size, N)}, {N}], got {M0}")
    shape = (mdp.n_states, mdp.n_actions)
    if init_scheme == "zeros":
        q = np.zeros((N,) + shape)
    elif init_scheme == "uniform":
        streams = np.random.SeedSequence(seed).spawn(N)
        q = np.stack([np.random.default_rng(ss).uniform(-init_tau, init_tau, shape) for ss in streams])
    else:
        raise ValueError(f"init_scheme must be one of {INIT_SCHEMES}")
    return EnsembleState(q, int(M0), alpha)


def proxy_q(state: EnsembleState, subset, s: int, a: int) -> float:
    subset = list(subset)
    if not subset:
        raise ValueError("subset must be non-empty")
    return float(state.q[subset, s, a].min())


def average_proxy_q(state: EnsembleState, s: int, a: int) -> float:
    return float(state.q[:, s, a].mean())


@numba.njit(cache=True)
def _apply_updates(q, rows, s, a, y, alpha):
    # sequential so repeated (s, a) pairs in one batch compound like the scalar rule
    for k in range(rows.shape[0]):
        i = rows[k]
        for b in range(s.shape[1]):
            q[i, s[k, b], a[k, b]] = (1.0 - alpha) * q[i, s[k, b], a[k, b]] + alpha * y[k, b]


class EnvCursor:
    """Current position of the behaviour episode."""

    def __init__(self, mdp: MdpSpec, rng: np.random.Generator, max_episode_steps: int = 100):
        self.mdp = mdp
        self.max_episode_steps = max_episode_steps
        self.s = mdp.sample_start(rng)
        self.t = 0

    def advance(self, s_next: int, done: bool, rng: np.random.Generator) -> None:
        self.t += 1
        if done or self.t >= self.max_episode_steps:
            self.s = self.mdp.sample_start(rng)
            self.t = 0
        else:
            self.s = s_next


def training_step(state: EnsembleState, mdp: MdpSpec, env: EnvCursor, buffer: ReplayBuffer,
                  batch_size: int, epsilon: float, rng: np.random.Generator, *,
                  average: bool = False, random_action: bool = False, update: bool = True,
                  shared_batch: bool = False, update_one_random: bool = False) -> Transition:
    """One iteration of the ensemble learner; returns the stored transition."""
    N = state.n_approximators
    if average:
        subset = tuple(range(N))
        proxy = state.q.mean(axis=0)
    else:
        subset = tuple(np.sort(rng.choice(N, size=state.current_M, replace=False)).tolist())
        state.n_subset_draws += 1
        proxy = state.q[list(subset)].min(axis=0)
    state.last_subset = subset

    s = env.s
    if random_action:
        a = int(rng.integers(mdp.n_actions))
    else:
        a = epsilon_greedy(proxy[s], epsilon, rng)
    r, s_next, done = mdp.step(s, a, rng)
    t = Transition(s, a, r, s_next, done)
    buffer.add(t)
    env.advance(s_next, done, rng)

    if update and len(buffer) >= batch_size:
        rows = np.array([rng.integers(N)]) if update_one_random else np.arange(N)
        n_batches = 1 if shared_batch else rows.size
        idx = buffer.sample_indices(batch_size, rng, n_batches)
        if shared_batch:
            idx = np.repeat(idx, rows.size, axis=0)
        v_next = proxy.max(axis=1)
        y = buffer.r[idx] + mdp.gamma * np.where(buffer.done[idx], 0.0, v_next[buffer.s_next[idx]])
        _apply_updates(state.q, rows, buffer.s[idx], buffer.a[idx], y, state.alpha)
    return t


def _q_error_to(state: EnsembleState, mdp: MdpSpec, q_ref: np.ndarray) -> float:
    live = ~mdp.terminal_mask
    return float(np.abs(state.q[:, live] - q_ref[None, live]).max())


@dataclass
class TrainResult:
    record: RunRecord
    state: EnsembleState
    size_trace: list = field(default_factory=list)


def run_training(mdp: MdpSpec, size_policy: SizePolicy, n_steps: int, eval_every: int,
                 config: TrainConfig = TrainConfig(), seed: int = 0) -> TrainResult:
    """Train for ``n_steps`` iterations, logging diagnostics every ``eval_every``.

    The eval ``bias`` column uses the ensemble mean; ``proxy_bias`` uses the
    minimum over the latest subset.  ``tau_tilde`` is measured on its own
    test trajectory at every eval point.
    """
    if n_steps < 1 or eval_every < 1:
        raise ValueError("n_steps and eval_every must be >= 1")
    N = config.N
    adapt = size_policy.adaptation
    if adapt is not None and adapt.n_max != N:
        adapt = dataclasses.replace(adapt, n_max=N)
    M0 = size_policy.initial_size(N, config.M0)
    ss_init, ss_train, ss_eval, ss_adapt = np.random.SeedSequence(seed).spawn(4)
    state = init_ensemble(N, M0, mdp, config.init_scheme, config.init_tau,
                          seed=int(ss_init.generate_state(1)[0]), alpha=config.alpha,
                          min_size=1 if size_policy.kind == "fixed" else 2)
    rng = np.random.default_rng(ss_train)
    eval_rng = np.random.default_rng(ss_eval)
    adapt_rng = np.random.default_rng(ss_adapt)
    buffer = ReplayBuffer(config.buffer_capacity)
    env = EnvCursor(mdp, rng, config.max_episode_steps)
    average = size_policy.kind == "average"

    record = RunRecord(metadata={"seed": seed, "policy": size_policy.label(), "env": mdp.params,
                                 "env_hash": spec_hash(mdp), "N": N})
    trace = [state.current_M]
    tic = time.perf_counter()
    for step in range(1, n_steps + 1):
        warm = step <= config.warmup_steps
        training_step(state, mdp, env, buffer, config.batch_size, config.epsilon(step, n_steps), rng,
                      average=average, random_action=warm, update=not warm,
                      shared_batch=config.shared_batch, update_one_random=config.update_one_random)
        if adapt is not None and step % adapt.adaptation_every == 0:
            est = characterize_error(state, mdp, adapt.H, seed=adapt_rng,
                                     n_trajectories=adapt.n_trajectories)
            ev = adapt_size_verbose(state.current_M, est.tau_tilde, adapt, adapt_rng)
            state.current_M = ev.M_next
            record.adaptations.append((step, est.tau_tilde, ev.M_prev, ev.M_next, ev.branch))
            trace.append(state.current_M)
        if step % eval_every == 0:
            H = config.eval_H
            k = config.eval_trajectories
            bias = measure_bias(state, mdp, H, seed=eval_rng, n_trajectories=k)
            pbias = bias if average else measure_bias(state, mdp, H, seed=eval_rng, n_trajectories=k,
                                                      subset=state.last_subset)
            tau = characterize_error(state, mdp, max(H, 2), seed=eval_rng, n_trajectories=k).tau_tilde
            ret = measure_return(state, mdp, config.return_cap, seed=eval_rng)
            now = time.perf_counter()
            record.append(step=step, M_t=state.current_M, tau_tilde=tau, bias=bias,
                          proxy_bias=pbias, **{"return": ret}, wall_ms=1000.0 * (now - tic))
            tic = now
    return TrainResult(record, state, trace)

"""Error characterization and error-feedback ensemble-size adaptation.

``characterize_error`` estimates the spread of ``Q^i - Q^pi`` along a greedy
test trajectory, using the Monte Carlo return as ``Q^pi``.  It measures the
standard deviation, so an ensemble that is off by a constant reports zero
error.  ``fit_uniform_halfwidths`` gives the half-width view used by the
bounds instead.

``adapt_size`` grows the in-target ensemble when the measured error exceeds
the tolerance ``c`` and shrinks it when the error is below.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .mdp import DegenerateTrajectoryError, MdpSpec, TestTrajectory, rollout_mc_returns

MAX_RETRIES = 100


@dataclass(frozen=True)
class AdaptationConfig:
    c: float = 0.3
    n_max: int = 10
    n_min: int = 2
    adaptation_every: int = 1000
    H: int = 200
    n_trajectories: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"c must be >= 0, got {self.c}")
        if self.n_min != 2:
            raise ValueError("n_min is fixed at 2")
        if self.n_max < self.n_min:
            raise ValueError(f"n_max must be >= {self.n_min}, got {self.n_max}")
        if self.adaptation_every < 1:
            raise ValueError("adaptation_every must be >= 1")
        if self.H < 2:
            raise ValueError("H must be >= 2")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")


class ErrorEstimate(NamedTuple):
    tau_tilde: float
    per_approximator_stds: np.ndarray
    n_pairs: int


class HalfWidths(NamedTuple):
    tau_hat: np.ndarray
    tau_min: float
    tau_max: float


class Adaptation(NamedTuple):
    M_prev: int
    M_next: int
    branch: str  # "increase", "decrease" or "hold"


def _tables(ensemble) -> np.ndarray:
    q = getattr(ensemble, "q", ensemble)
    q = np.asarray(q, dtype=float)
    if q.ndim != 3:
        raise ValueError("expected an ensemble of shape (N, S, A)")
    return q


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_test_trajectory(q: np.ndarray, mdp: MdpSpec, H: int, gamma: Optional[float],
                           rng: np.random.Generator, min_pairs: int = 2) -> TestTrajectory:
    """Greedy rollout w.r.t. the ensemble mean, retried until it visits ``min_pairs`` pairs."""
    policy = q.mean(axis=0)
    for _ in range(MAX_RETRIES):
        traj = rollout_mc_returns(mdp, policy, H, gamma, rng)
        if len(traj) >= min_pairs:
            return traj
    raise DegenerateTrajectoryError(
        f"no test trajectory with {min_pairs} pairs after {MAX_RETRIES} attempts")


def _errors(q: np.ndarray, traj: TestTrajectory) -> np.ndarray:
    """``(N, n_pairs)`` matrix of ``Q^i(s, a) - G``."""
    return q[:, traj.states, traj.actions] - traj.returns[None, :]


def characterize_error(ensemble, mdp: MdpSpec, H: int, gamma: Optional[float] = None,
                       seed=0, n_trajectories: int = 1) -> ErrorEstimate:
    """Mean over approximators of the sample std of ``Q^i - G`` along a test trajectory.

    With ``n_trajectories > 1`` the per-approximator stds are averaged over
    independent trajectories.
    """
    if H < 2:
        raise ValueError("H must be >= 2")
    q = _tables(ensemble)
    rng = _rng(seed)
    stds = np.zeros(q.shape[0])
    pairs = 0
    for _ in range(n_trajectories):
        traj = sample_test_trajectory(q, mdp, H, gamma, rng)
        stds += _errors(q, traj).std(axis=1, ddof=1)
        pairs += len(traj)
    stds /= n_trajectories
    return ErrorEstimate(float(stds.mean()), stds, pairs)


def fit_uniform_halfwidths(ensemble, mdp: MdpSpec, H: int, gamma: Optional[float] = None,
                           seed=0, n_trajectories: int = 1) -> HalfWidths:
    """Maximum-likelihood centred-uniform half-width per approximator (max ``|Q^i - G|``)."""
    if H < 2:
        raise ValueError("H must be >= 2")
    q = _tables(ensemble)
    rng = _rng(seed)
    tau = np.zeros(q.shape[0])
    for _ in range(n_trajectories):
        traj = sample_test_trajectory(q, mdp, H, gamma, rng)
        tau = np.maximum(tau, np.abs(_errors(q, traj)).max(axis=1))
    return HalfWidths(tau, float(tau.min()), float(tau.max()))


def adapt_size(M_prev: int, tau_tilde: float, config: AdaptationConfig,
               rng: np.random.Generator) -> int:
    return adapt_size_verbose(M_prev, tau_tilde, config, rng).M_next


def adapt_size_verbose(M_prev: int, tau_tilde: float, config: AdaptationConfig,
                       rng: np.random.Generator) -> Adaptation:
    lo, hi = config.n_min, config.n_max
    if not lo <= M_prev <= hi:
        raise ValueError(f"M_prev must lie in [{lo}, {hi}], got {M_prev}")
    if tau_tilde > config.c and M_prev + 1 <= hi:
        return Adaptation(M_prev, int(rng.integers(M_prev + 1, hi + 1)), "increase")
    if tau_tilde < config.c and M_prev - 1 >= lo:
        return Adaptation(M_prev, int(rng.integers(lo, M_prev)), "decrease")
    return Adaptation(M_prev, M_prev, "hold")

"""Polynomial-fit illustration of how the in-target ensemble size moves the bias.

Both actions share the true value ``sin(s)``.  Each of ``N`` approximators
draws its own error scale ``tau_i ~ U(0, tau)``, samples noisy values
``sin(s) + U(-tau_i, tau_i)`` at random states, and fits a polynomial per
action.  The target uses ``max_a min_{i in subset} Q^i(s, a)``; its average
gap to ``sin(s)`` over an evaluation grid is the estimation bias.

Randomness is keyed on ``(seed, trial, stream)`` so any trial can be
recomputed in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

_SUBSET_STREAM = 10_000
_DRIFT_STREAM = 20_000


@dataclass(frozen=True)
class ToyConfig:
    n_approximators: int = 5
    n_samples_per_fit: int = 10
    poly_degree: int = 6
    tau: float = 1.0
    n_actions: int = 2
    state_low: float = -2.0 * math.pi
    state_high: float = 2.0 * math.pi
    n_grid: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n_approximators < 1:
            raise ValueError("n_approximators must be >= 1")
        if self.poly_degree < 0:
            raise ValueError("poly_degree must be >= 0")
        if self.n_samples_per_fit <= self.poly_degree:
            raise ValueError("n_samples_per_fit must exceed poly_degree")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.n_actions < 1:
            raise ValueError("n_actions must be >= 1")
        if not self.state_high > self.state_low:
            raise ValueError("empty state interval")
        if self.n_grid < 1:
            raise ValueError("n_grid must be >= 1")

    @property
    def state_grid(self) -> np.ndarray:
        return np.linspace(self.state_low, self.state_high, self.n_grid)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.state_high - self.state_low)

    @property
    def centre(self) -> float:
        return 0.5 * (self.state_high + self.state_low)


class NoisySamples(NamedTuple):
    tau_i: float
    states: np.ndarray  # (n_actions, n_samples)
    values: np.ndarray  # (n_actions, n_samples)


@dataclass
class PolyApproximator:
    """One polynomial per action, in the scaled variable ``(s - centre) / half_width``."""

    coefficients: np.ndarray  # (n_actions, degree + 1)
    centre: float = 0.0
    half_width: float = 1.0

    def __call__(self, states) -> np.ndarray:
        x = (np.asarray(states, dtype=float) - self.centre) / self.half_width
        return np.stack([P.polyval(x, c) for c in self.coefficients])


def _rng(config: ToyConfig, trial: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, trial, stream])


def sample_noisy_values(config: ToyConfig, approximator_index: int, trial: int = 0,
                        tau_i: Optional[float] = None) -> NoisySamples:
    """Noisy samples of ``sin`` for one approximator, one row per action."""
    rng = _rng(config, trial, approximator_index)
    draw = rng.uniform(0.0, config.tau)
    if tau_i is None:
        tau_i = draw
    shape = (config.n_actions, config.n_samples_per_fit)
    states = rng.uniform(config.state_low, config.state_high, size=shape)
    noise = rng.uniform(-1.0, 1.0, size=shape) * tau_i
    return NoisySamples(float(tau_i), states, np.sin(states) + noise)


def fit_polynomial(states, values, degree: int, centre: float = 0.0,
                   half_width: float = 1.0) -> np.ndarray:
    """Least-squares polynomial coefficients (lowest order first).

    Raises ``numpy.linalg.LinAlgError`` when the sample states cannot
    determine a polynomial of this degree.
    """
    states = np.asarray(states, dtype=float)
    values = np.asarray(values, dtype=float)
    if states.shape != values.shape or states.ndim != 1:
        raise ValueError("states and values must be matching 1-d arrays")
    if states.size <= degree:
        raise ValueError(f"need more than {degree} samples, got {states.size}")
    vander = P.polyvander((states - centre) / half_width, degree)
    coef, _, rank, _ = np.linalg.lstsq(vander, values, rcond=None)
    if rank < degree + 1:
        raise np.linalg.LinAlgError(f"design matrix has rank {rank} < {degree + 1}")
    return coef


def build_approximator(config: ToyConfig, approximator_index: int, trial: int = 0) -> PolyApproximator:
    samples = sample_noisy_values(config, approximator_index, trial)
    coefs = np.stack([
        fit_polynomial(s, v, config.poly_degree, config.centre, config.half_width)
        for s, v in zip(samples.states, samples.values)
    ])
    return PolyApproximator(coefs, config.centre, config.half_width)


class ProxyMin:
    """Pointwise minimum over a subset of approximators, per action."""

    def __init__(self, approximators: Sequence[PolyApproximator], subset):
        self.approximators = list(approximators)
        self.subset = tuple(int(i) for i in subset)

    def __call__(self, states) -> np.ndarray:
        return np.min([self.approximators[i](states) for i in self.subset], axis=0)


def proxy_min(approximators: Sequence[PolyApproximator], subset_size: int,
              rng: np.random.Generator) -> ProxyMin:
    n = len(approximators)
    if not 1 <= subset_size <= n:
        raise ValueError(f"subset size must lie in [1, {n}], got {subset_size}")
    subset = np.sort(rng.choice(n, size=subset_size, replace=False))
    return ProxyMin(approximators, subset)


class BiasEstimate(NamedTuple):
    curve: np.ndarray  # mean target error per grid state
    bias: float
    std_error: float


def _trial_values(config: ToyConfig, trial: int) -> np.ndarray:
    """Approximator values on the grid, shape ``(N, n_actions, n_grid)``."""
    grid = config.state_grid
    return np.stack([build_approximator(config, i, trial)(grid)
                     for i in range(config.n_approximators)])


def _trial_error(config: ToyConfig, values: np.ndarray, M: int, trial: int) -> np.ndarray:
    if not 1 <= M <= config.n_approximators:
        raise ValueError(f"M must lie in [1, {config.n_approximators}], got {M}")
    rng = _rng(config, trial, _SUBSET_STREAM + M)
    subset = rng.choice(config.n_approximators, size=M, replace=False)
    target = values[subset].min(axis=0).max(axis=0)
    return target - np.sin(config.state_grid)


def _summarise(errors: np.ndarray) -> BiasEstimate:
    per_trial = errors.mean(axis=1)
    n = per_trial.size
    se = float(per_trial.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return BiasEstimate(errors.mean(axis=0), float(per_trial.mean()), se)


def estimation_bias(config: ToyConfig, M: int, n_trials: int = 2000) -> BiasEstimate:
    """Mean target error per grid state and its average over states."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    errors = np.stack([_trial_error(config, _trial_values(config, t), M, t)
                       for t in range(n_trials)])
    return _summarise(errors)


def adaptive_size(tau: float) -> int:
    """Ensemble size used by the hand-set adaptive rule of the toy example."""
    return 4 if tau > 1.5 else 3


@dataclass
class BiasSweep:
    axis: str  # "tau" or "n_actions"
    rows: list = field(default_factory=list)  # dicts: value, M, label, bias, stderr

    def matrix(self, label: str) -> list:
        return [r for r in self.rows if r["label"] == label]

    def cell(self, value, label: str) -> dict:
        for r in self.rows:
            if r["label"] == label and r["value"] == value:
                return r
        raise KeyError((value, label))


def bias_sweep(config: ToyConfig, M_values: Sequence[int], *, taus: Optional[Sequence[float]] = None,
               n_actions: Optional[Sequence[int]] = None, n_trials: int = 2000,
               adaptive: bool = True) -> BiasSweep:
    """Scalar bias for every (sweep value, M) cell, plus the adaptive-rule row.

    Approximators are shared across the M values of one cell, so the rows
    use common random numbers.
    """
    if (taus is None) == (n_actions is None):
        raise ValueError("give exactly one of taus or n_actions")
    if not M_values:
        raise ValueError("M_values must be non-empty")
    axis = "tau" if taus is not None else "n_actions"
    values = list(taus if taus is not None else n_actions)
    if not values:
        raise ValueError("sweep grid must be non-empty")
    out = BiasSweep(axis)
    for v in values:
        cfg = (ToyConfig(**{**config.__dict__, "tau": float(v)}) if axis == "tau"
               else ToyConfig(**{**config.__dict__, "n_actions": int(v)}))
        sizes = [(str(M), int(M)) for M in M_values]
        if adaptive:
            sizes.append(("adaptive", adaptive_size(cfg.tau)))
        errs = {label: [] for label, _ in sizes}
        for t in range(n_trials):
            vals = _trial_values(cfg, t)
            for label, M in sizes:
                errs[label].append(_trial_error(cfg, vals, M, t))
        for label, M in sizes:
            est = _summarise(np.stack(errs[label]))
            out.rows.append({"value": v, "M": M, "label": label,
                             "bias": est.bias, "stderr": est.std_error})
    return out


def iterated_error_drift(config: ToyConfig, initial_taus: Sequence[float] = (0.3, 0.5, 0.7),
                         n_iterations: int = 20, fresh_noise: bool = True) -> np.ndarray:
    """Track approximation error when each fit is trained on its predecessor.

    Iteration 0 fits noisy samples of ``sin``; later iterations sample the
    previous fit (plus fresh noise at the approximator's initial level unless
    ``fresh_noise`` is off) and refit.  Returns an array of shape
    ``(n_iterations, len(initial_taus), 2)`` holding the mean and standard
    deviation over the grid of ``fit - sin``.
    """
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    grid = config.state_grid
    truth = np.sin(grid)
    out = np.empty((n_iterations, len(initial_taus), 2))
    for j, tau_j in enumerate(initial_taus):
        rng = _rng(config, j, _DRIFT_STREAM)
        target = np.sin
        for it in range(n_iterations):
            s = rng.uniform(config.state_low, config.state_high, config.n_samples_per_fit)
            y = target(s)
            if it == 0 or fresh_noise:
                y = y + rng.uniform(-tau_j, tau_j, s.size)
            coef = fit_polynomial(s, y, config.poly_degree, config.centre, config.half_width)
            approx = PolyApproximator(coef[None, :], config.centre, config.half_width)
            err = approx(grid)[0] - truth
            out[it, j] = err.mean(), err.std()
            target = lambda x, _a=approx: _a(x)[0]
    return out

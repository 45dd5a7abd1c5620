"""Monte Carlo estimate of ``E[gamma * max_a min_i e_i(a)]`` for uniform errors.

Every trial draws an ``A x M`` matrix of errors ``e_i(a) ~ U(-tau_i, tau_i)``.
Uniforms come from a counter-based SplitMix64 stream keyed on the seed, so
trial ``t`` always sees the same numbers regardless of how trials are split
across workers; per-trial values are reduced in a fixed order afterwards.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Optional, Union

import numba
import numpy as np

from .bounds import TwoDistSpec, UniformErrorSpec

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_LOW32 = np.uint64(0xFFFFFFFF)
_INV32 = 1.0 / 4294967296.0


class OracleResult(NamedTuple):
    mean: float
    std_error: float
    n_samples: int


@numba.njit(inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(nogil=True, cache=True)
def _trials(key, taus, n_actions, start, stop, out):
    # Each 64-bit hash yields two 32-bit uniforms, centred in their cells.
    n_approx = taus.shape[0]
    per_trial = np.uint64((n_actions * n_approx + 1) // 2)
    for t in range(start, stop):
        word_idx = np.uint64(t) * per_trial
        word = np.uint64(0)
        k = 0
        best = -np.inf
        for a in range(n_actions):
            low = np.inf
            for i in range(n_approx):
                if k % 2 == 0:
                    word_idx += np.uint64(1)
                    word = _mix(key + word_idx * _GOLDEN)
                    bits = word >> np.uint64(32)
                else:
                    bits = word & _LOW32
                k += 1
                u = (np.float64(np.int64(bits)) + 0.5) * _INV32
                e = taus[i] * (2.0 * u - 1.0)
                if e < low:
                    low = e
            if low > best:
                best = low
        out[t] = best


def _key_from_seed(seed: int) -> np.uint64:
    ss = np.random.SeedSequence(int(seed))
    return np.uint64(ss.generate_state(1, dtype=np.uint64)[0])


def sample_max_min(taus, n_actions: int, n_samples: int, seed: int,
                   workers: int = 1, chunk: int = 65536) -> np.ndarray:
    """Per-trial values of ``max_a min_i e_i(a)`` (undiscounted)."""
    taus = np.ascontiguousarray(taus, dtype=np.float64)
    if taus.ndim != 1 or taus.size == 0:
        raise ValueError("taus must be a non-empty 1-d sequence")
    if n_actions < 1 or n_samples < 1:
        raise ValueError("n_actions and n_samples must be >= 1")
    key = _key_from_seed(seed)
    out = np.empty(n_samples, dtype=np.float64)
    bounds = [(s, min(s + chunk, n_samples)) for s in range(0, n_samples, chunk)]
    if workers <= 1:
        for s, e in bounds:
            _trials(key, taus, n_actions, s, e, out)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda b: _trials(key, taus, n_actions, b[0], b[1], out), bounds))
    return out


def mc_bias_oracle(spec: Union[UniformErrorSpec, TwoDistSpec], M: Optional[int] = None,
                   n_samples: int = 100_000, seed: int = 0, workers: int = 1) -> OracleResult:
    """Sample mean and standard error of the discounted min-of-M target error."""
    if isinstance(spec, TwoDistSpec):
        taus = spec.taus() if M is None else spec.with_M(M).taus()
    elif isinstance(spec, UniformErrorSpec):
        if M is None:
            raise ValueError("M is required for a UniformErrorSpec")
        taus = spec.in_target(M)
    else:
        raise TypeError(f"unsupported spec type {type(spec).__name__}")
    z = sample_max_min(taus, spec.A, n_samples, seed, workers=workers)
    z *= spec.gamma
    mean = float(z.mean())
    se = float(z.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else float("nan")
    return OracleResult(mean, se, n_samples)

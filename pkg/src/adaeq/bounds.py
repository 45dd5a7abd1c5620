"""Closed-form bounds on the expected target error of a min-of-M ensemble.

Two error models are supported:

* :class:`TwoDistSpec`: ``K`` in-target approximators have errors
  ``U(-tau1, tau1)`` and the remaining ``M - K`` have ``U(-tau2, tau2)``.
* :class:`UniformErrorSpec`: every approximator ``i`` has its own half-width
  ``tau_i``; only ``tau_min`` and ``tau_max`` enter the bounds.

Each bound comes in more than one *form*.

``thm1_lower``
    ``"appendix"`` (default) carries ``tau2 * (1 - 2 f_AM)``; ``"main"``
    carries ``tau2 * (1 - f_AM)``.
``thm1_upper``
    ``"printed"`` (default) is ``tau1 + tau2 (1 - 2 f_A(M-K) - (1-beta_K)^A)``.
    ``"figure"`` replaces the leading ``tau1`` with ``tau1 (1 - 2 f_AK)``;
    its zero crossing gives the reference critical size M_u = 9.
``thm2_upper``
    ``"printed"`` (default) is ``2 tau_min - tau_max (f_AM - 2 g_AM)``.
    ``"figure"`` is ``2 tau_min - tau_max (1 + f_AM - 2 g_AM)``, matching the
    stated sign condition for underestimation.

Neither the two-distribution lower bound (thm1) nor the heterogeneous upper
bound (thm2) holds for every configuration; see ``tests/test_acceptance.py`` and the README for the
measured violations against the Monte Carlo oracle.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence, Union

from .special import beta_k, f_coef, g_coef

THM1_LOWER_FORMS = ("appendix", "main")
UPPER_FORMS = ("printed", "figure")


@dataclass(frozen=True)
class TwoDistSpec:
    tau1: float
    tau2: float
    K: int
    M: int
    A: int
    gamma: float = 1.0

    def __post_init__(self):
        if not (self.tau1 > self.tau2 > 0):
            raise ValueError(f"need tau1 > tau2 > 0, got tau1={self.tau1}, tau2={self.tau2}")
        if not (1 <= self.K <= self.M):
            raise ValueError(f"need 1 <= K <= M, got K={self.K}, M={self.M}")
        if self.A < 1:
            raise ValueError(f"A must be >= 1, got {self.A}")
        _check_gamma(self.gamma)

    def taus(self) -> tuple:
        """Per-approximator half-widths of the ``M`` in-target approximators."""
        return (self.tau1,) * self.K + (self.tau2,) * (self.M - self.K)

    def with_M(self, M: int) -> "TwoDistSpec":
        return dataclasses.replace(self, M=M)


@dataclass(frozen=True)
class UniformErrorSpec:
    """Heterogeneous uniform errors, one half-width per approximator.

    When fewer half-widths than the requested ensemble size are given, the
    last one is repeated (so ``taus=(0.07, 0.1)`` means one approximator at
    0.07 and the rest at 0.1).
    """

    taus: tuple
    A: int
    gamma: float = 1.0

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        if not taus:
            raise ValueError("taus must be non-empty")
        if any(t < 0 for t in taus):
            raise ValueError("taus must be non-negative")
        object.__setattr__(self, "taus", taus)
        if self.A < 1:
            raise ValueError(f"A must be >= 1, got {self.A}")
        _check_gamma(self.gamma)

    def in_target(self, M: int) -> tuple:
        if M < 1:
            raise ValueError(f"M must be >= 1, got {M}")
        if len(self.taus) >= M:
            return self.taus[:M]
        return self.taus + (self.taus[-1],) * (M - len(self.taus))

    def tau_min(self, M: Optional[int] = None) -> float:
        return min(self.taus if M is None else self.in_target(M))

    def tau_max(self, M: Optional[int] = None) -> float:
        return max(self.taus if M is None else self.in_target(M))


ErrorSpec = Union[TwoDistSpec, UniformErrorSpec]


class BiasBounds(NamedTuple):
    lower: Optional[float]
    upper: Optional[float]
    source: str


class CriticalPoints(NamedTuple):
    m_lower: Optional[int]
    m_upper: Optional[int]


class ToleranceInterval(NamedTuple):
    low: Optional[float]
    high: Optional[float]
    admissible: tuple

    @property
    def empty(self) -> bool:
        return not self.admissible


def _check_gamma(gamma: float) -> None:
    if not (0 < gamma <= 1):
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")


# --------------------------------------------------------------------------
# thm1: two error distributions
# --------------------------------------------------------------------------

def thm1_lower(spec: TwoDistSpec, form: str = "appendix") -> float:
    if form not in THM1_LOWER_FORMS:
        raise ValueError(f"unknown form {form!r}; choose from {THM1_LOWER_FORMS}")
    f_ak = f_coef(spec.A, spec.K)
    f_am = f_coef(spec.A, spec.M)
    tau2_coef = 1.0 - (2.0 if form == "appendix" else 1.0) * f_am
    return spec.gamma * (spec.tau1 * (1.0 - f_ak - 2.0 * f_am) + spec.tau2 * tau2_coef)


def thm1_upper(spec: TwoDistSpec, form: str = "printed") -> float:
    if form not in UPPER_FORMS:
        raise ValueError(f"unknown form {form!r}; choose from {UPPER_FORMS}")
    if spec.M <= spec.K:
        raise ValueError(f"upper bound needs M > K, got M={spec.M}, K={spec.K}")
    A = spec.A
    bk = beta_k(spec.tau1, spec.tau2, spec.K)
    lead = spec.tau1
    if form == "figure":
        lead = spec.tau1 * (1.0 - 2.0 * f_coef(A, spec.K))
    tail = spec.tau2 * (1.0 - 2.0 * f_coef(A, spec.M - spec.K) - (1.0 - bk) ** A)
    return spec.gamma * (lead + tail)


# --------------------------------------------------------------------------
# thm2: heterogeneous error distributions
# --------------------------------------------------------------------------

def thm2_lower(spec: UniformErrorSpec, M: int) -> float:
    if M < 2:
        raise ValueError(f"lower bound needs M >= 2, got {M}")
    t_min, t_max = spec.tau_min(M), spec.tau_max(M)
    return spec.gamma * (t_min - t_max * (f_coef(spec.A, M - 1) + 2.0 * f_coef(spec.A, M)))


def thm2_upper(spec: UniformErrorSpec, M: int, form: str = "printed") -> float:
    if form not in UPPER_FORMS:
        raise ValueError(f"unknown form {form!r}; choose from {UPPER_FORMS}")
    t_min, t_max = spec.tau_min(M), spec.tau_max(M)
    spread = f_coef(spec.A, M) - 2.0 * g_coef(spec.A, M)
    if form == "figure":
        spread += 1.0
    return spec.gamma * (2.0 * t_min - t_max * spread)


# --------------------------------------------------------------------------
# Sweeps over the ensemble size
# --------------------------------------------------------------------------

def bounds_at(spec: ErrorSpec, M: int, *, lower_form: str = "appendix",
              upper_form: str = "printed") -> BiasBounds:
    """Both bounds at ensemble size ``M``; a bound whose precondition fails is ``None``."""
    if isinstance(spec, TwoDistSpec):
        if M < spec.K:
            return BiasBounds(None, None, "thm1")
        s = spec.with_M(M)
        lower = thm1_lower(s, lower_form)
        upper = thm1_upper(s, upper_form) if M > spec.K else None
        return BiasBounds(lower, upper, "thm1")
    if isinstance(spec, UniformErrorSpec):
        lower = thm2_lower(spec, M) if M >= 2 else None
        upper = thm2_upper(spec, M, upper_form)
        return BiasBounds(lower, upper, "thm2")
    raise TypeError(f"unsupported spec type {type(spec).__name__}")


def critical_points(spec: ErrorSpec, M_range: Iterable[int], *,
                    lower_form: str = "appendix",
                    upper_form: str = "figure") -> CriticalPoints:
    """Integer ensemble sizes where the bounds change sign.

    ``m_lower`` is the largest ``M`` whose lower bound is positive while the
    bound at ``M + 1`` is not; ``m_upper`` is the smallest ``M`` whose upper
    bound is ``<= 0`` while the bound at ``M - 1`` is positive.  Both are
    ``None`` when no such change happens inside ``M_range``.

    The upper bound defaults to the ``"figure"`` form since that is the one
    whose crossings match the published critical points.
    """
    Ms = sorted(set(int(m) for m in M_range))
    if not Ms:
        raise ValueError("M_range is empty")
    table = {M: bounds_at(spec, M, lower_form=lower_form, upper_form=upper_form) for M in Ms}

    m_lower = None
    for M in Ms:
        nxt = table.get(M + 1)
        lo = table[M].lower
        if lo is None or nxt is None or nxt.lower is None:
            continue
        if lo > 0 and nxt.lower <= 0:
            m_lower = M

    m_upper = None
    for M in Ms:
        prev = table.get(M - 1)
        up = table[M].upper
        if up is None or prev is None or prev.upper is None:
            continue
        if up <= 0 < prev.upper:
            m_upper = M
            break
    return CriticalPoints(m_lower, m_upper)


def has_neutral_size(spec: ErrorSpec, M_range: Iterable[int], *,
                     lower_form: str = "appendix", upper_form: str = "figure") -> bool:
    """True when some ``M`` has a non-positive lower and non-negative upper bound."""
    for M in M_range:
        b = bounds_at(spec, M, lower_form=lower_form, upper_form=upper_form)
        if b.lower is None or b.upper is None:
            continue
        if b.lower <= 0 <= b.upper:
            return True
    return False


def determine_c(spec: ErrorSpec, sweep: Sequence[float], M_range: Iterable[int], *,
                lower_form: str = "appendix", upper_form: str = "figure") -> ToleranceInterval:
    """Range of the swept error level for which a bias-neutral ``M`` exists.

    For a :class:`TwoDistSpec` the sweep replaces ``tau1`` (``tau2`` stays
    fixed); for a :class:`UniformErrorSpec` it replaces ``tau_max`` and keeps
    ``tau_min``.  Any ``c`` inside ``[low, high]`` keeps the adaptation in
    the region where neither bound rules out near-zero bias.
    """
    M_range = list(M_range)
    ok = []
    for level in sweep:
        if isinstance(spec, TwoDistSpec):
            if level <= spec.tau2:
                continue
            s = dataclasses.replace(spec, tau1=float(level))
        elif isinstance(spec, UniformErrorSpec):
            t_min = min(spec.taus)
            if level < t_min:
                continue
            s = dataclasses.replace(spec, taus=(t_min, float(level)))
        else:
            raise TypeError(f"unsupported spec type {type(spec).__name__}")
        if has_neutral_size(s, M_range, lower_form=lower_form, upper_form=upper_form):
            ok.append(float(level))
    if not ok:
        return ToleranceInterval(None, None, ())
    return ToleranceInterval(min(ok), max(ok), tuple(ok))


def parse_m_range(text: str) -> list:
    """Parse ``"2..12"`` or ``"2,3,5"`` into a list of ints."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    out = [int(x) for x in text.split(",") if x.strip()]
    if not out:
        raise ValueError(f"empty range {text!r}")
    return out

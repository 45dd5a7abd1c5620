"""Combinatorial coefficients appearing in the min-of-M bias bounds.

``f_coef(A, K)`` is the integral of ``(1 - y**K)**A`` over ``[0, 1]``, which
equals ``B(1/K, A+1) / K``.  ``g_coef(A, M)`` is ``I_0.5(1/M, A+1) / M`` with
``I_x`` the (lower) regularized incomplete Beta function.
"""

from __future__ import annotations

import math

from scipy.special import betainc


def _check_positive_int(name: str, value: int) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return value


def f_coef(A: int, K: int) -> float:
    """Return ``A! / prod_{j=1..A} (j + 1/K)``.

    Evaluated as a running product of factors ``j / (j + 1/K)``, each in
    ``(0, 1)``, so it never overflows for large ``A``.
    """
    A = _check_positive_int("A", A)
    K = _check_positive_int("K", K)
    if K == 1:
        # the product telescopes; return it exactly instead of accumulating rounding
        return 1.0 / (A + 1)
    inv_k = 1.0 / K
    out = 1.0
    for j in range(1, A + 1):
        out *= j / (j + inv_k)
    return out


def g_coef(A: int, M: int) -> float:
    """Return ``I_0.5(1/M, A+1) / M``."""
    A = _check_positive_int("A", A)
    M = _check_positive_int("M", M)
    return float(betainc(1.0 / M, A + 1.0, 0.5)) / M


def beta_k(tau1: float, tau2: float, K: int) -> float:
    """Return ``(1/2 - tau2 / (2 tau1)) ** K`` for ``tau1 > tau2 > 0``."""
    K = _check_positive_int("K", K)
    if not (tau1 > 0 and tau2 > 0):
        raise ValueError("tau1 and tau2 must be positive")
    if tau2 >= tau1:
        raise ValueError(f"need tau1 > tau2, got tau1={tau1}, tau2={tau2}")
    return (0.5 - tau2 / (2.0 * tau1)) ** K


def beta_fn(a: float, b: float) -> float:
    """Complete Beta function via log-gamma."""
    if not (a > 0 and b > 0):
        raise ValueError("Beta parameters must be positive")
    return math.exp(math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))

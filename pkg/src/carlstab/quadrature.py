"""Compensated summation and underflow-safe weighted quadrature.

All discrete integrals in the package funnel through `exact_sum`, which is an
exactly-rounded float sum (math.fsum): identity residuals tested at the
1e-12 * scale level must not be polluted by naive accumulation.

Weighted space-time sums of the form

    sum_m  w_m * cell * sum_x  f(t_m, x)^2 * exp(logw(t_m, x))

are evaluated by exponentiating the per-point log weight once, skipping
points whose log weight sits below the underflow threshold (an upper bound
on the skipped mass is recorded), and in parallel tracking the exact value
in log space via logsumexp.  The log value survives even when the plain
value underflows to zero, which the exponential-decay studies depend on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import QuadratureError

LOG_TINY = math.log(np.finfo(np.float64).tiny)
SKIP_MARGIN = 60.0
SKIP_THRESHOLD = LOG_TINY + SKIP_MARGIN


def exact_sum(values) -> float:
    """Exactly rounded sum of a float array (order-independent)."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    return math.fsum(arr.tolist())


@dataclass
class Term:
    """One weighted quadratic term: plain value, exact log value, skip bound.

    `log_value` is -inf for an identically zero field.  `skipped_bound` is an
    upper bound on the mass dropped by the underflow guard; it is zero unless
    some points fell below the threshold.
    """

    value: float
    log_value: float
    skipped_bound: float = 0.0

    def __add__(self, other: "Term") -> "Term":
        return Term(
            self.value + other.value,
            float(logsumexp([self.log_value, other.log_value])),
            self.skipped_bound + other.skipped_bound,
        )


ZERO_TERM = Term(0.0, -np.inf, 0.0)


def weighted_square_sum(values: np.ndarray, logw: np.ndarray, cell: float) -> Term:
    """cell * sum_x values(x)^2 * exp(logw(x)) with underflow skipping."""
    values = np.asarray(values, dtype=np.float64).ravel()
    logw = np.asarray(logw, dtype=np.float64).ravel()
    sq = values * values
    keep = logw >= SKIP_THRESHOLD
    val = cell * exact_sum(sq[keep] * np.exp(logw[keep]))
    skipped = cell * exact_sum(sq[~keep]) * math.exp(SKIP_THRESHOLD)
    nz = sq > 0.0
    if np.any(nz):
        logv = float(logsumexp(np.log(sq[nz]) + logw[nz])) + math.log(cell)
    else:
        logv = -np.inf
    return Term(val, logv, skipped)


class TermAccumulator:
    """Accumulates per-frame weighted square sums into a time integral."""

    def __init__(self, cell: float):
        self.cell = cell
        self._vals: list[float] = []
        self._logs: list[float] = []
        self._skips: list[float] = []
        self._tw: list[float] = []

    def add_frame(self, values: np.ndarray, logw: np.ndarray, time_weight: float):
        t = weighted_square_sum(values, logw, self.cell)
        self._vals.append(t.value)
        self._logs.append(t.log_value)
        self._skips.append(t.skipped_bound)
        self._tw.append(time_weight)

    def result(self) -> Term:
        tw = np.asarray(self._tw)
        value = exact_sum(np.asarray(self._vals) * tw)
        skipped = exact_sum(np.asarray(self._skips) * tw)
        logs = np.asarray(self._logs)
        finite = np.isfinite(logs)
        if np.any(finite):
            logv = float(logsumexp(logs[finite] + np.log(tw[finite])))
        else:
            logv = -np.inf
        return Term(value, logv, skipped)


def trapezoid_weights(n_frames: int, dt: float) -> np.ndarray:
    w = np.full(n_frames, dt)
    w[0] = w[-1] = dt / 2.0
    return w


def log_trapezoid(fn_log, a: float, b: float, n: int) -> float:
    """log of the composite-trapezoid value of integral exp(fn_log(t)) dt."""
    t = np.linspace(a, b, n + 1)
    lw = np.log(trapezoid_weights(n + 1, (b - a) / n))
    return float(logsumexp(fn_log(t) + lw))


def adaptive_log_integral(fn_log, a: float, b: float, rel_tol: float = 1e-8,
                          n0: int = 64, max_doublings: int = 16) -> float:
    """Step-halving trapezoid in log space until the value stabilises."""
    n = n0
    prev = log_trapezoid(fn_log, a, b, n)
    for _ in range(max_doublings):
        n *= 2
        cur = log_trapezoid(fn_log, a, b, n)
        if abs(math.expm1(min(prev - cur, 700.0))) <= rel_tol:
            return cur
        prev = cur
    raise QuadratureError(f"quadrature did not stabilise to {rel_tol} within n={n} nodes")


def fit_slope(x, y) -> float:
    """Least-squares slope of y against x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm = x - x.mean()
    return float(np.dot(xm, y - y.mean()) / np.dot(xm, xm))

"""Log-domain weighting kernel and combinatorial tables.

Every quantity downstream of the kernel is held in log space: at large
bit widths the binomial coefficients overflow float64 and the Gaussian
kernel values underflow it, so linear-space tables are unusable exactly
where the method is meant to run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "WeightingSpec",
    "LogBinomTable",
    "make_weighting",
    "log_weight",
    "make_log_binom",
    "log_sum_exp",
]

INFINITE_RHO = math.inf


@dataclass(frozen=True, eq=False)
class WeightingSpec:
    """Gaussian weighting of bit-pattern Hamming distance, tabulated in log space.

    log_d[b] = -b^2 / (2 rho^2) for b in [0, m]; rho = inf gives the uniform
    kernel (log_d identically 0), used for closed-form checks.
    """

    rho: float
    m: int
    log_d: np.ndarray  # shape (m+1,), log_d[0] == 0, non-increasing

    @property
    def uniform(self) -> bool:
        return math.isinf(self.rho)


@dataclass(frozen=True, eq=False)
class LogBinomTable:
    """log C(q, g) for 0 <= q <= m, 0 <= g <= m; -inf where g > q."""

    m: int
    log_choose: np.ndarray  # shape (m+1, m+1)

    def row(self, q: int) -> np.ndarray:
        return self.log_choose[q]


def make_weighting(rho: float, m: int) -> WeightingSpec:
    """Build the distance-weight table d(b) = exp(-b^2 / (2 rho^2)).

    rho must be positive; math.inf selects the uniform kernel (d == 1).
    """
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    if math.isnan(rho) or rho <= 0:
        raise ValueError(f"rho must be positive (or inf for uniform), got {rho}")
    b = np.arange(m + 1, dtype=np.float64)
    if math.isinf(rho):
        log_d = np.zeros(m + 1)
    else:
        log_d = -(b * b) / (2.0 * rho * rho)
    return WeightingSpec(rho=float(rho), m=m, log_d=log_d)


def log_weight(spec: WeightingSpec, hamming: int) -> float:
    """log of the kernel weight at a given Hamming distance."""
    if not 0 <= hamming <= spec.m:
        raise ValueError(f"hamming distance {hamming} outside [0, {spec.m}]")
    return float(spec.log_d[hamming])


def make_log_binom(m: int) -> LogBinomTable:
    """Tabulate log C(q, g) by the O(1) iterative update, row by row in log space.

    Row q: log C(q, g) = log C(q, g-1) + log(q - g + 1) - log(g), seeded at
    log C(q, 0) = 0. Entries with g > q are -inf so they vanish as summands
    without special-casing.
    """
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    table = np.full((m + 1, m + 1), -np.inf)
    table[:, 0] = 0.0
    for q in range(1, m + 1):
        g = np.arange(1, q + 1, dtype=np.float64)
        table[q, 1 : q + 1] = np.cumsum(np.log(q - g + 1.0) - np.log(g))
    return LogBinomTable(m=m, log_choose=table)


def log_sum_exp(values) -> float:
    """log(sum(exp(v))) with the shift-by-max trick.

    -inf entries are zero summands; all-(-inf) input returns -inf.
    NaN input is rejected.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return -math.inf
    if np.isnan(arr).any():
        raise ValueError("log_sum_exp: NaN in input")
    return float(lse(arr))


def lse(arr: np.ndarray, axis: int | None = None):
    """Shift-by-max log-sum-exp over an axis; -inf rows stay -inf, no warnings."""
    if axis is None:
        arr = arr.ravel()
        axis = 0
    mx = np.max(arr, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(mx), mx, 0.0)
    total = np.sum(np.exp(arr - shift), axis=axis)
    with np.errstate(divide="ignore"):
        return np.squeeze(shift, axis=axis) + np.log(total)

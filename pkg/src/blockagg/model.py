"""Account-update statistics.

Per-block update probabilities follow a broken power law in the activity
rank ``j`` (1-based). From them we derive the probability of at least one
update within ``b`` blocks, the Poisson-binomial law of the number of
updated observed accounts, the Poisson law of the block count, and the set
of *active* accounts for a given aggregation period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, DataError
from .pmf import BitPmf


@dataclass(frozen=True)
class PowerLawParams:
    """Broken power law ``a1*j**a2`` up to rank ``a3``, slope ``a4`` beyond."""

    a1: float
    a2: float
    a3: int
    a4: float

    def __post_init__(self):
        if not self.a1 > 0:
            raise ConfigError(f"a1 must be positive, got {self.a1}")
        if int(self.a3) != self.a3 or self.a3 < 1:
            raise ConfigError(f"breakpoint a3 must be a positive integer, got {self.a3}")
        object.__setattr__(self, "a3", int(self.a3))

    def as_tuple(self):
        return (self.a1, self.a2, self.a3, self.a4)


#: Least-squares fit to the most active Ethereum accounts.
REFERENCE_FIT = PowerLawParams(0.63, -0.37, 21, -0.79)


def _power_law(j, params: PowerLawParams):
    j = np.asarray(j, dtype=float)
    a1, a2, a3, a4 = params.as_tuple()
    head = a1 * j ** a2
    tail = a3 ** (a2 - a4) * a1 * j ** a4
    return np.where(j <= a3, head, tail)


def power_law_p(j: int, params: PowerLawParams = REFERENCE_FIT) -> float:
    """Per-block update probability of the account ranked ``j``."""
    if j < 1:
        raise ConfigError(f"rank must be >= 1, got {j}")
    p = float(_power_law(j, params))
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"power law yields p={p!r} at rank {j}, outside (0, 1]")
    return p


def update_prob_in_b_blocks(p_j, b):
    """Probability of at least one update in ``b`` blocks: 1-(1-p)^b."""
    out = 1.0 - (1.0 - np.asarray(p_j, dtype=float)) ** np.asarray(b)
    return float(out) if out.ndim == 0 else out


class AccountModel:
    """Per-block update probabilities ``p_1..p_M`` (index ``j`` is 1-based)."""

    def __init__(self, probabilities: Sequence[float]):
        p = np.asarray(probabilities, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ConfigError("need a non-empty 1-d sequence of probabilities")
        if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
            raise ConfigError("update probabilities must lie in [0, 1]")
        self._p = p
        self._p.flags.writeable = False

    @classmethod
    def from_power_law(cls, params: PowerLawParams = REFERENCE_FIT, M: int = 10_000) -> "AccountModel":
        p = _power_law(np.arange(1, M + 1), params)
        if np.any((p <= 0) | (p > 1)):
            raise ConfigError(f"power law {params} leaves (0, 1] within {M} ranks")
        return cls(p)

    @property
    def M(self) -> int:
        return self._p.size

    @property
    def probabilities(self) -> np.ndarray:
        return self._p

    def p(self, j: int) -> float:
        return float(self._p[j - 1])

    def subset(self, indices) -> np.ndarray:
        """Probabilities of the given 1-based account indices."""
        idx = np.asarray(list(indices), dtype=np.int64)
        if idx.size and (idx.min() < 1 or idx.max() > self.M):
            raise ConfigError(f"account index outside [1, {self.M}]")
        return self._p[idx - 1]

    def __len__(self):
        return self.M

    def __repr__(self):
        return f"AccountModel(M={self.M})"


def block_count_pmf(lam: float, T: float, tail: float = 1e-12) -> BitPmf:
    """Poisson(lam*T) block count, truncated once the tail mass drops below ``tail``."""
    if not (lam > 0 and T > 0):
        raise ConfigError("lam and T must be positive")
    if not 0 < tail < 1:
        raise ConfigError("tail must lie in (0, 1)")
    mu = lam * T
    # smallest b* with P(B > b*) < tail
    b_star = int(stats.poisson.isf(tail, mu))
    while stats.poisson.sf(b_star, mu) >= tail:
        b_star += 1
    while b_star > 0 and stats.poisson.sf(b_star - 1, mu) < tail:
        b_star -= 1
    b = np.arange(b_star + 1)
    probs = stats.poisson.pmf(b, mu)
    return BitPmf(b, probs / probs.sum(), unit="blocks")


def poisson_binomial_matrix(q) -> np.ndarray:
    """Rows of Poisson-binomial pmfs, one per row of the success matrix ``q``.

    ``q`` has shape (rows, n); the result has shape (rows, n+1). The
    recursion adds one Bernoulli at a time, so the cost is O(rows * n^2).
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    rows, n = q.shape
    out = np.zeros((rows, n + 1))
    out[:, 0] = 1.0
    for j in range(n):
        qj = q[:, j:j + 1]
        head = out[:, :j + 1].copy()
        out[:, :j + 1] = head * (1.0 - qj)
        out[:, 1:j + 2] += head * qj
    return out


def poisson_binomial(q: Sequence[float]) -> BitPmf:
    """Exact law of the number of successes among independent Bernoulli(q_j)."""
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)):
        raise ConfigError("success probabilities must lie in [0, 1]")
    probs = poisson_binomial_matrix(q.reshape(1, -1))[0]
    probs = np.clip(probs, 0.0, None)
    return BitPmf.from_arrays(np.arange(q.size + 1), probs, unit="accounts", normalize=True)


def blocks_in_period(T: float, T_B: float) -> int:
    """Integer block count ceil(T/T_B), tolerant to float noise in the ratio."""
    return max(0, math.ceil(T / T_B - 1e-9))


def active_set(model: AccountModel, T: float, T_B: float | None = None,
               P_A: float = 0.9, lam: float = 0.1) -> list[int]:
    """Accounts updated at least once within ``T`` with probability >= ``P_A``.

    ``T_B`` defaults to the expected block interval ``1/lam``.
    """
    if T_B is None:
        T_B = 1.0 / lam
    if not (T > 0 and T_B > 0):
        raise ConfigError("T and T_B must be positive")
    if not 0 < P_A < 1:
        raise ConfigError("P_A must lie in (0, 1)")
    b = blocks_in_period(T, T_B)
    q = 1.0 - (1.0 - model.probabilities) ** b
    return [int(j) + 1 for j in np.flatnonzero(q >= P_A)]


@dataclass(frozen=True)
class PowerLawFit:
    params: PowerLawParams
    residual: float
    n: int

    def as_dict(self):
        a1, a2, a3, a4 = self.params.as_tuple()
        return {"a1": a1, "a2": a2, "a3": a3, "a4": a4,
                "residual": self.residual, "n": self.n}


def fit_broken_power_law(freqs: Sequence[float], max_breakpoint: int = 500) -> PowerLawFit:
    """Least-squares fit of the broken power law in log-log space.

    Values are taken in rank order as given; small inversions from noisy
    counts are tolerated (the CSV loader enforces monotone counts).

    For a fixed breakpoint the model is linear in (log a1, a2, a4), so each
    candidate breakpoint in ``[2, min(max_breakpoint, n//2)]`` is solved
    exactly and the one with the smallest squared residual wins; ties go to
    the smallest breakpoint.
    """
    f = np.asarray(freqs, dtype=float)
    if f.ndim != 1 or f.size < 4:
        raise DataError("need at least 4 ranked frequencies")
    if np.any(~np.isfinite(f)) or np.any(f <= 0):
        raise DataError("frequencies must be positive and finite")
    if np.all(f == f[0]):
        raise DataError("degenerate input: all frequencies are equal")

    x = np.log(np.arange(1, f.size + 1, dtype=float))
    y = np.log(f)
    hi = min(max_breakpoint, f.size // 2)
    best = None
    for a3 in range(2, max(hi, 2) + 1):
        xa = math.log(a3)
        X = np.column_stack([np.ones_like(x), np.minimum(x, xa), np.maximum(x - xa, 0.0)])
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = float(np.sum((X @ coef - y) ** 2))
        if best is None or resid < best[0] - 1e-12 * (1.0 + best[0]):
            best = (resid, a3, coef)
    resid, a3, (c, a2, a4) = best
    return PowerLawFit(PowerLawParams(math.exp(c), float(a2), a3, float(a4)), resid, int(f.size))


@dataclass(frozen=True)
class GapComparison:
    """Empirical vs geometric CDF of inter-update gaps (in blocks)."""

    support: np.ndarray
    empirical_cdf: np.ndarray
    geometric_cdf: np.ndarray
    distance: float
    gaps: np.ndarray


def geometric_gap_comparison(update_blocks: Sequence[int], p_j: float) -> GapComparison:
    """Kolmogorov-Smirnov distance between observed gaps and Geometric(p_j)."""
    blocks = np.unique(np.asarray(update_blocks, dtype=np.int64))
    if blocks.size < 2:
        raise DataError("need at least two update events to form a gap")
    if not 0 < p_j <= 1:
        raise ConfigError("p_j must lie in (0, 1]")
    gaps = np.diff(blocks)
    support = np.arange(0, gaps.max() + 1)
    emp = np.searchsorted(np.sort(gaps), support, side="right") / gaps.size
    geo = 1.0 - (1.0 - p_j) ** support
    # both CDFs are right-continuous steps on the integers; beyond max gap the
    # gap only shrinks, so the integer grid carries the supremum
    distance = float(np.max(np.abs(emp - geo)))
    return GapComparison(support, emp, geo, distance, gaps)

"""Closed-form model of frame size, transmission time, duty cycle and gain.

Every frame carries ``H`` overhead bits, one header of ``l_H`` bits per
block of the period, and for each observed account updated in the period
its latest state (``l_a`` bits) plus a share of one proof of multiple
inclusion. Given the number of updated accounts the proof length is
replaced by its expectation under a balanced ``L``-ary tree of height
``eta``, so the only randomness left is the Poisson block count and the
Poisson-binomial number of updated accounts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import outage_probability
from .errors import ValidityError
from .model import AccountModel, block_count_pmf, poisson_binomial_matrix
from .params import SystemParams
from .pmf import BitPmf

MAX_HALT = 1e-3
DEFAULT_TAIL = 1e-12


def pomi_expected_nodes(L: int, eta: int, u: float) -> float:
    """Expected number of sibling hashes in a proof for ``u`` uniform leaves.

    Level by level, the ``L`` children of every expected ancestor are
    candidates; a candidate is a sibling (shipped) with probability
    ``(1 - 1/candidates)**u`` and an ancestor otherwise. Placing leaves
    independently relaxes the exact combinatorics, which overestimates the
    count once ``u`` is comparable to the number of leaves.
    """
    if u <= 0:
        return 0.0
    ancestors = 1.0
    total = 0.0
    for _ in range(eta):
        candidates = L * ancestors
        siblings = candidates * (1.0 - 1.0 / candidates) ** u
        ancestors = candidates - siblings
        total += siblings
    return total


def pomi_expected_bits(params: SystemParams, u: float) -> float:
    """``l_s`` per shipped hash plus ``2*l_s`` per proven leaf."""
    if u <= 0:
        return 0.0
    return params.l_s * pomi_expected_nodes(params.L, params.eta, u) + u * 2 * params.l_s


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def pomi_bits_table(params: SystemParams, n: int) -> np.ndarray:
    """Rounded expected proof bits for u = 0..n."""
    return round_half_up([pomi_expected_bits(params, u) for u in range(n + 1)])


def _observed_p(model: AccountModel, observed) -> np.ndarray:
    return model.subset(sorted(set(observed)))


def update_count_matrix(p: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """P(U = u | B = b) for every b in ``blocks`` (rows) and u (columns)."""
    blocks = np.asarray(blocks)
    q = 1.0 - (1.0 - p[None, :]) ** blocks[:, None]
    return np.clip(poisson_binomial_matrix(q), 0.0, None)


def payload_pmf_given_blocks(params: SystemParams, model: AccountModel, observed, b: int) -> BitPmf:
    """Law of the account payload (states plus proof) after ``b`` blocks."""
    p = _observed_p(model, observed)
    pu = update_count_matrix(p, np.array([b]))[0]
    sizes = np.arange(p.size + 1) * params.l_a + pomi_bits_table(params, p.size)
    return BitPmf.from_arrays(sizes, pu, normalize=True)


@dataclass(frozen=True)
class FrameModel:
    """Frame-size law for one aggregation period and its mean decomposition."""

    pmf: BitPmf
    blocks: BitPmf
    mean_overhead: float
    mean_headers: float
    mean_accounts: float
    mean_pomi: float
    mean_updated: float

    @property
    def mean(self) -> float:
        return self.pmf.mean()

    @property
    def mean_decomposed(self) -> float:
        return self.mean_overhead + self.mean_headers + self.mean_accounts + self.mean_pomi

    def decomposition(self) -> dict:
        return {
            "overhead": self.mean_overhead,
            "headers": self.mean_headers,
            "accounts": self.mean_accounts,
            "pomi": self.mean_pomi,
        }


def _frame_terms(params, model, observed, tail):
    blocks = block_count_pmf(params.lam, params.T, tail)
    p = _observed_p(model, observed)
    pu = update_count_matrix(p, blocks.values)  # rows: b, cols: u
    joint = blocks.probs[:, None] * pu
    pomi = pomi_bits_table(params, p.size)
    return blocks, p, joint, pomi


def frame_pmf(params: SystemParams, model: AccountModel, observed: Sequence[int],
              tail: float = DEFAULT_TAIL) -> FrameModel:
    blocks, p, joint, pomi = _frame_terms(params, model, observed, tail)
    u = np.arange(p.size + 1)
    sizes = (params.H + blocks.values[:, None] * params.l_H
             + u[None, :] * params.l_a + pomi[None, :])
    pmf = BitPmf.from_arrays(sizes, joint, normalize=True)
    pu = joint.sum(axis=0)
    return FrameModel(
        pmf=pmf,
        blocks=blocks,
        mean_overhead=float(params.H),
        mean_headers=blocks.mean() * params.l_H,
        mean_accounts=float(np.dot(pu, u)) * params.l_a,
        mean_pomi=float(np.dot(pu, pomi)),
        mean_updated=float(np.dot(pu, u)),
    )


def expected_frame_bits(params: SystemParams, model: AccountModel, observed: Sequence[int],
                        tail: float = DEFAULT_TAIL) -> float:
    """Mean of :func:`frame_pmf` without materialising the pmf."""
    blocks, p, joint, pomi = _frame_terms(params, model, observed, tail)
    pu = joint.sum(axis=0)
    u = np.arange(p.size + 1)
    return params.H + blocks.mean() * params.l_H + float(np.dot(pu, u * params.l_a + pomi))


def transmission_count_pmf(p_out: float, kmax: int | None = None, tail: float = 1e-15) -> BitPmf:
    """Geometric number of attempts, truncated at ``kmax`` and renormalised."""
    if not 0.0 <= p_out < 1.0:
        raise ValueError(f"p_out must lie in [0, 1), got {p_out}")
    if kmax is None:
        kmax = 1 if p_out == 0 else max(1, math.ceil(math.log(tail) / math.log(p_out)))
    k = np.arange(1, kmax + 1)
    probs = p_out ** (k - 1) * (1.0 - p_out)
    return BitPmf(k, probs / probs.sum(), unit="transmissions")


def halt_probability(params: SystemParams, frame: FrameModel, p_out: float | None = None) -> float:
    """P(k*F/R > T): the frame cannot be delivered within its period."""
    if p_out is None:
        p_out = outage_probability(params)
    budget = params.T * params.R
    kmax = np.floor(budget / frame.pmf.values.astype(float))
    return float(np.dot(frame.pmf.probs, np.power(p_out, kmax)))


@dataclass(frozen=True)
class TwDistribution:
    """Airtime law on a grid of 1/R seconds, conditioned on delivery."""

    pmf: BitPmf
    R: float
    halt_probability: float

    @property
    def seconds(self) -> np.ndarray:
        return self.pmf.values / self.R

    def mean(self) -> float:
        return self.pmf.mean() / self.R

    def ccdf(self, t):
        """P(T_w > t) for ``t`` in seconds (delivered frames only)."""
        return self.pmf.sf(np.floor(np.asarray(t, dtype=float) * self.R))


def tw_distribution(params: SystemParams, frame: FrameModel, kmax: int | None = None,
                    p_out: float | None = None) -> TwDistribution:
    if p_out is None:
        p_out = outage_probability(params)
    k = transmission_count_pmf(p_out, kmax)
    bit_times = frame.pmf.values[:, None] * k.values[None, :]
    weights = frame.pmf.probs[:, None] * k.probs[None, :]
    ok = bit_times <= params.T * params.R
    if not ok.any():
        raise ValidityError("no frame can be delivered within the aggregation period")
    pmf = BitPmf.from_arrays(bit_times[ok], weights[ok], unit="bit-times", normalize=True)
    return TwDistribution(pmf, params.R, halt_probability(params, frame, p_out))


def duty_cycle_from_frame(params: SystemParams, frame: FrameModel, max_halt: float | None = MAX_HALT) -> float:
    """Fraction of the period the radio spends receiving: E[F]/((1-p_out) R T).

    Raises :class:`ValidityError` if frames are halted with probability above
    ``max_halt`` (pass ``None`` to skip the check).
    """
    p_out = outage_probability(params)
    if max_halt is not None:
        halt = halt_probability(params, frame, p_out)
        if halt > max_halt:
            raise ValidityError(
                f"halt probability {halt:.3g} exceeds {max_halt:g} (R={params.R:g}, T={params.T:g})")
    if p_out >= 1.0:
        return math.inf
    return frame.mean / ((1.0 - p_out) * params.R * params.T)


def duty_cycle(params: SystemParams, model: AccountModel, observed: Sequence[int],
               max_halt: float | None = MAX_HALT) -> float:
    return duty_cycle_from_frame(params, frame_pmf(params, model, observed), max_halt)


def p2_expected_bits(params: SystemParams, model: AccountModel, observed: Sequence[int]) -> float:
    """Mean bits per block of the per-block baseline protocol."""
    p = _observed_p(model, observed)
    pu = update_count_matrix(p, np.array([1]))[0]
    sizes = np.arange(p.size + 1) * params.l_a + pomi_bits_table(params, p.size)
    return params.H + params.l_H + float(np.dot(pu, sizes))


def aggregation_gain(params: SystemParams, model: AccountModel, observed: Sequence[int],
                     tail: float = DEFAULT_TAIL) -> float:
    """Relative saving in bits per block period: 1 - E[F] / (lam T E[F_P2])."""
    mean_f = expected_frame_bits(params, model, observed, tail)
    return 1.0 - mean_f / (params.lam * params.T * p2_expected_bits(params, model, observed))

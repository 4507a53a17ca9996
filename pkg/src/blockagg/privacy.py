"""Obfuscation sets: hide one account of interest among active decoys.

The device subscribes to a set that contains the secret account plus
decoys spread over the whole activity ranking, so that no single account
stands out. Decoys are added while the expected bits per aggregation period
stay within a budget.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analytics import expected_frame_bits
from .errors import BudgetTooSmallError, ConfigError, NotActiveError
from .model import AccountModel, active_set
from .params import SystemParams


@dataclass(frozen=True)
class ObfuscationPlan:
    secret: int
    set: tuple[int, ...]
    expected_cost: float
    T: float

    def as_dict(self) -> dict:
        return {"secret": self.secret, "set": list(self.set),
                "expected_cost_bits": self.expected_cost, "T_s": self.T}

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


def expected_cost(accounts: Sequence[int], model: AccountModel, params: SystemParams) -> float:
    """Expected bits per aggregation period when observing ``accounts``."""
    accounts = sorted(set(accounts))
    if not accounts:
        raise ConfigError("cost of an empty account set is undefined")
    return expected_frame_bits(params, model, accounts)


def segments(n: int, k: int) -> list[range]:
    """``k`` contiguous ranges covering ``range(n)``; leading ones take the remainder."""
    size, extra = divmod(n, k)
    out, lo = [], 0
    for i in range(k):
        hi = lo + size + (i < extra)
        out.append(range(lo, hi))
        lo = hi
    return out


def _ranking(model: AccountModel, params: SystemParams) -> list[int]:
    active = active_set(model, params.T, P_A=params.P_A, lam=params.lam)
    p = model.subset(active)
    order = np.argsort(-p, kind="stable")
    return [active[i] for i in order]


def build_obfuscation_set(j_star: int, model: AccountModel, params: SystemParams,
                          budget_bits: float, rng: np.random.Generator) -> ObfuscationPlan:
    """Grow a decoy set around ``j_star`` until the next size breaks the budget.

    At size ``n`` the activity ranking of the active accounts is cut into
    ``n`` contiguous segments and one account is drawn uniformly from each;
    the segment holding ``j_star`` always contributes ``j_star``. The set is
    redrawn from scratch at every size.
    """
    ranking = _ranking(model, params)
    if j_star not in ranking:
        raise NotActiveError(f"account {j_star} is not active for T={params.T:g} s, P_A={params.P_A:g}")
    pos = ranking.index(j_star)
    best = (j_star,)
    best_cost = expected_cost(best, model, params)
    if best_cost > budget_bits:
        raise BudgetTooSmallError(
            f"{{{j_star}}} alone costs {best_cost:.0f} bits per period, budget is {budget_bits:g}")
    unbounded = math.isinf(budget_bits)
    for n in range(2, len(ranking) + 1):
        picks = [j_star if pos in seg else ranking[seg[int(rng.integers(len(seg)))]]
                 for seg in segments(len(ranking), n)]
        candidate = tuple(sorted(picks))
        if unbounded:
            best = candidate
            continue
        cost = expected_cost(candidate, model, params)
        if cost > budget_bits:
            break
        best, best_cost = candidate, cost
    if unbounded and len(best) > 1:
        best_cost = expected_cost(best, model, params)
    return ObfuscationPlan(j_star, best, best_cost, params.T)

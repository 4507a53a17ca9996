import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from blockagg import DEFAULT_PARAMS as BASE, BudgetTooSmallError, ConfigError, NotActiveError
from blockagg.analytics import pomi_expected_bits, round_half_up
from blockagg.model import AccountModel, active_set
from blockagg.privacy import ObfuscationPlan, build_obfuscation_set, expected_cost, segments
from blockagg.sim import SimConfig, pool_reports, run

MODEL = AccountModel.from_power_law()


def test_segments_cover_and_spread_remainder():
    segs = segments(41, 4)
    assert [len(s) for s in segs] == [11, 10, 10, 10]
    assert [i for s in segs for i in s] == list(range(41))
    assert [len(s) for s in segments(5, 5)] == [1] * 5


def test_cost_of_certain_singleton():
    model = AccountModel([1.0, 0.2])
    p = BASE
    # the account is only carried when at least one block arrives
    busy = -math.expm1(-p.lam * p.T)
    want = p.H + p.lam * p.T * p.l_H + busy * (p.l_a + int(round_half_up(pomi_expected_bits(p, 1))))
    assert expected_cost([1], model, p) == pytest.approx(want, rel=1e-9)
    with pytest.raises(ConfigError):
        expected_cost([], model, p)


@given(st.lists(st.integers(1, 300), min_size=1, max_size=15, unique=True), st.integers(1, 300))
def test_cost_superset_monotone(base, extra):
    assert expected_cost(base + [extra], MODEL, BASE) >= expected_cost(base, MODEL, BASE) - 1e-6


def test_budget_exactly_singleton():
    cost = expected_cost([41], MODEL, BASE)
    plan = build_obfuscation_set(41, MODEL, BASE, cost, np.random.default_rng(0))
    assert plan.set == (41,)
    assert plan.expected_cost == cost


def test_unlimited_budget_returns_active_set():
    plan = build_obfuscation_set(41, MODEL, BASE, math.inf, np.random.default_rng(0))
    assert list(plan.set) == active_set(MODEL, 180)


def test_errors():
    with pytest.raises(NotActiveError):
        build_obfuscation_set(9999, MODEL, BASE, math.inf, np.random.default_rng(0))
    with pytest.raises(BudgetTooSmallError):
        build_obfuscation_set(41, MODEL, BASE, 1000.0, np.random.default_rng(0))


@pytest.mark.parametrize("seed", range(5))
def test_plan_properties(seed):
    budget = 2.5e6
    plan = build_obfuscation_set(41, MODEL, BASE, budget, np.random.default_rng(seed))
    assert 41 in plan.set
    assert plan.expected_cost <= budget
    assert plan.expected_cost == pytest.approx(expected_cost(plan.set, MODEL, BASE))
    assert set(plan.set) <= set(active_set(MODEL, 180))
    again = build_obfuscation_set(41, MODEL, BASE, budget, np.random.default_rng(seed))
    assert again == plan


def test_size_stable_across_seeds():
    sizes = {len(build_obfuscation_set(41, MODEL, BASE, 2.5e6, np.random.default_rng(s)).set)
             for s in range(8)}
    sets = {build_obfuscation_set(41, MODEL, BASE, 2.5e6, np.random.default_rng(s)).set for s in range(8)}
    assert max(sizes) - min(sizes) <= 1
    assert len(sets) > 1


def tradeoff_curve(T, sizes, seed=0):
    params = BASE.replace(T=T)
    rng = np.random.default_rng(seed)
    ranking = active_set(MODEL, T)
    pos = ranking.index(41)
    out = []
    for n in sizes:
        picks = [41 if pos in s else ranking[s[int(rng.integers(len(s)))]] for s in segments(len(ranking), n)]
        out.append(expected_cost(picks, MODEL, params))
    return out


def test_cost_increases_with_size_and_period():
    sizes = [1, 2, 4, 8, 16, 32]
    short = tradeoff_curve(180, sizes)
    long = tradeoff_curve(1800, sizes)
    assert short == sorted(short) and len(set(short)) == len(short)
    assert long == sorted(long) and len(set(long)) == len(long)
    assert all(b > a for a, b in zip(short, long))


def test_cost_matches_simulation():
    rng = np.random.default_rng(21)
    ranking = active_set(MODEL, 180)
    for _ in range(3):
        picks = tuple(sorted(int(j) for j in rng.choice(ranking, 6, replace=False)))
        cfg = SimConfig(BASE, MODEL, picks, horizon=200 * BASE.T, verify=False)
        pooled = pool_reports([run(cfg.replace(seed=s)) for s in range(5)])
        per_period = pooled.bits_total / pooled.frames_sent
        assert per_period == pytest.approx(expected_cost(picks, MODEL, BASE), rel=0.03)


def test_plan_json():
    plan = ObfuscationPlan(41, (3, 41), 123.0, 180.0)
    assert json.loads(plan.to_json()) == {"secret": 41, "set": [3, 41], "expected_cost_bits": 123.0, "T_s": 180.0}

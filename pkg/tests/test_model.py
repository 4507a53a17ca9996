import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from blockagg.errors import ConfigError, DataError
from blockagg.model import (REFERENCE_FIT, AccountModel, PowerLawParams, active_set, block_count_pmf,
                            blocks_in_period, fit_broken_power_law, geometric_gap_comparison,
                            poisson_binomial, power_law_p, update_prob_in_b_blocks)


def brute_force_pb(q):
    n = len(q)
    out = np.zeros(n + 1)
    for bits in itertools.product((0, 1), repeat=n):
        w = 1.0
        for b, qi in zip(bits, q):
            w *= qi if b else 1 - qi
        out[sum(bits)] += w
    return out


def test_power_law_values():
    assert power_law_p(1) == pytest.approx(0.63)
    a3 = REFERENCE_FIT.a3
    head = REFERENCE_FIT.a1 * a3 ** REFERENCE_FIT.a2
    tail = a3 ** (REFERENCE_FIT.a2 - REFERENCE_FIT.a4) * REFERENCE_FIT.a1 * a3 ** REFERENCE_FIT.a4
    assert head == pytest.approx(tail, rel=1e-12)
    # the last account active at T=180 sits just above the 1 - 0.1**(1/18) threshold
    assert power_law_p(41) == pytest.approx(0.1209, rel=5e-3)
    assert power_law_p(41) >= 1 - 0.1 ** (1 / 18) > power_law_p(42)


def test_power_law_errors():
    with pytest.raises(ConfigError):
        power_law_p(0)
    with pytest.raises(ConfigError):
        power_law_p(1, PowerLawParams(2.0, -0.5, 3, -1.0))
    with pytest.raises(ConfigError):
        PowerLawParams(1.0, -1, 2.5, -1)


def test_power_law_non_increasing(fitted_model):
    assert np.all(np.diff(fitted_model.probabilities) <= 0)


def test_update_prob():
    assert update_prob_in_b_blocks(0.5, 2) == 0.75
    assert update_prob_in_b_blocks(1.0, 7) == 1.0
    assert update_prob_in_b_blocks(0.3, 0) == 0.0
    assert update_prob_in_b_blocks(0.1209, 18) == pytest.approx(0.902, abs=1e-3)
    assert update_prob_in_b_blocks(np.array([0.5, 1.0]), 1).tolist() == [0.5, 1.0]


def test_block_count_pmf():
    unit = block_count_pmf(1.0, 1.0)
    assert unit.probs[0] == pytest.approx(math.exp(-1), rel=1e-10)
    pmf = block_count_pmf(0.1, 180)
    assert abs(pmf.mean() - 18) < 1e-9
    assert pmf.probs.sum() == pytest.approx(1, abs=1e-12)
    assert block_count_pmf(0.1, 1e-6).probs[0] > 0.999999
    with pytest.raises(ConfigError):
        block_count_pmf(0.1, 0)


@pytest.mark.parametrize("q,expected", [([0.5, 0.5], [0.25, 0.5, 0.25]), ([1.0, 0.3], [0.0, 0.7, 0.3])])
def test_poisson_binomial_small(q, expected):
    pmf = poisson_binomial(q)
    assert [pmf[u] for u in range(len(q) + 1)] == pytest.approx(expected, abs=1e-15)
    assert pmf.unit == "accounts"


def test_poisson_binomial_brute_force(rng):
    for _ in range(50):
        q = rng.random(int(rng.integers(1, 11)))
        pmf = poisson_binomial(q)
        dense = np.array([pmf[u] for u in range(q.size + 1)])
        assert np.max(np.abs(dense - brute_force_pb(q))) < 1e-12
    q = rng.random(8)
    dense = np.array([poisson_binomial(q)[u] for u in range(9)])
    assert np.max(np.abs(dense - brute_force_pb(q))) < 1e-12


@given(st.lists(st.floats(0, 1), min_size=1, max_size=200))
def test_poisson_binomial_moments(q):
    pmf = poisson_binomial(q)
    q = np.asarray(q)
    assert pmf.mean() == pytest.approx(q.sum(), abs=1e-9)
    assert pmf.var() == pytest.approx(np.sum(q * (1 - q)), abs=1e-9)


def test_active_set_counts(fitted_model):
    assert len(active_set(fitted_model, 180)) == 41
    assert abs(len(active_set(fitted_model, 1800)) - 695) <= 14
    assert active_set(fitted_model, 180) == list(range(1, 42))


def test_active_set_monotone(fitted_model):
    sizes = [len(active_set(fitted_model, T)) for T in (60, 180, 600, 1800, 3600)]
    assert sizes == sorted(sizes)
    for T in (180, 1800):
        by_pa = [len(active_set(fitted_model, T, P_A=pa)) for pa in (0.5, 0.8, 0.9, 0.99)]
        assert by_pa == sorted(by_pa, reverse=True)


def test_active_set_certain_account():
    model = AccountModel([1.0, 0.0, 0.001])
    assert active_set(model, 10, P_A=0.999) == [1]
    assert blocks_in_period(180, 10) == 18
    assert blocks_in_period(181, 10) == 19


def test_fit_noiseless_recovery():
    f = AccountModel.from_power_law(REFERENCE_FIT, 10_000).probabilities
    fit = fit_broken_power_law(f).params
    assert fit.a3 == 21
    for got, want in zip(fit.as_tuple(), REFERENCE_FIT.as_tuple()):
        assert got == pytest.approx(want, rel=1e-6)


def test_fit_single_slope():
    f = 0.5 * np.arange(1, 400, dtype=float) ** -0.7
    fit = fit_broken_power_law(f)
    assert fit.params.a2 == pytest.approx(fit.params.a4, rel=1e-6)
    assert fit.params.a3 == 2  # unidentifiable breakpoint, smallest candidate wins
    assert fit.residual < 1e-20


def test_fit_noisy_slopes():
    f = AccountModel.from_power_law(REFERENCE_FIT, 10_000).probabilities
    rng = np.random.default_rng(0)
    fit = fit_broken_power_law(f * rng.lognormal(0, 0.01, f.size)).params
    assert fit.a2 == pytest.approx(REFERENCE_FIT.a2, rel=0.05)
    assert fit.a4 == pytest.approx(REFERENCE_FIT.a4, rel=0.05)


def test_fit_errors():
    with pytest.raises(DataError):
        fit_broken_power_law([0.1, 0.1, 0.1, 0.1])
    with pytest.raises(DataError):
        fit_broken_power_law([0.3, 0.2, 0.1])
    with pytest.raises(DataError):
        fit_broken_power_law([0.3, 0.0, 0.1, 0.05])


def test_gaps():
    assert geometric_gap_comparison(range(20), 1.0).distance == 0.0
    assert geometric_gap_comparison(range(0, 1000, 10), 0.1).distance > 0.3
    rng = np.random.default_rng(1)
    blocks = np.cumsum(rng.geometric(0.2, 10_000))
    assert geometric_gap_comparison(blocks, 0.2).distance < 0.02
    with pytest.raises(DataError):
        geometric_gap_comparison([5], 0.2)
    # duplicates count as one event
    assert geometric_gap_comparison([1, 1, 2, 3], 1.0).gaps.tolist() == [1, 1]


def test_account_model_validation():
    with pytest.raises(ConfigError):
        AccountModel([])
    with pytest.raises(ConfigError):
        AccountModel([1.2])
    m = AccountModel([0.5, 0.25])
    assert m.p(2) == 0.25
    with pytest.raises(ConfigError):
        m.subset([3])

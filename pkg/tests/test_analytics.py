import math

import numpy as np
import pytest
from scipy import stats

from blockagg import DEFAULT_PARAMS as BASE, ValidityError
from blockagg.analytics import (aggregation_gain, duty_cycle, duty_cycle_from_frame, expected_frame_bits,
                                frame_pmf, halt_probability, p2_expected_bits, payload_pmf_given_blocks,
                                pomi_bits_table, pomi_expected_bits, pomi_expected_nodes, round_half_up,
                                transmission_count_pmf, tw_distribution)
from blockagg.channel import outage_probability
from blockagg.model import AccountModel, active_set

from oracles import exact_pomi_nodes, exhaustive_pomi_nodes

P1 = int(round_half_up(pomi_expected_bits(BASE, 1)))
CERTAIN = AccountModel([1.0, 0.5, 0.5] + [0.01] * 7)


@pytest.fixture(scope="module")
def active20():
    model = AccountModel.from_power_law()
    active = active_set(model, 1800)
    return model, sorted(int(j) for j in np.random.default_rng(7).choice(active, 20, replace=False))


def test_pomi_single_leaf_exact():
    for L in range(2, 17):
        for eta in range(1, 9):
            assert pomi_expected_nodes(L, eta, 1) == L * eta - eta
    assert pomi_expected_nodes(16, 5, 1) == 75
    assert pomi_expected_nodes(16, 5, 0) == 0.0


def test_pomi_binary_pair_example():
    rec = pomi_expected_nodes(2, 2, 2)
    exact = exhaustive_pomi_nodes(2, 2, 2)
    assert rec == pytest.approx(11 / 6)
    assert exact == pytest.approx(5 / 3)
    assert rec / exact < 1.12


@pytest.mark.parametrize("L,eta", [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2), (3, 3)])
def test_pomi_relaxation_error_small(L, eta):
    n = L ** eta
    for u in range(1, int(math.isqrt(n)) + 1):
        exact = exhaustive_pomi_nodes(L, eta, u)
        assert abs(pomi_expected_nodes(L, eta, u) - exact) / exact < 0.15


def test_linearity_oracle_matches_enumeration():
    for L, eta in [(2, 3), (3, 2), (4, 2)]:
        for u in range(1, L ** eta + 1):
            if math.comb(L ** eta, u) <= 20_000:
                assert exact_pomi_nodes(L, eta, u) == pytest.approx(exhaustive_pomi_nodes(L, eta, u))


@pytest.mark.parametrize("L,eta", [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2)])
def test_pomi_overestimates_where_it_holds(L, eta):
    for u in range(1, L ** eta + 1):
        assert pomi_expected_nodes(L, eta, u) >= exact_pomi_nodes(L, eta, u) - 1e-12


@pytest.mark.xfail(strict=True, reason="recursion falls ~1.5% below the exact mean for L=3, eta=3, 2<=u<=5")
def test_pomi_overestimates_ternary_height_three():
    for u in range(1, 28):
        assert pomi_expected_nodes(3, 3, u) >= exact_pomi_nodes(3, 3, u) - 1e-12


def test_pomi_bits():
    assert pomi_expected_bits(BASE, 1) == 19712
    assert pomi_expected_bits(BASE, 0) == 0
    f = np.array([pomi_expected_bits(BASE, u) for u in range(1, 52)])
    d = np.diff(f)
    assert np.all(d > 0)
    assert np.all(np.diff(d) <= 1e-9)
    assert pomi_bits_table(BASE, 3).tolist() == [0] + [int(round_half_up(pomi_expected_bits(BASE, u)))
                                               for u in (1, 2, 3)]
    assert round_half_up([0.5, 1.5, 2.49]).tolist() == [1, 2, 2]


def test_payload_pmf_examples():
    assert payload_pmf_given_blocks(BASE, CERTAIN, [1, 2], 0).as_dict() == {0: 1.0}
    assert payload_pmf_given_blocks(BASE, CERTAIN, [1], 3).as_dict() == {BASE.l_a + P1: 1.0}
    pmf = payload_pmf_given_blocks(BASE, CERTAIN, [2, 3], 1)
    sizes = [0, BASE.l_a + P1, 2 * BASE.l_a + int(round_half_up(pomi_expected_bits(BASE, 2)))]
    assert pmf.as_dict() == pytest.approx(dict(zip(sizes, [0.25, 0.5, 0.25])))


def test_frame_pmf_empty_set():
    frame = frame_pmf(BASE, CERTAIN, [])
    b = frame.blocks.values
    assert frame.pmf.values.tolist() == (BASE.H + b * BASE.l_H).tolist()
    assert frame.pmf.probs == pytest.approx(frame.blocks.probs)
    assert frame.blocks.probs == pytest.approx(stats.poisson.pmf(b, 18), rel=1e-9)


def test_frame_pmf_moments(active20):
    model, obs = active20
    for T in (180, 1800):
        p = BASE.replace(T=T)
        frame = frame_pmf(p, model, obs)
        assert frame.pmf.probs.sum() == pytest.approx(1, abs=1e-9)
        assert frame.pmf.min == p.H
        assert frame.mean == pytest.approx(frame.mean_decomposed, rel=1e-6)
        assert frame.mean_headers == pytest.approx(p.lam * T * p.l_H, rel=1e-9)
        assert expected_frame_bits(p, model, obs) == pytest.approx(frame.mean, rel=1e-9)


def test_transmission_counts():
    assert transmission_count_pmf(0.0).as_dict() == {1: 1.0}
    k = transmission_count_pmf(0.5)
    assert (k[1], k[2]) == pytest.approx((0.5, 0.25))
    for p in (0.01, 0.3, 0.9):
        assert transmission_count_pmf(p).mean() == pytest.approx(1 / (1 - p), rel=1e-9)
    with pytest.raises(ValueError):
        transmission_count_pmf(1.0)


def test_tw_without_outage():
    p = BASE.replace(gamma=1e12)
    frame = frame_pmf(p, CERTAIN, [1, 2])
    tw = tw_distribution(p, frame, p_out=0.0)
    assert tw.pmf.values.tolist() == frame.pmf.values.tolist()
    assert tw.pmf.probs == pytest.approx(frame.pmf.probs)
    assert tw.seconds == pytest.approx(frame.pmf.values / p.R)


def test_tw_mean_factorises(active20):
    model, obs = active20
    frame = frame_pmf(BASE, model, obs)
    tw = tw_distribution(BASE, frame)
    k = transmission_count_pmf(outage_probability(BASE))
    assert tw.mean() == pytest.approx(frame.mean * k.mean() / BASE.R, rel=1e-9)
    assert tw.halt_probability < 1e-12


def test_tw_dominance_larger_set():
    model = AccountModel.from_power_law()
    small = [1, 2]
    large = active_set(model, 180)[-20:]
    for T in (180, 1800):
        p = BASE.replace(T=T)
        a = tw_distribution(p, frame_pmf(p, model, small))
        b = tw_distribution(p, frame_pmf(p, model, large))
        grid = np.linspace(0, max(a.seconds.max(), b.seconds.max()), 400)
        assert np.all(b.ccdf(grid) >= a.ccdf(grid) - 1e-12)
        assert b.mean() > a.mean()


def test_tw_monte_carlo(active20):
    model, obs = active20
    frame = frame_pmf(BASE, model, obs)
    tw = tw_distribution(BASE, frame)
    rng = np.random.default_rng(3)
    f = rng.choice(frame.pmf.values, p=frame.pmf.probs, size=200_000)
    k = rng.geometric(1 - outage_probability(BASE), size=f.size)
    t = f * k / BASE.R
    for q in (2.0, 4.0, 6.0, 8.0):
        emp = np.mean(t > q)
        assert abs(emp - float(tw.ccdf(q))) < 4 * math.sqrt(emp * (1 - emp) / f.size) + 1e-4


def test_duty_full_occupancy():
    p = BASE.replace(gamma=1e300)
    frame = frame_pmf(p, CERTAIN, [])
    p = p.replace(R=frame.mean / p.T)
    assert duty_cycle_from_frame(p, frame, max_halt=None) == pytest.approx(1.0, rel=1e-12)


def test_duty_validity():
    p = BASE.replace(gamma=1.0)
    model = AccountModel.from_power_law()
    with pytest.raises(ValidityError):
        duty_cycle(p, model, active_set(model, 180))
    assert duty_cycle(p, model, active_set(model, 180), max_halt=None) > 0


def test_duty_snr_shape(active20):
    model, obs = active20
    frame = frame_pmf(BASE, model, obs)
    snr = np.arange(10, 61, 2)
    d = np.array([duty_cycle_from_frame(BASE.replace(gamma=10 ** (s / 10)), frame) for s in snr])
    assert np.all(np.diff(d) < 0)
    d40, d60 = d[snr == 40][0], d[snr == 60][0]
    assert (d40 - d60) / d60 < 0.005


def test_duty_rate_u_shape(active20):
    model, obs = active20
    frame = frame_pmf(BASE, model, obs)
    rates = np.geomspace(5e4, 2e6, 60)

    def duty(R, check=True):
        return duty_cycle_from_frame(BASE.replace(R=R), frame, 1e-3 if check else None)

    d = np.array([duty(R, False) for R in rates])
    i = int(np.argmin(d))
    assert 0 < i < rates.size - 1
    r_star = rates[i]
    assert duty(r_star) < duty(r_star / 4)
    assert duty(r_star) < duty(1.25 * r_star)
    assert duty(r_star) < duty(4 * r_star, check=False)
    with pytest.raises(ValidityError):
        duty(4 * r_star)


def test_p2_expected_bits():
    assert p2_expected_bits(BASE, CERTAIN, []) == 5246
    assert p2_expected_bits(BASE, CERTAIN, [1]) == 5246 + BASE.l_a + P1


def test_gain_limits():
    p = BASE.replace(T=BASE.block_period)
    assert abs(aggregation_gain(p, CERTAIN, [])) < 1e-9
    assert aggregation_gain(BASE.replace(T=1), CERTAIN, []) < 0


def test_gain_single_certain_account():
    H, lH, la = BASE.H, BASE.l_H, BASE.l_a
    closed = 1 - (H + 180 * lH + la + P1) / (180 * (H + lH + la + P1))
    got = aggregation_gain(BASE.replace(T=1800), CERTAIN, [1])
    assert got == pytest.approx(closed, rel=1e-9)
    assert got == pytest.approx(0.98278064125037, abs=1e-12)


def test_gain_increasing_in_T(active20):
    model, obs = active20
    g = [aggregation_gain(BASE.replace(T=T), model, obs) for T in (60, 180, 600, 1800)]
    assert g == sorted(g) and len(set(g)) == 4
    Ts = np.arange(1800, 3601, 300.0)
    G = np.array([aggregation_gain(BASE.replace(T=T), model, obs) for T in Ts])
    second = np.diff(G, 2)
    assert np.all(np.abs(second) < 0.005)
    assert np.all(np.diff(np.abs(second)) < 0)


def test_halt_probability_matches_tw(active20):
    model, obs = active20
    p = BASE.replace(gamma=1.0)
    frame = frame_pmf(p, model, obs)
    h = halt_probability(p, frame)
    assert 1e-4 < h < 1
    # brute force over (F, k)
    k = transmission_count_pmf(outage_probability(p), kmax=4000)
    mass = frame.pmf.probs[:, None] * k.probs[None, :]
    over = frame.pmf.values[:, None] * k.values[None, :] > p.T * p.R
    assert h == pytest.approx(float(mass[over].sum()), rel=1e-9)

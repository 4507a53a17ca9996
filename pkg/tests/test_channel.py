import numpy as np
import pytest
from hypothesis import given, strategies as st

from blockagg import DEFAULT_PARAMS as BASE, ConfigError
from blockagg.channel import ChannelParams, outage_curve, outage_probability, sample_transmissions


def test_reference_outage():
    p = outage_probability(ChannelParams.from_db(250e3, 180e3, 30))
    assert 1.55e-3 <= p <= 1.65e-3
    assert outage_probability(BASE) == pytest.approx(p)


def test_limits():
    assert outage_probability(ChannelParams(250e3, 180e3, 1e300)) == pytest.approx(0.0, abs=1e-290)
    assert outage_probability(ChannelParams(1e-300, 180e3, 1000)) < 1e-300
    assert outage_curve(0.0, 180e3, 1000) == 0.0
    assert outage_curve(1e9, 1, 1000) == 1.0


def test_positive_params():
    with pytest.raises(ConfigError):
        ChannelParams(0, 1, 1)


@given(st.floats(1e3, 1e6), st.floats(1.01, 3.0))
def test_monotone(R, factor):
    W, g = 180e3, 1000.0
    assert outage_curve(R * factor, W, g) > outage_curve(R, W, g)
    assert outage_curve(R, W, g * factor) < outage_curve(R, W, g)
    assert outage_curve(R, W * factor, g) < outage_curve(R, W, g)


def test_sampling():
    rng = np.random.default_rng(0)
    assert np.all(sample_transmissions(0.0, rng, 1000) == 1)
    k = sample_transmissions(0.5, rng, 1_000_000)
    assert k.min() >= 1
    assert k.mean() == pytest.approx(2.0, rel=0.01)
    n = k.size
    sigma = np.sqrt(0.125 * 0.875 / n)
    assert abs(np.mean(k == 3) - 0.125) < 3 * sigma
    a = sample_transmissions(0.3, np.random.default_rng(5), 20)
    b = sample_transmissions(0.3, np.random.default_rng(5), 20)
    assert np.array_equal(a, b)
    with pytest.raises(ConfigError):
        sample_transmissions(1.0, rng)

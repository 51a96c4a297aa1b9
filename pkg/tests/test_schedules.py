import math

import pytest

from vamuon.errors import ConfigError
from vamuon.schedules import Schedule


def test_constant():
    s = Schedule("constant", peak=0.1, total_steps=10)
    assert [s(t) for t in (1, 5, 10)] == [0.1, 0.1, 0.1]


def test_warmup_constant():
    s = Schedule("warmup_constant", peak=1.0, total_steps=100, warmup_steps=4)
    assert [s(t) for t in (1, 2, 4, 5, 100)] == [0.25, 0.5, 1.0, 1.0, 1.0]


def test_cosine_warmup_endpoints():
    s = Schedule("cosine_warmup", peak=1.0, total_steps=110, warmup_steps=10, min_eta=0.01)
    assert s(10) == 1.0
    assert s(60) == pytest.approx(0.01 + 0.99 * 0.5, abs=1e-15)
    assert s(110) == pytest.approx(0.01, abs=1e-15)
    values = [s(t) for t in range(10, 111)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_wsd_linear_tail():
    s = Schedule("wsd", peak=2.0, total_steps=100, warmup_steps=0, decay_fraction=0.8)
    assert s(20) == 2.0
    assert s(60) == pytest.approx(2.0 * 40 / 80)
    assert s(100) == 0.0
    full = Schedule("wsd", peak=1.0, total_steps=10, decay_fraction=1.0)
    assert [full(t) for t in (1, 5, 10)] == pytest.approx([0.9, 0.5, 0.0])


def test_wsd_zero_fraction_is_flat():
    s = Schedule("wsd", peak=1.0, total_steps=10, decay_fraction=0.0)
    assert s(10) == 1.0


def test_multiplier_scales_out_peak():
    a = Schedule("cosine_warmup", peak=0.5, total_steps=50, warmup_steps=5)
    assert all(math.isclose(a(t), 0.5 * a.multiplier(t)) for t in range(1, 51))


@pytest.mark.parametrize(
    "kw",
    [
        {"kind": "exp"},
        {"total_steps": 0},
        {"warmup_steps": 11},
        {"decay_fraction": 1.5},
        {"min_eta": 2.0},
    ],
)
def test_validation(kw):
    with pytest.raises(ConfigError):
        Schedule(**{"peak": 1.0, "total_steps": 10, **kw})

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prlmc_lab import schedule as S

SCHEDULES = [
    S.constant(0.1),
    S.polynomial(4.0, 1.0),
    S.polynomial(1.0, 1.0),
    S.polynomial(1.0, 0.5),
    S.polynomial(2.0, 0.75, offset=3),
]


@pytest.mark.parametrize("s, n, expected", [
    (S.constant(0.1), 7, 0.1),
    (S.polynomial(4.0, 1.0), 8, 0.5),
    (S.polynomial(1.0, 0.5), 4, 0.5),
    (S.polynomial(4.0, 1.0, offset=7), 1, 0.5),
])
def test_gamma_examples(s, n, expected):
    assert S.gamma(s, n) == pytest.approx(expected, rel=1e-15)


def test_gamma_rejects_zero_index():
    with pytest.raises(ValueError):
        S.gamma(S.constant(0.1), 0)


@pytest.mark.parametrize("s, n, expected", [
    (S.constant(0.1), 10, 1.0),
    (S.polynomial(1.0, 1.0), 3, 1.0 + 1.0 / 2.0 + 1.0 / 3.0),
])
def test_time_examples(s, n, expected):
    assert S.time(s, n) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("s", SCHEDULES, ids=repr)
def test_time_zero_and_strictly_increasing(s):
    assert S.time(s, 0) == 0.0
    t = S.times(s, 2000)
    assert np.all(np.diff(t) > 0)
    assert t[1234] == pytest.approx(S.time(s, 1234), rel=1e-12)


@pytest.mark.parametrize("s", SCHEDULES, ids=repr)
def test_non_increasing(s):
    g = S.gammas(s, 100_001)
    assert np.all(g[1:] <= g[:-1])
    assert np.all(g > 0)


@pytest.mark.parametrize("s, expected", [
    (S.constant(0.1), 0.0),
    (S.polynomial(4.0, 1.0), 0.25),
    (S.polynomial(1.0, 0.5), 0.0),
    (S.polynomial(4.0, 1.0, offset=7), 0.25),
])
def test_omega_examples(s, expected):
    assert S.omega(s) == expected


def test_omega_numeric_constant_is_exact():
    assert np.max(S.omega_ratios(S.constant(0.1), 100_000)) <= 0.0 + 1e-9


@pytest.mark.parametrize("c", [1.0, 4.0])
def test_omega_numeric_alpha_one(c):
    # the ratio equals (n+1)/(c n) exactly: it decreases to omega from above,
    # so its supremum over n exceeds omega while its tail converges to it
    s = S.polynomial(c, 1.0)
    r = S.omega_ratios(s, 100_000)
    n = np.arange(1, r.size + 1)
    np.testing.assert_allclose(r, (n + 1) / (c * n), rtol=1e-9)
    assert np.all(np.diff(r) <= 1e-12)
    assert np.max(r[-1000:]) <= S.omega(s) * (1 + 1e-4) + 1e-9


def test_omega_numeric_alpha_below_one_eventually_decreasing():
    r = S.omega_ratios(S.polynomial(1.0, 0.5), 100_000)
    assert np.all(np.diff(r[10:]) < 0)
    assert r[-1] < 1e-2


def test_validate_examples():
    first = S.validate(S.polynomial(4.0, 1.0), m=1.0, upper=0.5)
    assert [v.code for v in first] == ["first_step"]
    assert S.validate(S.constant(0.1), m=1.0, upper=0.5) == []
    both = S.validate(S.polynomial(1.0, 1.0), m=1.0, upper=2.0)
    assert [v.code for v in both] == ["omega"]


@pytest.mark.parametrize("c, alpha, upper, expected", [
    (4.0, 1.0, 0.5, 7),
    (0.4, 1.0, 0.5, 0),
    (1.0, 0.5, 0.25, 15),
])
def test_admissible_offset(c, alpha, upper, expected):
    n0 = S.admissible_offset(c, alpha, upper)
    assert n0 == expected
    assert c * (1 + n0) ** -alpha <= upper
    if n0 > 0:
        assert c * n0 ** -alpha > upper


def test_offset_preserves_omega_and_passes_validation():
    s = S.with_admissible_offset(S.polynomial(4.0, 1.0), 0.5)
    assert s.offset == 7
    assert S.omega(s) == 0.25
    assert S.validate(s, 1.0, 0.5) == []


@pytest.mark.parametrize("kwargs", [
    dict(kind="Constant", eta=0.0),
    dict(kind="Polynomial", c=1.0, alpha=1.5),
    dict(kind="Polynomial", c=1.0, alpha=0.0),
    dict(kind="Polynomial", c=-1.0, alpha=0.5),
    dict(kind="Geometric"),
])
def test_invalid_schedules(kwargs):
    with pytest.raises(ValueError):
        S.StepSchedule(**kwargs)


@pytest.mark.parametrize("s", SCHEDULES, ids=repr)
def test_dict_round_trip(s):
    assert S.from_dict(s.to_dict()) == s


@given(c=st.floats(0.01, 100), alpha=st.floats(0.05, 1.0), n=st.integers(1, 10_000))
def test_polynomial_formula(c, alpha, n):
    assert S.gamma(S.polynomial(c, alpha), n) == pytest.approx(c * n**-alpha, rel=1e-12)


@given(c=st.floats(0.01, 100), alpha=st.floats(0.05, 1.0), upper=st.floats(1e-3, 10))
def test_admissible_offset_is_minimal(c, alpha, upper):
    if (c / upper) ** (1.0 / alpha) > 2.0**52:
        with pytest.raises(ValueError):
            S.admissible_offset(c, alpha, upper)
        return
    n0 = S.admissible_offset(c, alpha, upper)
    assert c * float(1 + n0) ** -alpha <= upper
    assert n0 == 0 or c * float(n0) ** -alpha > upper
    assert math.isfinite(S.gamma(S.polynomial(c, alpha, n0), 1))

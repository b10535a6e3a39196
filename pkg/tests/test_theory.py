import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from prlmc_lab import schedule as S
from prlmc_lab import theory as T


def cubic_root(m, L, K):
    """Positive real root of 4(2-1/K)L^4 e^3 + (1+3L^2) e - m via numpy.roots."""
    roots = np.roots([4.0 * (2.0 - 1.0 / K) * L**4, 0.0, 1.0 + 3.0 * L**2, -m])
    real = [r.real for r in roots if abs(r.imag) < 1e-12 and r.real > 0]
    assert len(real) == 1
    return min(real[0], 1.0)


@pytest.mark.parametrize("m, L, expected", [(1.0, 1.0, 1.0), (1.0, 3.0, 1.5), (0.5, 2.0, 0.8)])
def test_kappa(m, L, expected):
    assert T.kappa(m, L) == pytest.approx(expected)
    assert m <= T.kappa(m, L) < 2 * m


@pytest.mark.parametrize("m, L", [(0.0, 1.0), (2.0, 1.0), (-1.0, -1.0)])
def test_kappa_rejects_bad_constants(m, L):
    with pytest.raises(ValueError):
        T.kappa(m, L)


def test_lyapunov_constants_example():
    lam, b, radius = T.lyapunov_constants(1.0, 1.0, 2, 1, 0.1)
    # 1 - 0.1 + 4 * 0.01 + 4 * 1.5 * 1e-4
    assert lam == pytest.approx(0.9406, abs=1e-12)
    # 3.5 * 0.1 + 4 * 1.5 * 1e-3 + 4 * 1.5 * 1e-4
    assert b == pytest.approx(0.3566, abs=1e-12)
    assert radius == pytest.approx(math.sqrt(3.566), rel=1e-12)
    assert radius == pytest.approx(1.8884, abs=1e-4)


@pytest.mark.parametrize("m, L, K", [(1, 1, 2), (1, 1, 1), (1, 1, 10**6), (0.5, 2, 4), (2, 2, 16),
                                     (0.01, 0.02, 3)])
def test_eta0_matches_polynomial_root(m, L, K):
    eta0 = T.find_eta0(m, L, K)
    assert eta0 == pytest.approx(cubic_root(m, L, K), rel=1e-12)
    lam, _, _ = T.lyapunov_constants(m, L, K, 1, eta0 * (1 - 1e-9))
    assert lam < 1.0


def test_eta0_example_value():
    assert T.find_eta0(1.0, 1.0, 2) == pytest.approx(0.2314114404848571, rel=1e-12)


@given(m=st.floats(0.05, 5.0), ratio=st.floats(1.0, 20.0), K=st.integers(1, 64))
def test_eta0_decreases_in_K(m, ratio, K):
    L = m * ratio
    assert T.find_eta0(m, L, K + 1) <= T.find_eta0(m, L, K) + 1e-15


def test_stationary_moment_bound_example():
    # (d/m)(2 + 4 * 0.01 * 1.5 + 0.5)
    assert T.stationary_moment_bound(1.0, 1.0, 2, 1, 0.1) == pytest.approx(2.56, rel=1e-14)


def test_sqrt_bound_example():
    first = math.sqrt(2.0 + 0.04 + 0.08)
    second = math.sqrt(3.0) * math.sqrt(0.1 * 2.56 / 3.0 + 1.0)
    expected = math.sqrt(0.1) * (first + second)
    got = T.w2_bias_bound_sqrt(1.0, 1.0, 2, 1, 0.1, 2.56)
    assert got == pytest.approx(expected, rel=1e-14)
    assert got == pytest.approx(1.0310482820363378, rel=1e-12)


def test_sharp_bound_example():
    # braces: 8 + 0.01/6 + 0.2 ; 0 ; 2.56 * (0.6 + 3) ; 0.1 + 3
    braces = Fraction(8) + Fraction(1, 600) + Fraction(2, 10) + Fraction(256, 100) * Fraction(36, 10) \
        + Fraction(31, 10)
    expected = float(2 * Fraction(1, 100) * braces)
    assert T.w2_bias_bound_sharp(1.0, 1.0, 0.0, 2, 1, 0.1) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.41035333, abs=1e-8)


@pytest.mark.parametrize("eta", [0.01, 0.05, 0.1])
def test_sharp_bound_is_order_eta_squared_at_small_eta(eta):
    ratio = T.w2_bias_bound_sharp(1.0, 1.0, 0.0, 2, 1, eta / 2) / T.w2_bias_bound_sharp(
        1.0, 1.0, 0.0, 2, 1, eta)
    assert 0.2 < ratio <= 0.26


def test_theory_bounds_bundle():
    tb = T.theory_bounds(1.0, 1.0, 0.0, 2, 1, 0.1)
    assert tb.kappa == 1.0
    assert tb.stationary and tb.sqrt_bound_applicable and tb.sharp_bound_applicable
    assert tb.w2_sharp_bound == pytest.approx(math.sqrt(tb.w2_sharp_bound_sq))
    late = T.theory_bounds(1.0, 1.0, 0.0, 2, 1, 0.3)
    assert not late.stationary
    assert not late.sharp_bound_applicable
    assert set(tb.to_dict()) >= {"lambda_eta", "b_eta", "d_eta_radius", "eta0"}


def test_decay_trajectory_matches_explicit_sum():
    sched = S.polynomial(4.0, 1.0, offset=7)
    args = (1.0, 1.0, 0.3, 2, 2, 3.0)
    n = 40
    u1, u2 = T.wasserstein_decay_trajectory(sched, *args, n)
    g = S.gammas(sched, n)
    k = T.kappa(1.0, 1.0)
    f = 1 - k * g / 2
    terms = g**3 * T.decay_step_term(g, 1.0, 1.0, 0.3, 2, 2, 3.0)
    for j in [1, 5, 40]:
        explicit = sum(terms[i] * np.prod(f[i + 1:j]) for i in range(j))
        assert u2[j] == pytest.approx(explicit, rel=1e-12)
        assert u1[j] == pytest.approx(2 * np.prod(f[:j]), rel=1e-12)
    assert (u1[0], u2[0]) == (2.0, 0.0)
    assert T.wasserstein_decay_bound(sched, 1.0, 1.0, 0.3, 2, 2, 4.0, 3.0, 5) == (
        pytest.approx(u1[5]), pytest.approx(u2[5]))


def test_decay_log_space_branch_is_consistent():
    sched = S.polynomial(4.0, 1.0, offset=7)
    n = T.LOG_SPACE_THRESHOLD + 10
    u1, _ = T.wasserstein_decay_trajectory(sched, 1.0, 1.0, 0.0, 2, 1, 1.0, n)
    g = S.gammas(sched, n)
    direct = 2 * np.cumprod(1 - g / 2)
    np.testing.assert_allclose(u1[1:], direct, rtol=1e-9)


def test_decay_rejects_nonpositive_factor():
    with pytest.raises(ValueError, match="contraction"):
        T.wasserstein_decay_trajectory(S.polynomial(4.0, 1.0), 1.0, 1.0, 0.0, 2, 1, 1.0, 5)


def test_decay_bound_is_order_gamma_for_alpha_one():
    sched = S.polynomial(4.0, 1.0, offset=7)
    u1, u2 = T.wasserstein_decay_trajectory(sched, 1.0, 1.0, 0.0, 2, 1, 1.0, 20_000)
    g = S.gammas(sched, 20_000)
    ratio = np.sqrt(u2[1:]) / g
    # bounded ratio: the tail stays within a constant band
    assert ratio[-1] < 2 * ratio[len(ratio) // 2]


def test_coupling_rhs_example():
    # at x = y = 0, l_tilde = 0: remainder is gamma^3 L^2 d (10 - 4/K + L^2 g^2/6 + L^2 g / (4 eps))
    g, eps = 0.1, 1.0 / 8.0
    rhs = T.coupling_one_step_rhs(1.0, 0.0, 0.0, g, 1.0, 1.0, 0.0, 2, 1)
    expected = (1 - g * (1 - 4 * eps)) + g**3 * (8 + g * g / 6 + g / (4 * eps))
    assert rhs == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("K", [1, 2, 4, 10, 100])
def test_midpoint_pmf_sums_to_one_and_has_mean_one(K):
    pmf = [T.poisson_midpoint_pmf(K, n) for n in range(K + 1)]
    assert math.fsum(pmf) == pytest.approx(1.0, abs=1e-13)
    assert math.fsum(n * p for n, p in enumerate(pmf)) == pytest.approx(1.0, abs=1e-12)


def test_midpoint_pmf_rejects_out_of_range():
    with pytest.raises(ValueError):
        T.poisson_midpoint_pmf(4, 5)


@pytest.mark.parametrize("K", [1, 2, 4, 10, 100, 1000])
def test_binomial_poisson_tv_against_scipy(K):
    n = np.arange(0, 200)
    oracle = 0.5 * np.abs(stats.binom.pmf(n, K, 1.0 / K) - stats.poisson.pmf(n, 1.0)).sum()
    assert T.binomial_poisson_tv(K) == pytest.approx(oracle, abs=1e-12)


def test_binomial_poisson_tv_shrinks_with_K():
    values = [T.binomial_poisson_tv(K) for K in [1, 2, 4, 10, 100, 1000]]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert T.binomial_poisson_tv(1) == pytest.approx(1 - math.exp(-1), rel=1e-12)
    assert T.binomial_poisson_tv(100) < 0.01


def test_langevin_moment_bound():
    assert T.langevin_moment_bound(4.0, 1.0, 1, 0.0) == 4.0
    assert T.langevin_moment_bound(4.0, 2.0, 3, 1e6) == pytest.approx(1.5)
    t = 0.7
    assert T.langevin_moment_bound(4.0, 1.0, 1, t) == pytest.approx(
        4 * math.exp(-1.4) + 1 - math.exp(-1.4))

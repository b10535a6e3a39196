"""Closed-form constants and bounds for Poisson randomized midpoint Langevin.

All functions take the structural constants directly: strong convexity ``m``,
gradient Lipschitz constant ``L``, third-derivative bound ``l_tilde``, the
number of candidate midpoints ``K`` and the dimension ``d``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import schedule as sched_mod

LOG_SPACE_THRESHOLD = 10_000


def _check_ml(m: float, L: float) -> None:
    if not (m > 0 and L > 0):
        raise ValueError("m and L must be positive")
    if m > L:
        raise ValueError(f"m = {m} exceeds L = {L}")


def kappa(m: float, L: float) -> float:
    """Contraction rate ``2 m L / (m + L)``, always in ``[m, 2m)``."""
    _check_ml(m, L)
    return 2.0 * m * L / (m + L)


def _k_factor(K: int) -> float:
    if K < 1:
        raise ValueError("K must be a positive integer")
    return 2.0 - 1.0 / K


def lyapunov_constants(m, L, K, d, eta):
    """Drift factor, offset and small-set radius for ``V(x) = 1 + |x|^2``.

    Returns:
        (lam, b, radius) with ``Q V <= lam V + b 1{|x| <= radius}``.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    c = _k_factor(K)
    lam = 1.0 - m * eta + (1.0 + 3.0 * L**2) * eta**2 + 4.0 * c * L**4 * eta**4
    b = (
        (m + 2.0 * d + L**2 * (1.0 - 1.0 / K)) * eta
        + 4.0 * d * L**2 * c * eta**3
        + 4.0 * c * eta**4
    )
    radius = math.sqrt(b / (m * eta))
    return lam, b, radius


def find_eta0(m, L, K) -> float:
    """Largest admissible constant step.

    Both the drift condition ``lambda(eta) < 1`` and the moment contraction
    ``1 - 2 m eta + (1+3L^2) eta^2 + 4(2-1/K) L^4 eta^4 <= 1 - m eta`` reduce,
    after dividing by ``eta``, to the increasing polynomial inequality
    ``(1+3L^2) eta + 4(2-1/K) L^4 eta^3 <= m``. Its root, capped at 1, is
    returned.
    """
    _check_ml(m, L)
    c = _k_factor(K)

    def excess(eta):
        return (1.0 + 3.0 * L**2) * eta + 4.0 * c * L**4 * eta**3 - m

    if excess(1.0) <= 0:
        return 1.0
    return brentq(excess, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def stationary_moment_bound(m, L, K, d, eta) -> float:
    """Upper bound on the stationary second moment of the constant-step chain."""
    c = _k_factor(K)
    return (d / m) * (2.0 + 4.0 * eta**2 * L**2 * c + L**2 * (1.0 - 1.0 / K))


def w2_bias_bound_sqrt(m, L, K, d, eta, pi_eta_m2) -> float:
    """Order-sqrt(eta) Wasserstein bias bound, given a stationary second moment."""
    _k_factor(K)
    first = math.sqrt(2.0 * d + 4.0 * eta**2 * L * d + 8.0 * L**2 * eta**2 * d)
    second = math.sqrt(4.0 - 2.0 / K) * math.sqrt(eta * L**2 * pi_eta_m2 / 3.0 + d)
    return (L / m) * math.sqrt(eta) * (first + second)


def w2_bias_bound_sharp(m, L, l_tilde, K, d, eta) -> float:
    """Order-eta bound on the squared Wasserstein bias (returns W2^2)."""
    kinv = 1.0 / kappa(m, L)
    moment_factor = 2.0 + 4.0 * eta**2 * L**2 * _k_factor(K) + L**2 * (1.0 - 1.0 / K)
    braces = (
        L**2 * (10.0 - 4.0 / K + L**2 * eta**2 / 6.0 + 2.0 * kinv * L**2 * eta)
        + 6.0 * kinv * d * l_tilde**2
        + (moment_factor / m) * L**4 * ((8.0 - 4.0 / K) * eta + 3.0 * kinv)
        + L**4 * (eta + 3.0 * kinv) / m
    )
    return 2.0 * kinv * d * eta**2 * braces


def decay_step_term(gamma, m, L, l_tilde, K, d, c_moment):
    """The braces of the per-step remainder in the decreasing-step bound."""
    kinv = 1.0 / kappa(m, L)
    gamma = np.asarray(gamma, dtype=float)
    return (
        L**2 * d * (10.0 - 4.0 / K + L**2 * gamma**2 / 6.0 + 2.0 * kinv * L**2 * gamma)
        + 6.0 * kinv * d**2 * l_tilde**2
        + c_moment * L**4 * ((8.0 - 4.0 / K) * gamma + 3.0 * kinv)
        + d * L**4 * (gamma + 3.0 * kinv) / m
    )


def wasserstein_decay_trajectory(sched, m, L, l_tilde, K, d, c_moment, n_max):
    """Arrays ``u1[n], u2[n]`` for n = 0..n_max (``u1[0] = 2``, ``u2[0] = 0``).

    The second term uses the recursion ``u2_n = f_n u2_{n-1} + gamma_n^3 T_n``
    with ``f_n = 1 - kappa gamma_n / 2``, which equals the defining sum.

    Raises:
        ValueError: if some factor ``1 - kappa gamma_n / 2`` is not positive.
    """
    k = kappa(m, L)
    _k_factor(K)
    g = sched_mod.gammas(sched, n_max)
    factors = 1.0 - k * g / 2.0
    if np.any(factors <= 0):
        bad = int(np.argmax(factors <= 0)) + 1
        raise ValueError(f"contraction factor not positive at step {bad}; schedule too aggressive")
    if n_max > LOG_SPACE_THRESHOLD:
        prods = np.exp(np.cumsum(np.log(factors)))
    else:
        prods = np.cumprod(factors)
    u1 = np.concatenate(([2.0], 2.0 * prods))
    increments = g**3 * decay_step_term(g, m, L, l_tilde, K, d, c_moment)
    u2 = np.empty(n_max + 1)
    u2[0] = 0.0
    acc = 0.0
    for i in range(n_max):
        acc = factors[i] * acc + increments[i]
        u2[i + 1] = acc
    return u1, u2


def wasserstein_decay_bound(sched, m, L, l_tilde, K, d, x0_norm2, c_moment, n):
    """``(u1, u2)`` at step n; the caller forms ``u1 (|x|^2 + d/m) + u2``.

    ``c_moment`` stands in for the unspecified moment constant and should be
    an upper estimate of ``sup_k E|Y_k|^2``. ``x0_norm2`` is accepted for
    symmetry with the bound's final form and is not used in ``u1`` or ``u2``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    u1, u2 = wasserstein_decay_trajectory(sched, m, L, l_tilde, K, d, c_moment, n)
    return float(u1[n]), float(u2[n])


def coupling_one_step_rhs(diff_norm2, x_norm2, y_norm2, gamma, m, L, l_tilde, K, d, eps=None):
    """Right-hand side of the one-step synchronous-coupling inequality.

    Bounds ``E[|X' - Y'|^2 | X, Y]`` given ``|X-Y|^2``, ``|X|^2`` and
    ``|Y|^2``; ``eps`` defaults to ``kappa / 8``.
    """
    k = kappa(m, L)
    if eps is None:
        eps = k / 8.0
    remainder = gamma**3 * (
        L**4 * (gamma + 1.0 / (3.0 * eps)) * x_norm2
        + L**4 * ((8.0 - 4.0 / K) * gamma + 1.0 / (3.0 * eps)) * y_norm2
        + L**2 * d * (10.0 - 4.0 / K + L**2 * gamma**2 / 6.0 + L**2 * gamma / (4.0 * eps))
        + 2.0 * d**2 * l_tilde**2 / (3.0 * eps)
    )
    return (1.0 - gamma * (k - 4.0 * eps)) * diff_norm2 + remainder


def poisson_midpoint_pmf(K: int, n: int) -> float:
    """Probability that exactly n of K Bernoulli(1/K) midpoints trigger."""
    if K < 1:
        raise ValueError("K must be a positive integer")
    if n < 0 or n > K:
        raise ValueError(f"count {n} outside 0..{K}")
    p = 1.0 / K
    return math.comb(K, n) * p**n * (1.0 - p) ** (K - n)


def poisson_pmf(n: int, rate: float = 1.0) -> float:
    return math.exp(-rate + n * math.log(rate) - math.lgamma(n + 1))


def binomial_poisson_tv(K: int, n_max: int = 50) -> float:
    """Total variation between Binomial(K, 1/K) and Poisson(1), summed over n <= n_max."""
    total = 0.0
    for n in range(n_max + 1):
        binom = poisson_midpoint_pmf(K, n) if n <= K else 0.0
        total += abs(binom - poisson_pmf(n))
    return 0.5 * total


def langevin_moment_bound(x_norm2, m, d, t) -> float:
    """``|x|^2 e^{-2mt} + (d/m)(1 - e^{-2mt})``; an equality for Ornstein-Uhlenbeck."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    decay = math.exp(-2.0 * m * t)
    return x_norm2 * decay + (d / m) * (-math.expm1(-2.0 * m * t))


@dataclass(frozen=True)
class TheoryBounds:
    """Every closed-form quantity for one constant-step configuration.

    Bounds whose step-size hypothesis fails are still evaluated; the
    ``*_applicable`` flags record whether the hypothesis holds.
    """

    m: float
    L: float
    l_tilde: float
    K: int
    d: int
    eta: float
    kappa: float
    lambda_eta: float
    b_eta: float
    d_eta_radius: float
    eta0: float
    moment_bound: float
    w2_sqrt_bound: float
    w2_sharp_bound_sq: float
    w2_sharp_bound: float
    stationary: bool
    sqrt_bound_applicable: bool
    sharp_bound_applicable: bool

    def to_dict(self) -> dict:
        return asdict(self)


def theory_bounds(m, L, l_tilde, K, d, eta, pi_eta_m2: Optional[float] = None) -> TheoryBounds:
    """Evaluate all constant-step quantities.

    ``pi_eta_m2`` feeds the sqrt-order bound; it defaults to the stationary
    moment bound.
    """
    lam, b, radius = lyapunov_constants(m, L, K, d, eta)
    eta0 = find_eta0(m, L, K)
    mb = stationary_moment_bound(m, L, K, d, eta)
    second = mb if pi_eta_m2 is None else pi_eta_m2
    sharp_sq = w2_bias_bound_sharp(m, L, l_tilde, K, d, eta)
    return TheoryBounds(
        m=float(m), L=float(L), l_tilde=float(l_tilde), K=int(K), d=int(d), eta=float(eta),
        kappa=kappa(m, L),
        lambda_eta=lam, b_eta=b, d_eta_radius=radius, eta0=eta0,
        moment_bound=mb,
        w2_sqrt_bound=w2_bias_bound_sqrt(m, L, K, d, eta, second),
        w2_sharp_bound_sq=sharp_sq,
        w2_sharp_bound=math.sqrt(sharp_sq),
        stationary=eta < eta0,
        sqrt_bound_applicable=eta < min(eta0, 2.0 / (m + L)),
        sharp_bound_applicable=eta < min(eta0, 1.0 / (m + L)),
    )

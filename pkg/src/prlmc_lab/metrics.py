"""Distance estimators, moment oracles and rate fitting.

Estimators work on :class:`SampleBatch` objects or plain arrays of shape
``(n, d)`` (a 1-D array is read as ``n`` scalar samples).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment

from . import schedule as sched_mod

MAX_ASSIGNMENT = 256


@dataclass(frozen=True)
class SampleBatch:
    """``n`` finite samples in R^d, stored as an ``(n, d)`` array."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError("a batch needs at least one sample of shape (n, d)")
        if not np.isfinite(arr).all():
            raise ValueError("batch contains non-finite entries")
        object.__setattr__(self, "samples", arr)

    @property
    def dimension(self) -> int:
        return self.samples.shape[1]

    @property
    def count(self) -> int:
        return self.samples.shape[0]


def _batch(a) -> SampleBatch:
    return a if isinstance(a, SampleBatch) else SampleBatch(a)


# ---------------------------------------------------------------------------
# Wasserstein distances
# ---------------------------------------------------------------------------

def w2_1d(a, b) -> float:
    """Empirical W2 between two equal-size 1-D batches via sorted matching."""
    a, b = _batch(a), _batch(b)
    if a.dimension != 1 or b.dimension != 1:
        raise ValueError("w2_1d needs one-dimensional batches")
    if a.count != b.count:
        raise ValueError("batches must have equal counts")
    diff = np.sort(a.samples[:, 0]) - np.sort(b.samples[:, 0])
    return math.sqrt(float(np.mean(diff * diff)))


def w2_to_quantiles(samples, ppf) -> float:
    """W2 between a 1-D sample and a continuous law given by its quantile function.

    The reference is the deterministic quantile grid ``ppf((i - 0.5) / n)``.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    ref = ppf((np.arange(1, n + 1) - 0.5) / n)
    return math.sqrt(float(np.mean((x - ref) ** 2)))


def w2_gaussian_isotropic(sigma1: float, sigma2: float, d: int) -> float:
    """W2 between N(0, sigma1^2 I) and N(0, sigma2^2 I) in dimension d."""
    if sigma1 <= 0 or sigma2 <= 0:
        raise ValueError("standard deviations must be positive")
    return math.sqrt(d) * abs(sigma1 - sigma2)


def w2_assignment(a, b) -> float:
    """Exact discrete W2 by minimum-cost perfect matching (n <= 256)."""
    a, b = _batch(a), _batch(b)
    if a.count != b.count:
        raise ValueError("batches must have equal counts")
    if a.dimension != b.dimension:
        raise ValueError("batches must have equal dimension")
    if a.count > MAX_ASSIGNMENT:
        raise ValueError(f"assignment limited to n <= {MAX_ASSIGNMENT}; use w2_1d or a closed form")
    diff = a.samples[:, None, :] - b.samples[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    rows, cols = linear_sum_assignment(cost)
    return math.sqrt(float(cost[rows, cols].mean()))


def bootstrap_w2_se(samples, ppf, chain_ids=None, n_boot: int = 100, seed: int = 0) -> float:
    """Standard error of :func:`w2_to_quantiles` by resampling independent chains.

    Samples sharing a chain id may be correlated; chains are resampled
    whole. Each replicate reuses the original sort order with multiplicity
    weights, so a replicate costs O(n) rather than a fresh sort.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    ids = np.arange(n) if chain_ids is None else np.asarray(chain_ids).ravel()
    order = np.argsort(x, kind="stable")
    x_sorted = x[order]
    ids_sorted = ids[order]
    n_chains = int(ids.max()) + 1
    rng = np.random.default_rng(seed)
    reps = np.empty(n_boot)
    ref = None
    for r in range(n_boot):
        counts = np.bincount(rng.integers(0, n_chains, size=n_chains), minlength=n_chains)
        resampled = np.repeat(x_sorted, counts[ids_sorted])
        m = resampled.size
        if ref is None or ref.size != m:
            # equal-size chains keep m fixed, so the grid is built once
            ref = ppf((np.arange(1, m + 1) - 0.5) / m)
        reps[r] = math.sqrt(float(np.mean((resampled - ref) ** 2)))
    return float(reps.std(ddof=1))


# ---------------------------------------------------------------------------
# Total variation
# ---------------------------------------------------------------------------

def histogram_probs(x, bins: int, range_: tuple) -> np.ndarray:
    """Cell probabilities with two extra overflow cells (below, above)."""
    lo, hi = range_
    x = np.asarray(x, dtype=float).ravel()
    inner, _ = np.histogram(x, bins=bins, range=(lo, hi))
    counts = np.concatenate(([np.count_nonzero(x < lo)], inner, [np.count_nonzero(x > hi)]))
    return counts / x.size


def tv_1d_histogram(a, b, bins: int = 100, range_: tuple = (-5.0, 5.0)) -> float:
    """Half the L1 distance between histogram cell frequencies.

    Mass outside ``range_`` goes into an underflow and an overflow cell, so
    batches with disjoint support outside the window still reach 1.
    """
    a, b = _batch(a), _batch(b)
    if a.dimension != 1 or b.dimension != 1:
        raise ValueError("tv_1d_histogram needs one-dimensional batches")
    if bins < 2:
        raise ValueError("need at least two bins")
    lo, hi = range_
    if not hi > lo:
        raise ValueError("empty histogram range")
    pa = histogram_probs(a.samples, bins, range_)
    pb = histogram_probs(b.samples, bins, range_)
    return 0.5 * float(np.abs(pa - pb).sum())


def tv_noise_floor(p_ref: np.ndarray, n_a: int, n_b: int) -> float:
    """Expected histogram TV between two samples of one law with cell probabilities p_ref.

    Uses ``E|N(0, s^2)| = s sqrt(2/pi)`` per cell with
    ``s^2 = p (1 - p) (1/n_a + 1/n_b)``.
    """
    p = np.asarray(p_ref, dtype=float)
    s = np.sqrt(p * (1.0 - p) * (1.0 / n_a + 1.0 / n_b))
    return 0.5 * float(np.sum(s)) * math.sqrt(2.0 / math.pi)


def tv_standard_error(pa: np.ndarray, pb: np.ndarray, n_a: int, n_b: int) -> float:
    """Delta-method standard error of the histogram TV estimate."""
    pa, pb = np.asarray(pa, float), np.asarray(pb, float)
    sign = np.sign(pa - pb)

    def var_linear(p, n):
        # Var(sum_j c_j phat_j) for multinomial frequencies
        mean = np.sum(sign * p)
        return (np.sum(sign**2 * p) - mean**2) / n

    return 0.5 * math.sqrt(max(var_linear(pa, n_a) + var_linear(pb, n_b), 0.0))


# ---------------------------------------------------------------------------
# Exact second-moment recursion for quadratic targets
# ---------------------------------------------------------------------------

@dataclass
class MomentRecursionState:
    """Exact step map ``E|X'|^2 = mean_sq_factor * E|X|^2 + offset``.

    For ``grad U(x) = theta x`` a PRLMC step reads ``X' = A X + noise`` with a
    random scalar ``A`` independent of ``X``; ``mean_factor`` is ``E[A]`` and
    ``mean_sq_factor`` is ``E[A^2]``.
    """

    theta: float
    eta: float
    K: int
    d: int
    second_moment: float
    mean_factor: float
    factor_variance: float
    mean_sq_factor: float
    offset: float
    trajectory: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def fixed_point(self) -> float:
        return self.offset / (1.0 - self.mean_sq_factor)

    def step(self) -> float:
        self.second_moment = self.mean_sq_factor * self.second_moment + self.offset
        return self.second_moment


def prlmc_moment_coefficients(theta: float, eta: float, K: int, d: int,
                              mode: str = "IndependentPerIndex"):
    """``(E[A], Var(A), E[A^2], v)`` for one PRLMC step on ``theta |x|^2 / 2``.

    With ``h = eta * theta`` the update is
    ``X' = (1 - h + (h^2/K) sum_i H_i i) X + sqrt(2 eta) xi
    - h sum_i H_i sqrt(2 i eta / K) zeta_i``,
    so the noise contributes ``2 eta d + h^2 (2 eta / K) d E[(sum_i H_i sqrt(i) zeta_i)^2]``.
    With independent ``zeta_i`` that expectation is ``sum_i i / K``; with one
    shared ``zeta`` it is ``E[(sum_i H_i sqrt(i))^2]``.
    """
    h = eta * theta
    idx = np.arange(K, dtype=float)
    p = 1.0 / K
    mean_a = 1.0 - h + h * h * (K - 1) / (2.0 * K)
    var_a = (h * h / K) ** 2 * p * (1.0 - p) * float(np.sum(idx**2))
    mean_sq = mean_a**2 + var_a
    if mode == "IndependentPerIndex":
        mixing = p * float(np.sum(idx))
    elif mode == "SharedDriver":
        root_sum = float(np.sum(np.sqrt(idx)))
        mixing = p * float(np.sum(idx)) + p * p * (root_sum**2 - float(np.sum(idx)))
    else:
        raise ValueError(f"unknown midpoint noise mode {mode!r}")
    offset = h * h * (2.0 * eta / K) * mixing * d + 2.0 * eta * d
    return mean_a, var_a, mean_sq, offset


def quadratic_prlmc_moment_oracle(theta, eta, K, d, x0_norm2, n_steps,
                                  mode: str = "IndependentPerIndex"):
    """Exact ``E|X_k|^2`` for k = 0..n_steps and the stationary fixed point.

    Per-coordinate anisotropic targets can call this once per eigen-direction
    with ``d = 1`` and sum the results.

    Raises:
        ValueError: if ``E[A^2] >= 1`` (the recursion does not contract).
    """
    mean_a, var_a, mean_sq, offset = prlmc_moment_coefficients(theta, eta, K, d, mode)
    if mean_sq >= 1.0:
        raise ValueError(f"E[A^2] = {mean_sq} >= 1: step size too large for a stationary moment")
    state = MomentRecursionState(theta, eta, K, d, float(x0_norm2), mean_a, var_a, mean_sq, offset)
    traj = np.empty(n_steps + 1)
    traj[0] = x0_norm2
    for k in range(n_steps):
        traj[k + 1] = state.step()
    state.trajectory = traj
    return traj, state.fixed_point


def quadratic_rlmc_moment_oracle(theta, eta, d, x0_norm2, n_steps):
    """Exact ``E|X_k|^2`` for the uniform-midpoint chain on ``theta |x|^2 / 2``."""
    h = eta * theta
    mean_sq = (1.0 - h) ** 2 + (1.0 - h) * h * h + h**4 / 3.0
    offset = eta * h * h * d + 2.0 * eta * d
    if mean_sq >= 1.0:
        raise ValueError("recursion does not contract")
    traj = np.empty(n_steps + 1)
    traj[0] = x0_norm2
    for k in range(n_steps):
        traj[k + 1] = mean_sq * traj[k] + offset
    return traj, offset / (1.0 - mean_sq)


def quadratic_schedule_moment_oracle(theta, sched, K, d, x0_norm2, n_steps,
                                     mode: str = "IndependentPerIndex"):
    """Exact ``E|Y_k|^2`` for k = 0..n_steps under a varying step schedule."""
    g = sched_mod.gammas(sched, n_steps)
    traj = np.empty(n_steps + 1)
    traj[0] = x0_norm2
    for k in range(n_steps):
        _, _, mean_sq, offset = prlmc_moment_coefficients(theta, float(g[k]), K, d, mode)
        traj[k + 1] = mean_sq * traj[k] + offset
    return traj


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float

    def __iter__(self):
        # unpacks as (slope, intercept, r2)
        return iter((self.slope, self.intercept, self.r2))


def fit_loglog_slope(xs, ys) -> SlopeFit:
    """Least-squares line through ``(log x, log y)``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size != ys.size or xs.size < 3:
        raise ValueError("need at least three paired points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit needs positive inputs")
    return fit_line(np.log(xs), np.log(ys))


def fit_line(xs, ys) -> SlopeFit:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    res = stats.linregress(xs, ys)
    r2 = float(res.rvalue**2) if np.isfinite(res.rvalue) else 1.0
    return SlopeFit(float(res.slope), float(res.intercept), r2, float(res.stderr))


# ---------------------------------------------------------------------------
# Batch I/O
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<QQ")


def write_batch(path, batch) -> None:
    """Flat binary: little-endian uint64 d, uint64 n, then n*d float64 row-major."""
    batch = _batch(batch)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(batch.dimension, batch.count))
        fh.write(np.ascontiguousarray(batch.samples, dtype="<f8").tobytes())


def read_batch(path) -> SampleBatch:
    raw = Path(path).read_bytes()
    d, n = _HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != d * n:
        raise ValueError(f"payload has {data.size} values, header says {d}*{n}")
    return SampleBatch(data.reshape(n, d).astype(float))


def write_batch_csv(path, batch) -> None:
    batch = _batch(batch)
    header = ",".join(f"x{j}" for j in range(batch.dimension))
    np.savetxt(path, batch.samples, delimiter=",", header=header, comments="", fmt="%.17g")


def read_batch_csv(path) -> SampleBatch:
    return SampleBatch(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))

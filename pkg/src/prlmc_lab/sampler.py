"""Langevin sampling kernels, the chain runner and exact diffusion oracles.

Kernels act on a batch of independent chains at once: positions have shape
``(n, d)``. A single chain may also be given as a ``(d,)`` vector. Every
kernel draws its randomness from a per-step draw source (see
:mod:`prlmc_lab.rng`), which makes trajectories reproducible per trial and
lets tests pin individual draws.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import potential as pot
from . import schedule as sched_mod
from . import theory
from .rng import RngPolicy, StreamDraws

ALGORITHMS = ("ULA", "RLMC", "PRLMC", "PRLMCDecreasing")
INDEPENDENT = "IndependentPerIndex"
SHARED = "SharedDriver"
MODES = (INDEPENDENT, SHARED)

# below this theta * gamma the OU conditional variance uses its Taylor series
_SERIES_CUTOFF = 0.05
CHUNK_BYTES = 1 << 19


class DivergenceError(RuntimeError):
    """A chain produced a non-finite coordinate."""

    def __init__(self, step: int, trial: int):
        super().__init__(f"non-finite position at step {step} in trial {trial}")
        self.step = step
        self.trial = trial


class NumericsError(ArithmeticError):
    """A covariance needed for exact sampling is numerically invalid."""


@dataclass(frozen=True)
class SamplerConfig:
    algorithm: str
    potential: pot.PotentialSpec
    schedule: sched_mod.StepSchedule
    initial: tuple
    K: int = 1
    midpoint_noise_mode: str = INDEPENDENT
    rng: RngPolicy = field(default_factory=lambda: RngPolicy(0))

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.midpoint_noise_mode not in MODES:
            raise ValueError(f"unknown midpoint noise mode {self.midpoint_noise_mode!r}")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("K must be a positive integer")
        init = tuple(float(v) for v in np.ravel(self.initial))
        object.__setattr__(self, "initial", init)
        if len(init) != self.potential.dimension:
            raise ValueError("initial state dimension does not match the potential")
        if self.algorithm != "PRLMCDecreasing" and not self.schedule.is_constant:
            raise ValueError(f"{self.algorithm} requires a constant step schedule")
        if self.algorithm == "PRLMC":
            eta0 = theory.find_eta0(self.potential.m, self.potential.L, self.K)
            if self.schedule.eta >= eta0:
                warnings.warn(
                    f"step {self.schedule.eta} is not below eta0 = {eta0:.6g};"
                    " stationarity is not guaranteed",
                    stacklevel=2,
                )


@dataclass
class ChainState:
    """Positions of one or more chains after ``step_index`` steps.

    ``grad_evals`` is the cumulative number of gradient evaluations per chain
    and ``triggered`` the number of Bernoulli midpoint flags raised at the
    most recent step (including the index-0 flag).
    """

    position: np.ndarray
    step_index: int = 0
    elapsed_time: float = 0.0
    grad_evals: np.ndarray | int = 0
    triggered: Optional[np.ndarray] = None


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _resolve_draws(rng, state: ChainState, n_rows: int):
    if isinstance(rng, RngPolicy):
        return rng.draws(0, n_rows, state.step_index)
    return rng


def _advance(state, new, single, eta, evals, triggered=None):
    return ChainState(
        position=new[0] if single else new,
        step_index=state.step_index + 1,
        elapsed_time=state.elapsed_time + eta,
        grad_evals=state.grad_evals + (evals[0] if single else evals),
        triggered=triggered if triggered is None or not single else triggered[0],
    )


# ---------------------------------------------------------------------------
# Position-level kernels
# ---------------------------------------------------------------------------

def _ula_positions(x, grad, eta, draws):
    g = grad(x)
    new = x - eta * g
    new += math.sqrt(2.0 * eta) * draws.normal("endpoint_gaussian", x.shape[1])
    return new


def _rlmc_positions(x, grad, eta, draws):
    d = x.shape[1]
    u = draws.uniform("midpoint_time", 1)
    mid = x - (u * eta) * grad(x) + np.sqrt(2.0 * u * eta) * draws.normal("midpoint_gaussian:1", d)
    new = x - eta * grad(mid)
    new += math.sqrt(2.0 * eta) * draws.normal("endpoint_gaussian", d)
    return new


def _prlmc_positions(x, grad, eta, K, mode, draws):
    """One PRLMC step on a batch; returns the new positions and the (n, K) flags."""
    n, d = x.shape
    g = grad(x)
    flags = draws.bernoulli("bernoulli", K, 1.0 / K)
    new = x - eta * g
    if K > 1:
        if mode == SHARED:
            any_rows = flags[:, 1:].any(axis=1)
            shared = np.zeros((n, d))
            if any_rows.any():
                shared[any_rows] = draws.normal("midpoint_gaussian:0", d, rows=any_rows)
        for i in range(1, K):
            rows = flags[:, i]
            if not rows.any():
                continue
            if mode == SHARED:
                zeta = shared[rows]
            else:
                zeta = draws.normal(f"midpoint_gaussian:{i}", d, rows=rows)
            frac = i * eta / K
            g_rows = g[rows]
            xhat = x[rows] - frac * g_rows + math.sqrt(2.0 * frac) * zeta
            new[rows] += eta * (g_rows - grad(xhat))
    new += math.sqrt(2.0 * eta) * draws.normal("endpoint_gaussian", d)
    return new, flags


def _flag_counts(flags):
    """Raised flags per row; column adds beat an axis-1 reduction for small K."""
    if flags.shape[1] > 16:
        return flags.sum(axis=1)
    out = flags[:, 0].astype(np.int64)
    for i in range(1, flags.shape[1]):
        out += flags[:, i]
    return out


# ---------------------------------------------------------------------------
# State-level kernels
# ---------------------------------------------------------------------------

def ula_step(state: ChainState, p: pot.PotentialSpec, eta: float, rng) -> ChainState:
    """Unadjusted Langevin step ``x - eta grad U(x) + sqrt(2 eta) xi``."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    x, single = _as_batch(state.position)
    draws = _resolve_draws(rng, state, x.shape[0])
    new = _ula_positions(x, p.gradient, eta, draws)
    return _advance(state, new, single, eta, np.ones(x.shape[0], dtype=np.int64))


def rlmc_step(state: ChainState, p: pot.PotentialSpec, eta: float, rng) -> ChainState:
    """Randomized midpoint step with a uniform midpoint time."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    x, single = _as_batch(state.position)
    draws = _resolve_draws(rng, state, x.shape[0])
    new = _rlmc_positions(x, p.gradient, eta, draws)
    return _advance(state, new, single, eta, np.full(x.shape[0], 2, dtype=np.int64))


def prlmc_step(state: ChainState, p: pot.PotentialSpec, eta: float, K: int,
               mode: str, rng) -> ChainState:
    """Poisson randomized midpoint step with K candidate midpoints.

    Each candidate ``i`` is switched on by an independent Bernoulli(1/K) flag.
    Candidate 0 coincides with the current point and contributes nothing, so
    only candidates ``i >= 1`` cost a gradient evaluation.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if K < 1:
        raise ValueError("K must be a positive integer")
    if mode not in MODES:
        raise ValueError(f"unknown midpoint noise mode {mode!r}")
    x, single = _as_batch(state.position)
    draws = _resolve_draws(rng, state, x.shape[0])
    new, flags = _prlmc_positions(x, p.gradient, eta, K, mode, draws)
    trig = _flag_counts(flags)
    evals = 1 + trig - flags[:, 0]
    return _advance(state, new, single, eta, evals, trig)


# ---------------------------------------------------------------------------
# Chain runner
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    """Checkpointed statistics of a batch of chains.

    Attributes:
        checkpoints: step indices at which snapshots were taken.
        times: elapsed time ``t_n`` at each checkpoint.
        positions: array ``(n_checkpoints, trials, d)``; rows of diverged
            chains are NaN from the divergence step on.
        norm2: ``|position|^2`` per checkpoint and trial.
        grad_evals: total gradient evaluations over all trials up to each checkpoint.
        diverged_at: first non-finite step per trial, -1 if none.
        triggered_hist: counts of steps by number of raised midpoint flags.
    """

    checkpoints: list
    times: np.ndarray
    positions: np.ndarray
    norm2: np.ndarray
    grad_evals: np.ndarray
    diverged_at: np.ndarray
    triggered_hist: np.ndarray
    trial_start: int = 0

    @property
    def trials(self) -> int:
        return self.positions.shape[1]

    def grad_evals_per_step(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            steps = np.asarray(self.checkpoints, dtype=float) * self.trials
            return self.grad_evals / steps


def _step_sizes(config: SamplerConfig, n_steps: int) -> np.ndarray:
    return sched_mod.gammas(config.schedule, n_steps)


def _run_rows(config: SamplerConfig, row_start: int, n_rows: int, n_steps: int,
              checkpoints: list, steps: np.ndarray, initial, on_divergence: str,
              counted_from: int = 0, track_midpoints: bool = True):
    # rows below counted_from only align the random streams and are not reported
    d = config.potential.dimension
    grad = config.potential.gradient
    x = np.array(np.broadcast_to(initial, (n_rows, d)), dtype=float)
    alive = np.ones(n_rows, dtype=bool)
    counted = np.arange(n_rows) >= counted_from
    diverged_at = np.full(n_rows, -1, dtype=np.int64)
    evals_total = 0
    hist = np.zeros(config.K + 1, dtype=np.int64)
    snaps = np.empty((len(checkpoints), n_rows, d))
    evals_at = np.zeros(len(checkpoints), dtype=np.int64)
    next_cp = 0

    def record(step):
        nonlocal next_cp
        while next_cp < len(checkpoints) and checkpoints[next_cp] == step:
            snap = snaps[next_cp]
            snap[...] = x
            snap[~alive] = np.nan
            evals_at[next_cp] = evals_total
            next_cp += 1

    record(0)
    algo = config.algorithm
    all_live = counted_from == 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            if next_cp >= len(checkpoints):
                break
            x, flags = _one_step(config, algo, grad, x, float(steps[k]),
                                 StreamDraws(config.rng, row_start, n_rows, k))
            if all_live:
                live_flags = flags
                evals_total += n_rows
            else:
                live = alive & counted
                live_flags = None if flags is None else flags[live]
                evals_total += int(live.sum())
            if algo == "RLMC":
                evals_total += n_rows if all_live else int(live.sum())
            elif live_flags is not None:
                evals_total += int(np.count_nonzero(live_flags[:, 1:]))
                if track_midpoints:
                    hist += np.bincount(_flag_counts(live_flags), minlength=config.K + 1)
            bad = alive & ~np.isfinite(x).all(axis=1)
            if bad.any():
                if on_divergence == "raise" and (bad & counted).any():
                    raise DivergenceError(k + 1, row_start + int(np.argmax(bad & counted)))
                diverged_at[bad] = k + 1
                alive &= ~bad
                all_live = False
            if not alive.all():
                x[~alive] = 0.0
            record(k + 1)
    return snaps, evals_at, diverged_at, hist


def _one_step(config, algo, grad, x, eta, draws):
    if algo == "ULA":
        return _ula_positions(x, grad, eta, draws), None
    if algo == "RLMC":
        return _rlmc_positions(x, grad, eta, draws), None
    return _prlmc_positions(x, grad, eta, config.K, config.midpoint_noise_mode, draws)


def run_chain(config: SamplerConfig, n_steps: int, checkpoints=None, trials: int = 1,
              trial_start: int = 0, on_divergence: str = "raise", threads: int = 1,
              initial=None, track_midpoints: bool = True) -> RunResult:
    """Run ``trials`` independent chains for ``n_steps`` steps.

    Trial ``j`` uses the random streams of trial id ``trial_start + j``, so
    results do not depend on batching or on ``threads``.

    Args:
        checkpoints: sorted step indices to record; defaults to ``[n_steps]``.
        on_divergence: ``"raise"`` aborts with :class:`DivergenceError`;
            ``"record"`` marks the chain in ``diverged_at`` and continues.
        initial: optional ``(trials, d)`` starting points overriding
            ``config.initial``.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    checkpoints = [n_steps] if checkpoints is None else [int(c) for c in checkpoints]
    if checkpoints != sorted(checkpoints):
        raise ValueError("checkpoints must be sorted")
    if checkpoints and (checkpoints[0] < 0 or checkpoints[-1] > n_steps):
        raise ValueError("checkpoints must lie in [0, n_steps]")
    if on_divergence not in ("raise", "record"):
        raise ValueError("on_divergence must be 'raise' or 'record'")
    d = config.potential.dimension
    block = config.rng.block_size
    base = (trial_start // block) * block
    skip = trial_start - base
    total = skip + trials
    init = np.asarray(config.initial, dtype=float)
    if initial is not None:
        initial = np.asarray(initial, dtype=float)
        if initial.shape != (trials, d):
            raise ValueError(f"initial must have shape {(trials, d)}")
        init = np.concatenate([np.broadcast_to(init, (skip, d)), initial])
    steps = _step_sizes(config, n_steps)

    # block-aligned chunks keep the working set in cache and start each
    # chunk at a stream block boundary
    per_chunk = block * max(1, CHUNK_BYTES // (block * d * 8))
    chunks = [(base + s, min(per_chunk, total - s)) for s in range(0, total, per_chunk)]

    def work(chunk):
        start, rows = chunk
        lo = start - base
        init_rows = init if init.ndim == 1 else init[lo:lo + rows]
        return _run_rows(config, start, rows, n_steps, checkpoints, steps, init_rows,
                         on_divergence, counted_from=max(0, skip - lo),
                         track_midpoints=track_midpoints)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]

    snaps = np.concatenate([p[0] for p in parts], axis=1)[:, skip:]
    diverged = np.concatenate([p[2] for p in parts])[skip:]
    evals = sum(p[1] for p in parts)
    hist = sum(p[3] for p in parts)
    times = np.array([sched_mod.time(config.schedule, c) for c in checkpoints])
    norm2 = np.sum(snaps**2, axis=2)
    return RunResult(
        checkpoints=checkpoints, times=times, positions=snaps, norm2=norm2,
        grad_evals=np.asarray(evals, dtype=np.int64), diverged_at=diverged,
        triggered_hist=np.asarray(hist, dtype=np.int64), trial_start=trial_start,
    )


# ---------------------------------------------------------------------------
# Exact Ornstein-Uhlenbeck transitions and synchronous coupling
# ---------------------------------------------------------------------------

def ou_exact_step(x, theta: float, t: float, rng) -> np.ndarray:
    """Exact Langevin transition for ``U = theta |x|^2 / 2`` over time t."""
    if theta <= 0 or t <= 0:
        raise ValueError("theta and t must be positive")
    x, single = _as_batch(x)
    draws = rng.draws(0, x.shape[0], 0) if isinstance(rng, RngPolicy) else rng
    scale = math.sqrt(-math.expm1(-2.0 * theta * t) / theta)
    out = math.exp(-theta * t) * x + scale * draws.normal("diffusion_gaussian", x.shape[1])
    return out[0] if single else out


def ou_conditional_moments(theta: float, gamma: float):
    """Joint law of ``S = int_0^g e^{-theta(g-s)} dB_s`` and ``B_g`` per coordinate.

    Returns:
        (regression, cond_var): ``E[S | B_g] = regression * B_g`` and
        ``Var(S | B_g) = cond_var``.
    """
    a = theta * gamma
    cov = -math.expm1(-a) / theta
    regression = cov / gamma
    if a < _SERIES_CUTOFF:
        # Taylor series of Var(S) - Cov^2 / gamma in a = theta * gamma;
        # the direct difference cancels catastrophically for small a
        series = (a**2 / 12.0 - a**3 / 12.0 + 17.0 * a**4 / 360.0 - 7.0 * a**5 / 360.0
                  + 43.0 * a**6 / 6720.0 - 107.0 * a**7 / 60480.0)
        cond_var = gamma * series
    else:
        var_s = -math.expm1(-2.0 * a) / (2.0 * theta)
        cond_var = var_s - cov * cov / gamma
    if not (cond_var >= -1e-15 * gamma) or not math.isfinite(cond_var):
        raise NumericsError(f"conditional variance {cond_var!r} is not valid")
    return regression, max(cond_var, 0.0)


def coupled_step_ou(x, y, theta: float, gamma: float, K: int, rng):
    """Advance an exact OU path and a PRLMC chain with shared endpoint noise.

    The Brownian increment over the step is ``sqrt(gamma) * xi`` with ``xi``
    the PRLMC endpoint Gaussian. The OU leg is sampled exactly conditional on
    that increment; the PRLMC leg drives its midpoints with one shared
    Gaussian independent of the increment.
    """
    if theta <= 0 or gamma <= 0:
        raise ValueError("theta and gamma must be positive")
    x, single = _as_batch(x)
    y, _ = _as_batch(y)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same shape")
    n, d = x.shape
    draws = rng.draws(0, n, 0) if isinstance(rng, RngPolicy) else rng
    regression, cond_var = ou_conditional_moments(theta, gamma)
    increment = math.sqrt(gamma) * draws.normal("endpoint_gaussian", d)
    s = regression * increment + math.sqrt(cond_var) * draws.normal("diffusion_gaussian", d)
    x_new = math.exp(-theta * gamma) * x + math.sqrt(2.0) * s
    grad = lambda z: theta * z  # noqa: E731
    y_new, _ = _prlmc_positions(y, grad, gamma, K, SHARED, draws)
    if single:
        return x_new[0], y_new[0]
    return x_new, y_new


def coupled_step_substepped(x, y, p: pot.PotentialSpec, gamma: float, K: int, rng,
                            substeps: int = 256):
    """Coupled step for a general potential; the diffusion leg is approximated.

    The diffusion is integrated by Euler steps of size ``gamma / substeps``
    along a Brownian path pinned to the PRLMC endpoint increment (a sequential
    Brownian bridge). This is an approximation, unlike :func:`coupled_step_ou`.
    """
    x, single = _as_batch(x)
    y, _ = _as_batch(y)
    n, d = x.shape
    draws = rng.draws(0, n, 0) if isinstance(rng, RngPolicy) else rng
    total = math.sqrt(gamma) * draws.normal("endpoint_gaussian", d)
    h = gamma / substeps
    path = np.zeros_like(x)
    cur = x.copy()
    for j in range(substeps):
        remaining = gamma - j * h
        mean = path + (h / remaining) * (total - path)
        var = h * (remaining - h) / remaining
        nxt = mean + math.sqrt(var) * draws.normal(f"diffusion_gaussian:{j}", d) if var > 0 else total
        cur = cur - h * p.gradient(cur) + math.sqrt(2.0) * (nxt - path)
        path = nxt
    y_new, _ = _prlmc_positions(y, p.gradient, gamma, K, SHARED, draws)
    if single:
        return cur[0], y_new[0]
    return cur, y_new


def with_seed(config: SamplerConfig, seed: int) -> SamplerConfig:
    return replace(config, rng=RngPolicy(seed, config.rng.block_size))

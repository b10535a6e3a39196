"""The verification experiments.

Each ``cmd_*`` function takes an :class:`ExperimentConfig` and returns a
:class:`Report` of tables and verdicts. Independent pieces of one experiment
(probe points, step sizes, reference batches) draw from disjoint ranges of
trial ids, so their random streams never overlap.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from scipy import stats

from .. import metrics
from .. import potential as pot
from .. import schedule as sched_mod
from .. import theory
from ..rng import RngPolicy, StreamDraws
from ..sampler import INDEPENDENT, SHARED, coupled_step_ou, run_chain
from .config import ConfigError, ExperimentConfig
from .report import FAIL, INCONCLUSIVE, PASS, Report, Verdict, one_sided, within

REF_MOMENT = "exact-second-moment-recursion"
REF_MOMENT_BOUND = "stationary-moment-bound"
REF_SQRT = "w2-bias-sqrt-order"
REF_SHARP = "w2-bias-sharp"
REF_DRIFT = "lyapunov-drift"
REF_COUPLING = "coupling-one-step"
REF_DECAY = "w2-decay-bound"
REF_DECREASING = "decreasing-step-order"
REF_STRONG = "one-step-strong-order"
REF_MIDPOINT = "midpoint-count-law"
REF_TV = "tv-geometric-decay"
REF_OU = "langevin-moment-identity"


class TrialRanges:
    """Hands out block-aligned, non-overlapping ranges of trial ids."""

    def __init__(self, block_size: int):
        self.block = block_size
        self.next = 0

    def take(self, n: int) -> int:
        start = self.next
        self.next += -(-n // self.block) * self.block
        return start


def _new_report(cfg: ExperimentConfig) -> Report:
    return Report(experiment=cfg.experiment, config=cfg.to_dict())


def _constants(p: pot.PotentialSpec):
    return p.m, p.L, p.l_tilde, p.dimension


def _require_constant(cfg: ExperimentConfig) -> float:
    if not cfg.sampler.schedule.is_constant:
        raise ConfigError(f"{cfg.experiment} needs a constant step schedule")
    return cfg.sampler.schedule.eta


def _require_isotropic(cfg: ExperimentConfig) -> float:
    p = cfg.sampler.potential
    if p.kind != pot.ISOTROPIC:
        raise ConfigError(f"{cfg.experiment} needs an IsotropicQuadratic potential")
    return p.theta


def _mean_se(values) -> tuple:
    values = np.asarray(values, dtype=float)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def _theory_dict(cfg: ExperimentConfig, eta: float, pi_eta_m2=None) -> dict:
    m, L, lt, d = _constants(cfg.sampler.potential)
    return theory.theory_bounds(m, L, lt, cfg.sampler.K, d, eta, pi_eta_m2).to_dict()


def moment_oracle(sc, n_steps: int):
    """Exact ``E|X_k|^2`` trajectory for a configuration, or None if unavailable."""
    p = sc.potential
    if not p.is_quadratic:
        return None
    x0 = np.asarray(sc.initial, dtype=float)
    thetas = p.curvatures()
    total = np.zeros(n_steps + 1)
    for j, theta in enumerate(thetas):
        x2 = float(x0[j] ** 2)
        if sc.algorithm == "RLMC":
            traj, _ = metrics.quadratic_rlmc_moment_oracle(theta, sc.schedule.eta, 1, x2, n_steps)
        elif sc.algorithm == "ULA":
            traj, _ = metrics.quadratic_prlmc_moment_oracle(theta, sc.schedule.eta, 1, 1, x2, n_steps)
        else:
            traj = metrics.quadratic_schedule_moment_oracle(
                theta, sc.schedule, sc.K, 1, x2, n_steps, sc.midpoint_noise_mode)
        total += traj
    return total


def _reference_quantiles(p: pot.PotentialSpec, coord: int):
    return lambda q: pot.marginal_ppf(p, coord, q)


def _reference_floor(p, policy, ranges, n_samples, replicates, seed_step=0):
    """W2 between exact target samples and the quantile grid, over replicates.

    Returns per-replicate W2 values, combined over coordinates.
    """
    d = p.dimension
    start = ranges.take(n_samples)
    values = []
    for r in range(replicates):
        draws = StreamDraws(policy, start, n_samples, seed_step + r)
        u = draws.uniform("reference", d)
        total = 0.0
        for j in range(d):
            sample = pot.marginal_ppf(p, j, u[:, j])
            total += metrics.w2_to_quantiles(sample, _reference_quantiles(p, j)) ** 2
        values.append(math.sqrt(total))
    return np.asarray(values)


def _w2_per_coordinate(p, samples, chain_ids, n_boot, seed):
    """Combined W2 estimate ``sqrt(sum_j W2_j^2)`` and its bootstrap SE."""
    total, var_total = 0.0, 0.0
    for j in range(p.dimension):
        ppf = _reference_quantiles(p, j)
        w = metrics.w2_to_quantiles(samples[:, j], ppf)
        se = metrics.bootstrap_w2_se(samples[:, j], ppf, chain_ids, n_boot=n_boot, seed=seed + j)
        total += w * w
        var_total += (2.0 * w * se) ** 2
    w2 = math.sqrt(total)
    se = math.sqrt(var_total) / (2.0 * w2) if w2 > 0 else 0.0
    return w2, se


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(cfg: ExperimentConfig, threads: int = 1) -> Report:
    rep = _new_report(cfg)
    sc = cfg.sampler_config()
    checkpoints = list(cfg.checkpoints) or [cfg.steps]
    res = run_chain(sc, cfg.steps, checkpoints, trials=cfg.trials, on_divergence="record",
                    threads=threads)
    oracle = moment_oracle(sc, cfg.steps)
    if sc.schedule.is_constant:
        rep.theory = _theory_dict(cfg, sc.schedule.eta)
    n_div = int(np.count_nonzero(res.diverged_at >= 0))
    for i, step in enumerate(res.checkpoints):
        finite = res.norm2[i][np.isfinite(res.norm2[i])]
        mean2, se2 = _mean_se(finite) if finite.size > 1 else (
            float(finite.mean()) if finite.size else float("nan"), 0.0)
        row = {
            "step": step,
            "time": res.times[i],
            "mean_norm2": mean2,
            "se_norm2": se2,
            "mean_coord0": float(np.nanmean(res.positions[i][:, 0])) if finite.size else None,
            "grad_evals_per_step": res.grad_evals[i] / (step * res.trials) if step else None,
            "diverged": int(np.count_nonzero((res.diverged_at >= 0) & (res.diverged_at <= step))),
        }
        if oracle is not None:
            row["oracle_norm2"] = oracle[step]
            if step > 0 and finite.size > 1 and n_div == 0:
                rep.add(within(f"second-moment@{step}", mean2, se2, oracle[step], REF_MOMENT))
        rep.add_row("checkpoints", row)
        rep.batches[f"positions_step{step}"] = np.nan_to_num(res.positions[i], nan=0.0) \
            if n_div else res.positions[i]
    rep.add(Verdict("finite-trajectories", PASS if n_div == 0 else FAIL,
                    estimate=float(n_div), bound=0.0,
                    detail=f"{n_div} of {res.trials} chains diverged"))
    if res.checkpoints and res.checkpoints[-1] > 0:
        rep.summary["grad_evals_per_step"] = float(res.grad_evals[-1] / (res.checkpoints[-1] * res.trials))
    if n_div:
        first = res.diverged_at[res.diverged_at >= 0]
        rep.summary["first_divergence_step"] = int(first.min())
    return rep


# ---------------------------------------------------------------------------
# bias-sweep
# ---------------------------------------------------------------------------

def cmd_bias_sweep(cfg: ExperimentConfig, threads: int = 1) -> Report:
    rep = _new_report(cfg)
    p = cfg.sampler.potential
    m, L, lt, d = _constants(p)
    K = cfg.sampler.K
    if len(cfg.eta_grid) < 4:
        raise ConfigError("bias-sweep needs at least 4 step sizes in eta_grid")
    eta0 = theory.find_eta0(m, L, K)
    per_chain = int(cfg.option("samples_per_chain", 10))
    n_boot = int(cfg.option("bootstrap", 60))
    replicates = int(cfg.option("floor_replicates", 5))
    burn_mult = float(cfg.option("burn_in_relaxations", 10.0))
    min_slope = float(cfg.option("min_slope", 0.9))
    min_r2 = float(cfg.option("min_r2", 0.9))
    policy = RngPolicy(cfg.master_seed)
    ranges = TrialRanges(policy.block_size)
    n_samples = cfg.trials * per_chain
    floors = _reference_floor(p, policy, ranges, n_samples, replicates)
    floor, floor_se = float(floors.mean()), float(floors.std(ddof=1) / math.sqrt(replicates))
    rep.summary["noise_floor"] = floor
    rep.summary["noise_floor_se"] = floor_se
    rep.summary["eta0"] = eta0
    used_eta, used_w2 = [], []
    theories = {}
    for eta in cfg.eta_grid:
        if eta >= eta0:
            rep.notes.append(f"eta={eta!r} skipped: not below eta0={eta0!r}")
            rep.add_row("sweep", {"eta": eta, "status": "skipped-not-below-eta0"})
            continue
        sc = cfg.sampler_config(schedule=sched_mod.constant(eta), algorithm="PRLMC")
        burn = math.ceil(burn_mult / (m * eta))
        thin = math.ceil(1.0 / (m * eta))
        cps = [burn + s * thin for s in range(per_chain)]
        start = ranges.take(cfg.trials)
        res = run_chain(sc, cps[-1], cps, trials=cfg.trials, trial_start=start,
                        threads=threads, track_midpoints=False)
        samples = res.positions.transpose(1, 0, 2).reshape(-1, d)
        chain_ids = np.repeat(np.arange(cfg.trials), per_chain)
        w2, w2_se = _w2_per_coordinate(p, samples, chain_ids, n_boot, seed=int(1000 * eta))
        debiased = math.sqrt(max(w2 * w2 - floor * floor, 0.0))
        chain_m2 = res.norm2.mean(axis=0)
        m2, m2_se = _mean_se(chain_m2)
        tb = theory.theory_bounds(m, L, lt, K, d, eta)
        theories[repr(eta)] = tb.to_dict()
        oracle_fp = None
        if p.is_quadratic and sc.midpoint_noise_mode == INDEPENDENT:
            oracle_fp = float(sum(
                metrics.quadratic_prlmc_moment_oracle(t, eta, K, 1, 0.0, 0)[1]
                for t in p.curvatures()))
        rep.add_row("sweep", {
            "eta": eta, "status": "run", "burn_in": burn, "thin": thin,
            "samples": samples.shape[0], "w2": w2, "w2_se": w2_se, "w2_debiased": debiased,
            "w2_sq": w2 * w2, "second_moment": m2, "second_moment_se": m2_se,
            "oracle_second_moment": oracle_fp, "moment_bound": tb.moment_bound,
            "sqrt_bound": tb.w2_sqrt_bound, "sharp_bound_sq": tb.w2_sharp_bound_sq,
        })
        rep.add(one_sided(f"w2<=sqrt-bound@{eta!r}", w2, w2_se, tb.w2_sqrt_bound, REF_SQRT))
        if tb.sharp_bound_applicable:
            rep.add(one_sided(f"w2sq<=sharp-bound@{eta!r}", w2 * w2, 2 * w2 * w2_se,
                              tb.w2_sharp_bound_sq, REF_SHARP))
        else:
            rep.notes.append(f"eta={eta!r}: sharp bound hypothesis eta < 1/(m+L) fails; not checked")
        if oracle_fp is not None:
            rep.add(within(f"second-moment@{eta!r}", m2, m2_se, oracle_fp, REF_MOMENT))
            rep.add(Verdict(f"oracle<=moment-bound@{eta!r}",
                            PASS if oracle_fp <= tb.moment_bound else FAIL,
                            estimate=oracle_fp, bound=tb.moment_bound, reference=REF_MOMENT_BOUND))
        # stationarity heuristic: first vs second half of each chain's samples
        half = per_chain // 2
        if half >= 1:
            diff = res.norm2[half:].mean(axis=0) - res.norm2[:half].mean(axis=0)
            dmean, dse = _mean_se(diff)
            z = abs(dmean) / dse if dse > 0 else 0.0
            rep.add(Verdict(f"stationarity@{eta!r}", PASS if z <= 4.0 else INCONCLUSIVE,
                            estimate=dmean, se=dse, bound=0.0, reference="trend-test",
                            detail=f"z={z:.3g}"))
        used_eta.append(eta)
        used_w2.append(w2)
    rep.theory = {"per_eta": theories, "eta0": eta0}
    if len(used_eta) >= 3:
        fit = metrics.fit_loglog_slope(used_eta, used_w2)
        rep.summary["slope"] = fit.slope
        rep.summary["slope_se"] = fit.slope_se
        rep.summary["r2"] = fit.r2
        ok = fit.slope >= min_slope and fit.r2 >= min_r2
        rep.add(Verdict("bias-slope", PASS if ok else FAIL, estimate=fit.slope, se=fit.slope_se,
                        bound=min_slope, reference=REF_SHARP,
                        detail=f"r2={fit.r2:.4f} (needs >= {min_slope} with r2 >= {min_r2})"))
    else:
        rep.add(Verdict("bias-slope", INCONCLUSIVE, detail="fewer than 3 admissible step sizes"))
    return rep


# ---------------------------------------------------------------------------
# drift-check
# ---------------------------------------------------------------------------

def cmd_drift_check(cfg: ExperimentConfig, threads: int = 1) -> Report:
    rep = _new_report(cfg)
    eta = _require_constant(cfg)
    p = cfg.sampler.potential
    m, L, lt, d = _constants(p)
    K = cfg.sampler.K
    lam, b, radius = theory.lyapunov_constants(m, L, K, d, eta)
    rep.theory = _theory_dict(cfg, eta)
    rep.summary.update({"lambda": lam, "b": b, "radius": radius})
    norms = cfg.option("probe_norms", [0.0, 0.5, 1.0, 2.0, 5.0, 20.0])
    policy = RngPolicy(cfg.master_seed)
    ranges = TrialRanges(policy.block_size)
    sc = cfg.sampler_config(algorithm="PRLMC")
    for r in norms:
        x = np.zeros(d)
        x[0] = float(r)
        start = ranges.take(cfg.trials)
        res = run_chain(replace(sc, initial=tuple(x)), 1, [1], trials=cfg.trials,
                        trial_start=start, track_midpoints=False)
        v_next = 1.0 + res.norm2[0]
        mean, se = _mean_se(v_next)
        v0 = 1.0 + float(r) ** 2
        inside = float(r) <= radius
        bound = lam * v0 + (b if inside else 0.0)
        rep.add_row("drift", {"norm": float(r), "V": v0, "in_small_set": inside,
                              "mean_next_V": mean, "se": se, "bound": bound})
        rep.add(one_sided(f"drift@|x|={r!r}", mean, se, bound, REF_DRIFT,
                          detail="indicator on" if inside else "indicator off"))
    return rep


# ---------------------------------------------------------------------------
# coupling-check
# ---------------------------------------------------------------------------

DEFAULT_PROBES = [
    (0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0), (2.0, -2.0),
    (-1.0, 3.0), (5.0, 5.0), (3.0, 0.0), (0.5, -0.5), (10.0, 9.0),
]


def _probe_vector(value, d):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        out = np.zeros(d)
        out[0] = arr[0]
        return out
    if arr.size != d:
        raise ConfigError("probe vectors must have one entry per dimension")
    return arr


def cmd_coupling_check(cfg: ExperimentConfig, threads: int = 1) -> Report:
    rep = _new_report(cfg)
    theta = _require_isotropic(cfg)
    gamma = _require_constant(cfg)
    p = cfg.sampler.potential
    m, L, lt, d = _constants(p)
    K = cfg.sampler.K
    if gamma > 1.0 / (m + L):
        raise ConfigError("coupling-check needs gamma <= 1/(m+L)")
    eps = theory.kappa(m, L) / 8.0
    rep.theory = _theory_dict(cfg, gamma)
    rep.summary["epsilon"] = eps
    policy = RngPolicy(cfg.master_seed)
    ranges = TrialRanges(policy.block_size)
    n = cfg.trials
    probes = cfg.option("probes", DEFAULT_PROBES)
    if len(probes) < 10:
        rep.notes.append("fewer than 10 probe states configured")
    for x_raw, y_raw in probes:
        x, y = _probe_vector(x_raw, d), _probe_vector(y_raw, d)
        draws = StreamDraws(policy, ranges.take(n), n, 0)
        xs = np.broadcast_to(x, (n, d)).copy()
        ys = np.broadcast_to(y, (n, d)).copy()
        x1, y1 = coupled_step_ou(xs, ys, theta, gamma, K, draws)
        diff2 = np.sum((x1 - y1) ** 2, axis=1)
        mean, se = _mean_se(diff2)
        rhs = theory.coupling_one_step_rhs(float(np.sum((x - y) ** 2)), float(x @ x),
                                           float(y @ y), gamma, m, L, lt, K, d, eps)
        label = f"({', '.join(f'{v:g}' for v in x)})|({', '.join(f'{v:g}' for v in y)})"
        rep.add_row("one_step", {"x": label.split("|")[0], "y": label.split("|")[1],
                                 "mean_diff2": mean, "se": se, "bound": rhs})
        rep.add(one_sided(f"one-step@{label}", mean, se, rhs, REF_COUPLING))

    # trajectory from X_0 ~ target, Y_0 = configured initial state
    steps = cfg.steps
    if steps > 0:
        y0 = np.asarray(cfg.sampler.initial, dtype=float)
        start = ranges.take(n)
        x = StreamDraws(policy, start, n, 0).normal("initial", d) / math.sqrt(theta)
        y = np.broadcast_to(y0, (n, d)).copy()
        cps = set(cfg.checkpoints) or set(range(1, steps + 1))
        oracle = metrics.quadratic_prlmc_moment_oracle(theta, gamma, K, d, float(y0 @ y0), steps,
                                                       mode=SHARED)[0]
        c_moment = float(oracle.max())
        rep.summary["c_moment"] = c_moment
        rep.notes.append("c_moment is the supremum of the exact second-moment recursion"
                         " (shared midpoint driver), standing in for the unspecified constant")
        u1, u2 = theory.wasserstein_decay_trajectory(sched_mod.constant(gamma), m, L, lt, K, d,
                                                     c_moment, steps)
        for k in range(1, steps + 1):
            x, y = coupled_step_ou(x, y, theta, gamma, K, StreamDraws(policy, start, n, k))
            if k in cps:
                mean, se = _mean_se(np.sum((x - y) ** 2, axis=1))
                bound = u1[k] * (float(y0 @ y0) + d / m) + u2[k]
                rep.add_row("trajectory", {"step": k, "mean_diff2": mean, "se": se,
                                           "bound": bound, "u1": u1[k], "u2": u2[k]})
                rep.add(one_sided(f"trajectory@{k}", mean, se, bound, REF_DECAY))
        xm, xse = _mean_se(np.sum(x * x, axis=1))
        rep.add(within("x-leg-stationary", xm, xse, d / theta, REF_OU))
    return rep


# ---------------------------------------------------------------------------
# tv-decay
# ---------------------------------------------------------------------------

def cmd_tv_decay(cfg: ExperimentConfig, threads: int = 1) -> Report:
    rep = _new_report(cfg)
    eta = _require_constant(cfg)
    p = cfg.sampler.potential
    m, L, lt, d = _constants(p)
    if d != 1:
        raise ConfigError("tv-decay is defined for one-dimensional targets only")
    eta0 = theory.find_eta0(m, L, cfg.sampler.K)
    if eta >= eta0:
        raise ConfigError(f"tv-decay needs eta < eta0 = {eta0!r}")
    bins = int(cfg.option("bins", 100))
    lo, hi = cfg.option("range", [-5.0, 5.0])
    factor = float(cfg.option("window_factor", 5.0))
    min_r2 = float(cfg.option("min_r2", 0.9))
    terminal_max = float(cfg.option("terminal_max", 0.02))
    grid = cfg.option("n_grid")
    if grid is None:
        every = math.ceil(1.0 / (2.0 * m * eta))
        last = math.ceil(20.0 / (m * eta))
        grid = list(range(0, last + 1, every))
        if grid[-1] != last:
            grid.append(last)
    grid = sorted(int(n) for n in grid)
    ref_steps = int(cfg.option("reference_steps", math.ceil(30.0 / (m * eta))))
    ref_trials = int(cfg.option("reference_trials", cfg.trials))
    policy = RngPolicy(cfg.master_seed)
    ranges = TrialRanges(policy.block_size)
    sc = cfg.sampler_config(algorithm="PRLMC")
    rep.theory = _theory_dict(cfg, eta)
    main = run_chain(sc, grid[-1], grid, trials=cfg.trials, trial_start=ranges.take(cfg.trials),
                     threads=threads, track_midpoints=False)
    ref_cfg = replace(sc, initial=(0.0,))
    ref = run_chain(ref_cfg, ref_steps, [ref_steps], trials=ref_trials,
                    trial_start=ranges.take(ref_trials), threads=threads, track_midpoints=False)
    ref_samples = ref.positions[0][:, 0]
    p_ref = metrics.histogram_probs(ref_samples, bins, (lo, hi))
    floor = metrics.tv_noise_floor(p_ref, cfg.trials, ref_trials)
    rep.summary["noise_floor"] = floor
    ns, tvs = [], []
    for i, n in enumerate(grid):
        samples = main.positions[i][:, 0]
        p_n = metrics.histogram_probs(samples, bins, (lo, hi))
        tv = 0.5 * float(np.abs(p_n - p_ref).sum())
        se = metrics.tv_standard_error(p_n, p_ref, cfg.trials, ref_trials)
        in_window = tv >= factor * floor
        rep.add_row("tv", {"n": n, "tv": tv, "se": se, "floor": floor, "in_window": in_window})
        if in_window:
            ns.append(n)
            tvs.append(tv)
    if len(ns) < 3:
        rep.add(Verdict("tv-decay-fit", INCONCLUSIVE,
                        detail=f"only {len(ns)} points above {factor} x noise floor"))
    else:
        fit = metrics.fit_line(ns, np.log(tvs))
        rep.summary.update({"slope": fit.slope, "slope_se": fit.slope_se, "r2": fit.r2,
                            "window": [ns[0], ns[-1]], "window_points": len(ns)})
        ok = fit.slope < 0 and fit.r2 >= min_r2
        rep.add(Verdict("tv-decay-fit", PASS if ok else FAIL, estimate=fit.slope, se=fit.slope_se,
                        bound=0.0, reference=REF_TV,
                        detail=f"r2={fit.r2:.4f} over {len(ns)} points (needs slope < 0, r2 >= {min_r2})"))
    last = rep.tables["tv"][-1]
    rep.add(Verdict("terminal-tv", PASS if last["tv"] <= terminal_max else FAIL,
                    estimate=last["tv"], se=last["se"], bound=terminal_max, reference=REF_TV))
    return rep


# ---------------------------------------------------------------------------
# decreasing-step
# ---------------------------------------------------------------------------

def geometric_checkpoints(steps: int) -> list:
    out = [0]
    k = 1
    while k <= steps:
        out.append(k)
        k *= 2
    if out[-1] != steps:
        out.append(steps)
    return out


def cmd_decreasing_step(cfg: ExperimentConfig, threads: int = 1) -> Report:
    rep = _new_report(cfg)
    p = cfg.sampler.potential
    m, L, lt, d = _constants(p)
    K = cfg.sampler.K
    upper = 1.0 / (m + L)
    sched = cfg.sampler.schedule
    if cfg.option("auto_offset", True):
        sched = sched_mod.with_admissible_offset(sched, upper)
    violations = sched_mod.validate(sched, m, upper)
    if violations:
        raise ConfigError("schedule rejected: " + "; ".join(v.detail for v in violations))
    rep.summary["schedule"] = sched.to_dict()
    rep.summary["omega"] = sched_mod.omega(sched)
    checkpoints = list(cfg.checkpoints) if len(cfg.checkpoints) > 1 else geometric_checkpoints(cfg.steps)
    n_boot = int(cfg.option("bootstrap", 60))
    replicates = int(cfg.option("floor_replicates", 5))
    t_limit = float(cfg.option("floor_time_limit", 50.0))
    tail = int(cfg.option("rate_tail", 5))
    policy = RngPolicy(cfg.master_seed)
    ranges = TrialRanges(policy.block_size)
    sc = cfg.sampler_config(schedule=sched, algorithm="PRLMCDecreasing")
    x0 = np.asarray(sc.initial, dtype=float)
    x0_norm2 = float(x0 @ x0)

    oracle = moment_oracle(sc, cfg.steps)
    res = run_chain(sc, cfg.steps, checkpoints, trials=cfg.trials,
                    trial_start=ranges.take(cfg.trials), threads=threads, track_midpoints=False)
    if oracle is not None:
        c_moment = float(oracle.max())
        rep.notes.append("c_moment is the supremum of the exact second-moment recursion")
    else:
        sup = max(_mean_se(res.norm2[i])[0] + 3 * _mean_se(res.norm2[i])[1]
                  for i in range(len(checkpoints)))
        c_moment = float(sup)
        rep.notes.append("c_moment is an empirical supremum of E|Y|^2 + 3 SE over checkpoints")
    rep.summary["c_moment"] = c_moment
    u1, u2 = theory.wasserstein_decay_trajectory(sched, m, L, lt, K, d, c_moment, cfg.steps)
    floors = _reference_floor(p, policy, ranges, cfg.trials, replicates)
    floor = float(floors.mean())
    rep.summary["noise_floor"] = floor
    rows = []
    for i, n in enumerate(checkpoints):
        w2, se = _w2_per_coordinate(p, res.positions[i], None, n_boot, seed=n)
        debiased = math.sqrt(max(w2 * w2 - floor * floor, 0.0))
        row = {"step": n, "time": res.times[i], "gamma": sched_mod.gamma(sched, n) if n else None,
               "w2": w2, "se": se, "w2_debiased": debiased, "floor": floor,
               "bound": math.sqrt(u1[n] * (x0_norm2 + d / m) + u2[n]),
               "mean_norm2": float(res.norm2[i].mean()),
               "oracle_norm2": None if oracle is None else oracle[n]}
        rows.append(row)
        rep.add_row("checkpoints", row)
        if n >= 1:
            rep.add(one_sided(f"bound@{n}", w2, se, row["bound"], REF_DECAY))

    worst, worst_tol, worst_at = -math.inf, 0.0, None
    for a, b in zip(rows, rows[1:]):
        tol = 2.0 * math.sqrt(a["se"] ** 2 + b["se"] ** 2)
        excess = b["w2"] - a["w2"] - tol
        if excess > worst:
            worst, worst_tol, worst_at = excess, tol, b["step"]
    rep.add(Verdict("non-increasing", PASS if worst <= 0 else FAIL, estimate=worst + worst_tol,
                    bound=worst_tol, reference=REF_DECREASING,
                    detail=f"largest increase at step {worst_at}"))

    hits = [r for r in rows if r["time"] <= t_limit and r["w2"] < 2.0 * floor]
    first = hits[0] if hits else None
    rep.add(Verdict("reaches-noise-floor", PASS if hits else FAIL,
                    estimate=first["w2"] if first else min(r["w2"] for r in rows),
                    bound=2.0 * floor, reference=REF_DECREASING,
                    detail=f"first at step {first['step']} (t={first['time']:.4g})" if first
                    else f"not below 2 x floor by t={t_limit:g}"))

    tail_rows = [r for r in rows if r["step"] >= 1][-tail:]
    if len(tail_rows) == tail and tail_rows[0]["w2_debiased"] > 0:
        base_ratio = tail_rows[0]["w2_debiased"] / tail_rows[0]["gamma"]
        ratios = [(r["w2_debiased"] - 2.0 * r["se"]) / r["gamma"] for r in tail_rows]
        for r, val in zip(tail_rows, ratios):
            rep.add_row("rate", {"step": r["step"], "gamma": r["gamma"],
                                 "ratio": r["w2_debiased"] / r["gamma"], "ratio_lower": val})
        worst_ratio = max(ratios)
        rep.add(Verdict("rate-ratio-bounded", PASS if worst_ratio <= 2.0 * base_ratio else FAIL,
                        estimate=worst_ratio, bound=2.0 * base_ratio, reference=REF_DECREASING,
                        detail=f"debiased W2/gamma over the last {tail} checkpoints"))
    else:
        rep.add(Verdict("rate-ratio-bounded", INCONCLUSIVE,
                        detail="not enough resolved checkpoints for the rate check"))
    return rep


# ---------------------------------------------------------------------------
# midpoint-law
# ---------------------------------------------------------------------------

def pooled_chisquare(observed, expected, min_expected=5.0):
    """Chi-square test after merging tail cells with expected count below a threshold."""
    obs, exp = [], []
    acc_o, acc_e = 0.0, 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o, acc_e = 0.0, 0.0
    if acc_e > 0 and obs:
        obs[-1] += acc_o
        exp[-1] += acc_e
    obs, exp = np.asarray(obs), np.asarray(exp)
    exp = exp * obs.sum() / exp.sum()
    return stats.chisquare(obs, exp)


def cmd_midpoint_law(cfg: ExperimentConfig, threads: int = 1) -> Report:
    rep = _new_report(cfg)
    K = cfg.sampler.K
    steps = max(cfg.steps, 1)
    sc = cfg.sampler_config(algorithm="PRLMC", schedule=sched_mod.constant(
        cfg.sampler.schedule.eta if cfg.sampler.schedule.is_constant else 0.1))
    res = run_chain(sc, steps, [steps], trials=cfg.trials, threads=threads)
    hist = res.triggered_hist.astype(float)
    total = hist.sum()
    if total < 1e6:
        rep.notes.append(f"only {int(total)} steps tallied; at least 1e6 recommended")
    pmf = np.array([theory.poisson_midpoint_pmf(K, n) for n in range(K + 1)])
    for n in range(K + 1):
        rep.add_row("counts", {"count": n, "observed": int(hist[n]), "frequency": hist[n] / total,
                               "binomial_pmf": pmf[n], "poisson_pmf": theory.poisson_pmf(n)})
    chi = pooled_chisquare(hist, pmf * total)
    rep.add(Verdict("chi-square", PASS if chi.pvalue > 0.001 else FAIL, estimate=float(chi.pvalue),
                    bound=0.001, reference=REF_MIDPOINT, detail=f"statistic={chi.statistic:.4g}"))
    p0 = hist[0] / total
    rep.add(within("p(count=0)", p0, math.sqrt(pmf[0] * (1 - pmf[0]) / total), pmf[0], REF_MIDPOINT))
    counts = np.arange(K + 1)
    mean = float(hist @ counts / total)
    var = float(hist @ (counts - mean) ** 2 / (total - 1))
    rep.add(within("mean-count", mean, math.sqrt(var / total), 1.0, REF_MIDPOINT))
    k_tv = int(cfg.option("tv_K", 100))
    tv = theory.binomial_poisson_tv(k_tv)
    rep.summary["tv_binomial_poisson"] = {"K": k_tv, "tv": tv}
    for kk in cfg.option("tv_K_table", [1, 2, 4, 10, 100, 1000]):
        rep.add_row("poisson_tv", {"K": kk, "tv": theory.binomial_poisson_tv(int(kk))})
    rep.add(Verdict(f"poisson-tv@K={k_tv}", PASS if tv < 0.01 else FAIL, estimate=tv, bound=0.01,
                    reference=REF_MIDPOINT))
    return rep


# ---------------------------------------------------------------------------
# strong-error
# ---------------------------------------------------------------------------

def cmd_strong_error(cfg: ExperimentConfig, threads: int = 1) -> Report:
    rep = _new_report(cfg)
    theta = _require_isotropic(cfg)
    if len(cfg.eta_grid) < 3:
        raise ConfigError("strong-error needs at least 3 step sizes in eta_grid")
    d = cfg.sampler.potential.dimension
    K = cfg.sampler.K
    lo, hi = cfg.option("slope_window", [1.3, 1.7])
    min_r2 = float(cfg.option("min_r2", 0.98))
    x0 = np.asarray(cfg.sampler.initial, dtype=float)
    policy = RngPolicy(cfg.master_seed)
    ranges = TrialRanges(policy.block_size)
    n = cfg.trials
    gammas, errors = [], []
    for gamma in cfg.eta_grid:
        draws = StreamDraws(policy, ranges.take(n), n, 0)
        xs = np.broadcast_to(x0, (n, d)).copy()
        x1, y1 = coupled_step_ou(xs, xs.copy(), theta, gamma, K, draws)
        e2 = np.sum((x1 - y1) ** 2, axis=1)
        mean, se = _mean_se(e2)
        rms = math.sqrt(mean)
        rms_se = se / (2.0 * rms) if rms > 0 else 0.0
        rep.add_row("strong_error", {"gamma": gamma, "rms_error": rms, "se": rms_se,
                                     "mean_sq_error": mean, "mean_sq_se": se})
        gammas.append(gamma)
        errors.append(rms)
    fit = metrics.fit_loglog_slope(gammas, errors)
    rep.summary.update({"slope": fit.slope, "slope_se": fit.slope_se, "r2": fit.r2})
    rep.add(Verdict("strong-order-slope", PASS if lo <= fit.slope <= hi else FAIL,
                    estimate=fit.slope, se=fit.slope_se, bound=hi, reference=REF_STRONG,
                    detail=f"window [{lo}, {hi}]"))
    rep.add(Verdict("strong-order-r2", PASS if fit.r2 >= min_r2 else FAIL, estimate=fit.r2,
                    bound=min_r2, reference=REF_STRONG))
    return rep


COMMANDS = {
    "run": cmd_run,
    "bias-sweep": cmd_bias_sweep,
    "drift-check": cmd_drift_check,
    "coupling-check": cmd_coupling_check,
    "tv-decay": cmd_tv_decay,
    "decreasing-step": cmd_decreasing_step,
    "midpoint-law": cmd_midpoint_law,
    "strong-error": cmd_strong_error,
}


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> Report:
    return COMMANDS[cfg.experiment](cfg, threads=threads)

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prlmc_lab import metrics
from prlmc_lab import potential as pot
from prlmc_lab import schedule as S
from prlmc_lab.rng import ForcedDraws, RngPolicy
from prlmc_lab.sampler import (
    INDEPENDENT,
    SHARED,
    ChainState,
    DivergenceError,
    SamplerConfig,
    coupled_step_ou,
    coupled_step_substepped,
    ou_conditional_moments,
    ou_exact_step,
    prlmc_step,
    rlmc_step,
    run_chain,
    ula_step,
)

QUAD = pot.isotropic_quadratic(1.0, 1)


def config(algorithm="PRLMC", eta=0.1, K=2, mode=INDEPENDENT, p=QUAD, initial=None,
           seed=7, block=64, schedule=None):
    return SamplerConfig(
        algorithm=algorithm, potential=p, schedule=schedule or S.constant(eta),
        initial=initial if initial is not None else [0.0] * p.dimension,
        K=K, midpoint_noise_mode=mode, rng=RngPolicy(seed, block_size=block),
    )


def test_ula_step_with_forced_noise():
    state = ChainState(np.array([1.0, -2.0]))
    p = pot.isotropic_quadratic(2.0, 2)
    out = ula_step(state, p, 0.1, ForcedDraws({"endpoint_gaussian": 1.0}, 1))
    np.testing.assert_allclose(out.position, np.array([1.0, -2.0]) * 0.8 + math.sqrt(0.2))
    assert (out.step_index, out.grad_evals) == (1, 1)
    assert out.elapsed_time == pytest.approx(0.1)


def test_rlmc_step_with_forced_noise():
    # u = 1/2, all Gaussians zero: x - eta * grad(x - eta/2 * grad x)
    draws = ForcedDraws({"midpoint_time": 0.5}, 1)
    out = rlmc_step(ChainState(np.array([1.0])), QUAD, 0.2, draws)
    assert out.position[0] == pytest.approx(1.0 - 0.2 * 0.9)
    assert out.grad_evals == 2


def test_prlmc_step_hand_computed():
    # K = 4, only candidate 2 fires, zero noise
    flags = np.array([[0, 0, 1, 0]], dtype=bool)
    draws = ForcedDraws({"bernoulli": flags}, 1)
    eta, x = 0.2, 1.5
    out = prlmc_step(ChainState(np.array([x])), QUAD, eta, 4, INDEPENDENT, draws)
    xhat = x - 0.5 * eta * x
    assert out.position[0] == pytest.approx(x - eta * x + eta * (x - xhat), rel=1e-15)
    assert out.grad_evals == 2
    assert out.triggered == 1


@pytest.mark.parametrize("mode", [INDEPENDENT, SHARED])
@pytest.mark.parametrize("p", [QUAD, pot.quadratic_log_cosh(1.0, 0.7, 3),
                               pot.anisotropic_quadratic([0.5, 2.0])],
                         ids=lambda p: p.kind)
def test_prlmc_with_no_flags_is_ula(mode, p):
    fallback = RngPolicy(3).draws(0, 50, 0)
    x = np.random.default_rng(0).normal(size=(50, p.dimension))
    forced = ForcedDraws({"bernoulli": 0}, 50, fallback=fallback)
    a = prlmc_step(ChainState(x), p, 0.1, 5, mode, forced)
    b = ula_step(ChainState(x), p, 0.1, fallback)
    assert np.array_equal(a.position, b.position)
    np.testing.assert_array_equal(a.grad_evals, 1)


def test_k_equal_one_is_ula_bitwise():
    a = run_chain(config("PRLMC", K=1, initial=[3.0]), 40, trials=100)
    b = run_chain(config("ULA", initial=[3.0]), 40, trials=100)
    assert np.array_equal(a.positions, b.positions)


def test_index_zero_flag_costs_nothing():
    flags = np.array([[1, 0, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    forced = ForcedDraws({"bernoulli": flags}, 3)
    out = prlmc_step(ChainState(np.ones((3, 1))), QUAD, 0.1, 3, INDEPENDENT, forced)
    np.testing.assert_array_equal(out.grad_evals, [1, 3, 2])
    np.testing.assert_array_equal(out.triggered, [1, 3, 1])


@pytest.mark.parametrize("fn, args", [
    (ula_step, ()),
    (rlmc_step, ()),
])
def test_nonpositive_eta_rejected(fn, args):
    with pytest.raises(ValueError):
        fn(ChainState(np.zeros(1)), QUAD, 0.0, RngPolicy(0), *args)


def test_prlmc_input_validation():
    with pytest.raises(ValueError):
        prlmc_step(ChainState(np.zeros(1)), QUAD, 0.1, 0, INDEPENDENT, RngPolicy(0))
    with pytest.raises(ValueError):
        prlmc_step(ChainState(np.zeros(1)), QUAD, 0.1, 2, "Bogus", RngPolicy(0))


def test_config_validation():
    with pytest.raises(ValueError):
        config(algorithm="HMC")
    with pytest.raises(ValueError):
        config(initial=[0.0, 1.0])
    with pytest.raises(ValueError):
        config(algorithm="ULA", schedule=S.polynomial(1.0, 1.0))
    with pytest.warns(UserWarning, match="eta0"):
        config(eta=0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        config(eta=0.2)


def test_run_chain_matches_manual_steps():
    cfg = config("PRLMC", K=3, initial=[2.0], block=64)
    res = run_chain(cfg, 5, checkpoints=[0, 5], trials=10)
    state = ChainState(np.full((10, 1), 2.0))
    for _ in range(5):
        state = prlmc_step(state, QUAD, 0.1, 3, INDEPENDENT, cfg.rng)
    np.testing.assert_array_equal(res.positions[1], state.position)
    np.testing.assert_array_equal(res.positions[0], 2.0)
    assert res.grad_evals[1] == state.grad_evals.sum()


@pytest.mark.parametrize("algorithm", ["ULA", "RLMC", "PRLMC"])
@pytest.mark.parametrize("start, trials", [(0, 150), (37, 50), (64, 64), (100, 90)])
def test_trials_are_independent_of_batching(algorithm, start, trials):
    cfg = config(algorithm, K=4, initial=[1.0], block=64)
    whole = run_chain(cfg, 30, checkpoints=[10, 30], trials=300)
    part = run_chain(cfg, 30, checkpoints=[10, 30], trials=trials, trial_start=start)
    assert np.array_equal(part.positions, whole.positions[:, start:start + trials])


def test_threads_do_not_change_results(monkeypatch):
    from prlmc_lab import sampler
    monkeypatch.setattr(sampler, "CHUNK_BYTES", 64 * 8)
    cfg = config("PRLMC", K=4, initial=[1.0], block=64)
    one = run_chain(cfg, 20, checkpoints=[0, 20], trials=1000)
    many = run_chain(cfg, 20, checkpoints=[0, 20], trials=1000, threads=4)
    assert np.array_equal(one.positions, many.positions)
    assert np.array_equal(one.grad_evals, many.grad_evals)
    assert np.array_equal(one.triggered_hist, many.triggered_hist)


def test_grad_eval_accounting():
    res = run_chain(config("PRLMC", K=4), 200, checkpoints=[0, 100, 200], trials=500)
    assert res.grad_evals[0] == 0
    # each step costs 1 plus the flags raised among candidates 1..K-1
    hist = res.triggered_hist
    assert hist.sum() == 200 * 500
    per_step = res.grad_evals_per_step()
    assert 1.0 < per_step[-1] < 2.0
    assert per_step[-1] == pytest.approx(1.0 + 3.0 / 4.0, abs=0.02)
    rl = run_chain(config("RLMC"), 10, trials=7)
    assert rl.grad_evals[-1] == 2 * 10 * 7


def test_checkpoint_times():
    res = run_chain(config("PRLMCDecreasing", schedule=S.polynomial(1.0, 1.0, offset=2)),
                    3, checkpoints=[0, 1, 3], trials=2)
    np.testing.assert_allclose(res.times, [0.0, 1 / 3, 1 / 3 + 1 / 4 + 1 / 5])


def test_divergence_raise_and_record():
    steep = pot.isotropic_quadratic(50.0, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = config("PRLMC", eta=0.1, p=steep, initial=[1.0])
    with pytest.raises(DivergenceError) as info:
        run_chain(cfg, 2000, trials=3)
    assert info.value.step > 0
    res = run_chain(cfg, 2000, checkpoints=[0, 2000], trials=3, on_divergence="record")
    assert np.all(res.diverged_at > 0)
    assert np.all(np.isnan(res.positions[1]))


@pytest.mark.parametrize("kwargs", [
    dict(n_steps=-1),
    dict(n_steps=5, checkpoints=[3, 1]),
    dict(n_steps=5, checkpoints=[6]),
    dict(n_steps=5, on_divergence="ignore"),
    dict(n_steps=5, trials=2, initial=np.zeros((3, 1))),
])
def test_run_chain_argument_checks(kwargs):
    with pytest.raises(ValueError):
        run_chain(config(), **kwargs)


def test_per_trial_initial_states():
    init = np.arange(5.0)[:, None]
    res = run_chain(config("ULA"), 0, checkpoints=[0], trials=5, initial=init)
    np.testing.assert_array_equal(res.positions[0], init)


@pytest.mark.parametrize("mode", [INDEPENDENT, SHARED])
def test_prlmc_second_moment_matches_oracle(mode):
    res = run_chain(config("PRLMC", K=4, mode=mode, initial=[2.0], block=16384),
                    50, checkpoints=[1, 50], trials=40_000)
    traj, _ = metrics.quadratic_prlmc_moment_oracle(1.0, 0.1, 4, 1, 4.0, 50, mode=mode)
    for row, k in zip(res.norm2, [1, 50]):
        se = row.std(ddof=1) / math.sqrt(row.size)
        assert abs(row.mean() - traj[k]) <= 4 * se


def test_rlmc_second_moment_matches_oracle():
    res = run_chain(config("RLMC", initial=[2.0], block=16384), 30, trials=40_000)
    traj, _ = metrics.quadratic_rlmc_moment_oracle(1.0, 0.1, 1, 4.0, 30)
    se = res.norm2[-1].std(ddof=1) / math.sqrt(res.trials)
    assert abs(res.norm2[-1].mean() - traj[30]) <= 4 * se


def test_ou_exact_step_moments():
    x = np.full((100_000, 1), 3.0)
    out = ou_exact_step(x, 2.0, 0.3, RngPolicy(1))
    assert out.mean() == pytest.approx(3.0 * math.exp(-0.6), abs=4 * 0.6 / math.sqrt(1e5))
    var = (1 - math.exp(-1.2)) / 2.0
    assert out.var() == pytest.approx(var, rel=4 * math.sqrt(2 / 1e5))


@pytest.mark.parametrize("theta, gamma", [(1.0, 1e-6), (1.0, 0.01), (1.0, 0.0499),
                                          (1.0, 0.0501), (2.0, 0.1), (0.5, 3.0)])
def test_ou_conditional_moments_against_quadrature(theta, gamma):
    # Var(S) = int_0^g e^{-2 theta s} ds, Cov(S, B_g) = int_0^g e^{-theta s} ds
    s = np.linspace(0.0, gamma, 20001)
    from scipy.integrate import simpson
    var_s = simpson(np.exp(-2 * theta * s), x=s)
    cov = simpson(np.exp(-theta * s), x=s)
    reg, cond = ou_conditional_moments(theta, gamma)
    assert reg == pytest.approx(cov / gamma, rel=1e-10)
    expected = var_s - cov**2 / gamma
    assert cond == pytest.approx(expected, rel=1e-6, abs=1e-15)
    assert cond >= 0


def test_ou_conditional_variance_series_is_continuous():
    theta = 1.0
    below = ou_conditional_moments(theta, 0.05 - 1e-12)[1]
    above = ou_conditional_moments(theta, 0.05 + 1e-12)[1]
    assert below == pytest.approx(above, rel=1e-9)


def test_coupled_ou_leg_is_exact_in_law():
    n = 200_000
    x = np.full((n, 1), 1.0)
    xo, _ = coupled_step_ou(x, x.copy(), 1.0, 0.5, 2, RngPolicy(5))
    direct = ou_exact_step(x, 1.0, 0.5, RngPolicy(6))
    assert xo.mean() == pytest.approx(direct.mean(), abs=5 * math.sqrt(2 / n))
    assert xo.var() == pytest.approx(direct.var(), rel=0.02)


def test_coupled_legs_share_the_increment():
    # with the flags forced off, PRLMC equals ULA and its endpoint noise drives the OU leg
    fallback = RngPolicy(9).draws(0, 1000, 0)
    forced = ForcedDraws({"bernoulli": 0}, 1000, fallback=fallback)
    x = np.zeros((1000, 1))
    xo, yo = coupled_step_ou(x, x.copy(), 1.0, 1e-4, 2, forced)
    assert np.corrcoef(xo[:, 0], yo[:, 0])[0, 1] > 0.9999


def test_substepped_coupling_agrees_with_exact_on_quadratic():
    n = 20_000
    rng = RngPolicy(11)
    x = np.full((n, 1), 1.5)
    xe, ye = coupled_step_ou(x, x.copy(), 1.0, 0.2, 2, rng)
    xs, ys = coupled_step_substepped(x, x.copy(), QUAD, 0.2, 2, rng, substeps=512)
    np.testing.assert_array_equal(ye, ys)
    # the legs share the increment but not the conditional part S | dB, so
    # x_e - x_s = sqrt(2) (S_e - S_s) with two independent conditional draws
    _, cond_var = ou_conditional_moments(1.0, 0.2)
    assert np.mean((xe - xs) ** 2) == pytest.approx(4 * cond_var, rel=0.1)
    assert np.mean(xs) == pytest.approx(np.mean(xe), abs=4 * math.sqrt(4 * cond_var / n))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), K=st.integers(1, 8), mode=st.sampled_from([INDEPENDENT, SHARED]))
def test_reproducible_under_fixed_seed(seed, K, mode):
    cfg = config("PRLMC", K=K, mode=mode, seed=seed, initial=[0.5])
    a = run_chain(cfg, 5, trials=20)
    b = run_chain(cfg, 5, trials=20)
    assert np.array_equal(a.positions, b.positions)

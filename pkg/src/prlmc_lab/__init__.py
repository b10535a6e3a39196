"""Poisson randomized midpoint Langevin Monte Carlo with verification tooling."""

from .potential import PotentialSpec, anisotropic_quadratic, isotropic_quadratic, quadratic_log_cosh
from .rng import ForcedDraws, RngPolicy, StreamDraws
from .sampler import (
    ChainState,
    DivergenceError,
    NumericsError,
    RunResult,
    SamplerConfig,
    coupled_step_ou,
    ou_exact_step,
    prlmc_step,
    rlmc_step,
    run_chain,
    ula_step,
)
from .schedule import StepSchedule

__version__ = "0.1.0"

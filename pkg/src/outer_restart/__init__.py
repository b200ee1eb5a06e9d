"""Two-phase optimizer dynamics with periodic outer-momentum restarts."""

from .mode_dynamics import (
    InnerConfig,
    Kind,
    ModeState,
    OuterHyperparams,
    Regime,
    SpectralParams,
    Transition2x2,
    complex_regime_interval,
    effective_sigma,
    spectral_params,
    step,
    transition,
    transition_hb,
    transition_nag,
)
from .restart_analysis import (
    blockwise_oracle_period,
    chi_closed_form,
    chi_recurrence,
    crossover,
    heuristic_period,
    oracle_period,
    rate_r_inf,
    rate_r_k,
)
from .sweep_harness import SweepConfig, run_sweep, robustness_metric
from .trajectory_sim import (
    Block,
    BlockwiseRestart,
    GlobalRestart,
    NoRestart,
    PerModeRestart,
    QuadraticProblem,
    SoftRestart,
    Spectrum,
    simulate_blocks,
    simulate_full_quadratic,
    simulate_modes,
)

__version__ = "0.1.0"

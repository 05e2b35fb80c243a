"""Tamed-adaptive Euler-Maruyama simulation and multilevel Monte Carlo for
regime-switching, Levy-driven SDEs with super-linear coefficients."""
from .analysis import (
    RegressionFit,
    StrongErrorTable,
    builtin_functionals,
    contraction_test,
    cost_study,
    fit_rate,
    ols,
    step_count_study,
    strong_error_table,
    variance_study,
)
from .mlmc import MlmcEstimate, MlmcPlan, calibrate_constants, estimate, plan, predicted_cost
from .model import (
    Functional,
    RegimeModel,
    benchmark_model,
    linear_model,
    ou_model,
    probe_conditions,
    zero_model,
)
from .noise import bilateral_gamma, compound_poisson, levy_moment, make_streams
from .taem import (
    SimulationError,
    TaemConfig,
    run_batch,
    simulate_coupled_pair,
    simulate_synchronous,
    simulate_terminal,
    step_size,
    tamed_diffusion,
    tamed_jump,
    write_skeleton_csv,
)

__version__ = "0.1.0"

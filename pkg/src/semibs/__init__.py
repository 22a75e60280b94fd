"""American option pricing via the semilinear Black-Scholes formulation.

Two Monte-Carlo schemes (local-polynomial branching and randomized-indicator
backward simulation) plus an implicit finite-difference reference solver.
"""

from .branch_poly import (
    BranchingConfig,
    InstabilityError,
    InstabilityMetrics,
    european_mc,
    instability_report,
    price_branching,
)
from .driver import (
    ErfcDriver,
    ExactDriver,
    LocalPolyDriver,
    RandomizedDriver,
    constant_local_poly,
    fit_quadratic_spline,
    local_poly_from_erfc,
    q_erfc,
    q_exact,
    q_randomized_mean,
    q_randomized_sample,
    spline_eval,
    zero_local_poly,
)
from .market import (
    ConstVol,
    FnVol,
    MarketModel,
    PathSample,
    black_scholes_model,
    derive_rng,
    lognormal_step,
    sample_euler,
    sample_exact,
)
from .payoffs import CashFlowSpec, PayoffSpec, check_subsolution, eval_cashflow, eval_payoff
from .pde_ref import (
    FDGrid,
    SolverError,
    bs_closed_form_put,
    early_exercise_premium,
    solve_american_fd,
    solve_european_fd,
)
from .rand_driver import (
    RandSchemeConfig,
    TrialReport,
    derive_rng_seed,
    early_exercise_premium_mc,
    price_curve_with_stats,
    price_randomized,
)
from .surface import ValueSurface

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

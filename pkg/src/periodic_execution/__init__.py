"""Optimal liquidation when trades can only happen at the ticks of a Poisson clock.

The price follows a geometric Brownian motion with multiplicative permanent
impact. The package provides the closed-form value function and barrier
policy, an event-driven Monte Carlo engine, and two independent oracles (a
barrier sweep and a finite-difference HJB solver) to check them.
"""

from .model import (
    DEFAULT_PARAMS,
    DegenerateFormulaError,
    DerivedConstants,
    InvalidParamsError,
    ModelParams,
    ValidationReport,
    a_gamma,
    derive_constants,
    negative_root_m,
    positive_root_n,
    validate_params,
)
from .value import (
    MarketState,
    Region,
    argmax_gain,
    classify_region,
    gain_operator_G,
    generator_L,
    hjb_residual,
    optimal_sale_quantity,
    smooth_fit_report,
    value,
    value_all,
    value_dx,
    value_dxx,
    value_dy,
    value_limit,
)
from .simulation import (
    DecisionRecord,
    EpisodeConfig,
    PayoffEstimate,
    SellingPolicy,
    apply_buy,
    apply_sale,
    barrier_policy,
    estimate_value,
    evolve_price,
    next_arrival,
    purify_strategy,
    run_episode,
    truncate_policy,
)
from .oracles import ComparisonReport, SweepResult, compare_pde, mc_vs_closed_form, sweep_barrier
from .pde import PdeGrid, PdeGridSpec, pde_solve

__version__ = "0.1.0"

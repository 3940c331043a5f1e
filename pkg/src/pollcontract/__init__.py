"""Optimal pollution-regulation contracts on electricity networks.

Solvers for the regulator's HJB equation, producers' best responses, Monte
Carlo simulation of the resulting contracts and a command-line front end.
"""
from .closed_form import ExplicitSpec, check_regime, closed_policy, closed_slope, closed_value
from .config import Scenario, load_scenario, parse_scenario
from .constant_plan import calibrate_rho, evaluate_vd, optimize_vd
from .errors import (
    ConfigError,
    InfeasibleError,
    ModelInputError,
    PollContractError,
    RegimeError,
    StabilityError,
    ValidationError,
)
from .hamiltonian import PlanCatalog, hamiltonian_G, inner_z_min, minimize_g, plan_objective
from .hjb import Grid, ValueSurface, default_grid, make_grid, solve_fixed_plan, solve_general, value_at
from .network import (
    EdgeSpec,
    NetworkSpec,
    NodeSpec,
    Plan,
    balance_residual,
    induced_production,
    is_feasible,
    min_cost_dispatch,
    plan_grid,
)
from .producers import (
    MarketParams,
    PiecewiseLinearFn,
    ProducerSpec,
    QuadraticEffort,
    SocialCost,
    TabulatedEffort,
    best_effort,
    eval_piecewise,
    generator_f,
)
from .simulator import (
    CostEstimate,
    PathBundle,
    SimConfig,
    deviation_test,
    estimate_social_cost,
    simulate_policy,
    simulate_regulated,
    simulate_unregulated,
    verify_agent_value,
)

__version__ = "0.1.0"

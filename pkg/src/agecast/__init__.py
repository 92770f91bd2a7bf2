"""Age-aware fetching policies for a cached sensing service.

A cache serves ``N`` users who request one piece of sensed content.  Fetching
a fresh copy costs ``C_f``; serving a stale copy costs each requester an
amount that grows with the number of missed updates.  The package computes
optimal threshold policies, Whittle-index heuristics, brute-force reference
solutions, and simulates any policy.
"""
from .cost_model import (
    AgeCostModel,
    SystemParams,
    age_cost,
    avg_age_cost,
    binom_pmf,
    inverse_avg_age_cost,
    model_from_dict,
)
from .errors import (
    AgecastError,
    CapExceeded,
    ConfigError,
    DegenerateCost,
    NoBracket,
    NonProportionalCosts,
    NonThreshold,
    NotConverged,
    RefuseTooLarge,
)
from .mdp_oracle import (
    OracleSolution,
    extract_config_thresholds,
    extract_thresholds,
    rvi_heterogeneous,
    rvi_homogeneous,
    solve_oracle,
)
from .simulator import (
    AlwaysFetch,
    NeverFetch,
    PeriodicFetch,
    SimConfig,
    SimulationReport,
    ThresholdPolicyAdapter,
    WhittlePolicyAdapter,
    compare_policies,
    fetch_interval_variance_sweep,
    sample_path,
    simulate,
)
from .threshold_solver import (
    NEVER,
    ThresholdPolicy,
    f_curve,
    f_of_theta,
    solve_heterogeneous,
    solve_homogeneous,
)
from .whittle import (
    SingleUserProblem,
    WhittleIndexTable,
    build_table,
    index_exact,
    index_g,
    renewal_threshold,
    whittle_index,
    wi_decide,
    wi_threshold,
    wi_thresholds_homogeneous,
)

__version__ = "0.1.0"

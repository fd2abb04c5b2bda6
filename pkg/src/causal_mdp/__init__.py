"""Simple-regret exploration in two-stage causal MDPs with parallel causal graphs."""

from .env import (
    DO_NOTHING,
    Instance,
    Intervention,
    InvalidArgument,
    Policy,
    RewardModel,
    Simulator,
    StateModel,
    UnreachableState,
    canonical_intervention_order,
    expected_reward,
    lambda_of,
    make_experiment_instance,
    make_lower_bound_instance,
    optimal_policy,
    policy_value,
    sample_episode,
    true_m,
)
from .algce import check_good_event, run_alg_ce, run_alg_ue, simple_regret
from .opt import MinMaxProblem, solve_max_min_reach, solve_min_max

__version__ = "0.1.0"

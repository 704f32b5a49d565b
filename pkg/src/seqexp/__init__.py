"""Two-hypothesis Bayesian sequential experimentation workbench."""

from .model import (ActionPayoff, Experiment, Hypothesis, Instance, ModelError,
                    belief_update, likelihood_ratio, load_instance,
                    posterior_distribution, prune_dominated, save_instance,
                    terminal_payoff)
from .solver import (BeliefGrid, BudgetMode, SolveReport, SolverError,
                     ValueFunction, bellman_apply, finite_budget_value,
                     policy_value, solve)
from .diffusion import (AsymptoticExperiment, DiffusionError, DiffusionModel,
                        DiffusionValue, PairSolution, calibrate_kernel,
                        compose_value, select_max_vol, simulate_sde, solve_pair,
                        stopping_stats)
from .mnl import (MnlMarket, MnlProduct, choice_probs, experiment_from_display,
                  ih_scaling, interval_sets, load_market, np_optimal_display,
                  np_scaling, sales_payoff, save_market)
from .sim import (MetricTable, SimConfig, TimeModel, TrajectoryRecord,
                  cumulative_regret, optimality_gap, relative_error_integral,
                  run_policy, terminal_regret, value_of_stopping)

__version__ = "0.1.0"

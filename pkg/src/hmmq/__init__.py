"""Online HMM estimation with belief-based Q-learning for finite POMDPs."""
from .baselines import (best_permutation_match, best_transition_match, bellman_backup,
                        partial_q_learning_step, permute_transitions, q_learning_step,
                        value_iteration)
from .config import PRESETS, ConfigError, RunConfig, load_config, preset_config
from .estimators import (EstimatorSettings, Session, algorithm1_step, init_session,
                         normalize_transitions, posterior_state, posterior_transition, q_update,
                         t_update)
from .experiment import emit_report, run_eval, run_train
from .filter import DegenerateLikelihood, FilterState, filter_step, run_filter
from .params import Bounds, InitRanges, Layout, StepSchedule, ThetaParams, init_theta, realize
from .policy import BeliefGreedy, evaluate_policy, freeze
from .pomdp import (BehaviorPolicy, ContractError, ExtendedObs, PomdpModel, make_streams,
                    benchmark_behavior_policy, benchmark_model, sample_step)

__version__ = "0.1.0"

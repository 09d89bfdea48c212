"""Hub-based truck platoon release policies: solvers and a corridor simulator."""

from .errors import ContractViolation, DomainError, InferenceError, ValidationError
from .model import (ArrivalPmf, CorridorConfig, HubParams, HubState, RewardParams,
                    episode_reward, reward, step_hub_state)
from .single_hub import ThresholdPolicy, run_algorithm_1, solve_single_hub
from .two_hub import FilterState, UpstreamModel, WThresholdPolicy, run_algorithm_2, solve_two_hub
from .config import load_config, load_hourly_counts, sweden_config
from .horizon import centralized_decide, distributed_decide
from .sim import (CentralizedBinding, DistributedBinding, EpisodeTrace, TravelTimeModel,
                  run_episode, run_experiment)

__version__ = "0.1.0"

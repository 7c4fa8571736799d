"""Event-driven limit-order-book market simulator with learning execution
agents and a stylised-fact / complexity analysis toolkit."""

__version__ = "0.1.0"

from .book import (BookView, EmptyVwapError, LimitOrderBook, Order, Side,
                   Trade, price_observables, replay_events, vwap)
from .environment import (EnvironmentParams, MarketEnvironment,
                          chartist_decide, fundamentalist_decide,
                          liquidity_provider_decide)
from .execution import (LO_ACTIONS, MO_MULTIPLIERS, Observation,
                        QLearningParams, QTable, RewardParams, StateSpec,
                        apply_action_type_i, apply_action_type_ii,
                        build_twap_schedule, compute_reward, discretize_state,
                        episode_return, q_update, select_action, state_index)
from .orchestrator import (CASE_ROSTERS, CaseConfig, EpisodeAborted,
                           RunArtifacts, TrainResult, greedy_policy_export,
                           greedy_policy_grid, load_case, measure_adv,
                           run_episode, train)
from .randstream import DrawStream

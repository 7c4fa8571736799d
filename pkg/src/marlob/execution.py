"""Parent-order execution agents and their learning machinery.

Three agent kinds execute a parent order of X0 units over a horizon of T0
events, all sized off the same time-weighted (TWAP) child schedule:

* kind "S"  -- benchmark: submits each TWAP child as a market order, no
  state reads, no learning;
* kind "I"  -- learner whose 9 actions scale the TWAP child volume
  (market orders only);
* kind "II" -- learner with the 9 market-order actions plus 6 limit-order
  actions combining a placement depth (shallow/deep relative to the mid)
  with a re-decision rate (fast/moderate/slow fraction of the session).

Learners observe a 4-dimensional discretized state (remaining inventory,
elapsed time, same-side best volume, spread; 5 buckets each, 625 states)
and update a dense tabular action-value function with one-step off-policy
Q-learning under an epsilon-greedy behaviour policy.

The per-decision reward combines execution slippage (log-ratio of the
market VWAP including the agent's trades to the VWAP excluding them;
positive for sellers, negative for buyers) with a penalty for unexecuted
inventory that grows exponentially in elapsed session time.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .book import Side
from .randstream import DrawStream

#: market-order volume multipliers shared by kind I and kind II agents
MO_MULTIPLIERS = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)

#: limit-order actions for kind II: (depth multiplier, decisions per session)
LO_ACTIONS = ((0.01, 100), (0.01, 10), (0.01, 1),
              (1.0, 100), (1.0, 10), (1.0, 1))

N_ACTIONS_TYPE_I = len(MO_MULTIPLIERS)
N_ACTIONS_TYPE_II = len(MO_MULTIPLIERS) + len(LO_ACTIONS)


@dataclass
class RewardParams:
    """Weights of the non-execution penalty term."""

    lambda_r: float = 0.01   # overall penalty weight
    gamma_r: float = 1.0     # sensitivity to elapsed session fraction

    def __post_init__(self):
        if self.lambda_r < 0 or self.gamma_r < 0:
            raise ValueError("reward parameters must be non-negative")


@dataclass
class QLearningParams:
    alpha: float = 0.1
    gamma: float = 1.0
    epsilon_initial: float = 1.0
    epsilon_floor: float = 0.05
    #: per-episode multiplicative decay; None = derive from the episode
    #: count so the floor is reached on the final episode
    epsilon_decay: Optional[float] = None
    #: Robbins-Monro step-size decay: the effective learning rate of the
    #: n-th update of a state-action cell is alpha / (1 + decay * n).
    #: Zero keeps the learning rate flat.
    alpha_visit_decay: float = 0.125

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.alpha_visit_decay < 0.0:
            raise ValueError("alpha_visit_decay must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        for e in (self.epsilon_initial, self.epsilon_floor):
            if not 0.0 <= e <= 1.0:
                raise ValueError("epsilon values must lie in [0, 1]")

    def decay_for(self, episodes: int) -> float:
        if self.epsilon_decay is not None:
            return self.epsilon_decay
        if episodes <= 1 or self.epsilon_initial <= self.epsilon_floor:
            return 1.0
        return (self.epsilon_floor / self.epsilon_initial) ** (1.0 / (episodes - 1))


class TwapSchedule(NamedTuple):
    decision_points: tuple  # event-time stamps, first at 0
    child_volumes: tuple    # integer child sizes, sum == X0


def build_twap_schedule(X0: int, N: int, T0: int) -> TwapSchedule:
    """N equally spaced decision points on [0, T0); equal children with the
    integer remainder assigned to the final child."""
    if N < 1:
        raise ValueError("need at least one decision point")
    if X0 < N:
        raise ValueError(f"parent volume {X0} smaller than child count {N}")
    if T0 < N:
        raise ValueError(f"horizon {T0} too short for {N} decision points")
    points = tuple(i * T0 // N for i in range(N))
    base = X0 // N
    volumes = [base] * N
    volumes[-1] += X0 - base * N
    return TwapSchedule(points, tuple(volumes))


class Observation(NamedTuple):
    """Raw inputs of the state discretizer."""

    remaining: float      # unexecuted parent volume
    elapsed: float        # events since the parent started
    best_volume: float    # same-side best-quote volume
    spread: float         # best ask - best bid, ticks


@dataclass(frozen=True)
class StateSpec:
    """Bucket boundaries of the discrete state space (5^4 = 625 states).

    Inventory and time buckets are multiples of X0/5 and T0/5; volume and
    spread buckets use fixed boundaries.  All buckets are half-open on the
    left: a value equal to a boundary falls in the lower bucket.
    """

    inventory_step: float
    time_step: float
    volume_bounds: tuple = (31, 266, 1453, 5209)
    spread_bounds: tuple = (1, 2, 3, 7)

    N_BUCKETS = 5
    N_STATES = N_BUCKETS ** 4

    @classmethod
    def for_parent(cls, X0: int, T0: int) -> "StateSpec":
        return cls(inventory_step=X0 / cls.N_BUCKETS,
                   time_step=T0 / cls.N_BUCKETS)


def _step_bucket(value: float, step: float) -> int:
    b = math.ceil(value / step - 1e-9)
    if b < 1:
        return 1
    return b if b < 5 else 5


def discretize_state(obs: Observation, spec: StateSpec) -> tuple:
    """Map an observation to its (inventory, time, volume, spread) bucket
    tuple, each component in 1..5."""
    iv = _step_bucket(obs.remaining, spec.inventory_step)
    tv = _step_bucket(obs.elapsed, spec.time_step)
    vv = bisect_left(spec.volume_bounds, obs.best_volume) + 1
    sv = bisect_left(spec.spread_bounds, obs.spread) + 1
    return (iv, tv, vv, sv)


def state_index(state: tuple) -> int:
    iv, tv, vv, sv = state
    return ((iv - 1) * 5 + (tv - 1)) * 25 + (vv - 1) * 5 + (sv - 1)


class QTable:
    """Dense zero-initialized action-value table with visit counts."""

    def __init__(self, n_actions: int, n_states: int = StateSpec.N_STATES):
        self.values = np.zeros((n_states, n_actions))
        self.visits = np.zeros(n_states, dtype=np.int64)
        self.sa_updates = np.zeros((n_states, n_actions), dtype=np.int64)

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    def greedy_actions(self) -> np.ndarray:
        """Learned-greedy action per state: argmax over the actions whose
        value has actually been updated (ties to the lowest index); -1 for
        states never visited.

        Untried actions sit at the optimistic zero init and are excluded,
        so the reported policy reflects experienced preferences only.
        """
        masked = np.where(self.sa_updates > 0, self.values, -np.inf)
        greedy = masked.argmax(axis=1).astype(np.int64)
        greedy[self.sa_updates.sum(axis=1) == 0] = -1
        return greedy


def select_action(qtable: QTable, state_idx: int, epsilon: float,
                  stream: DrawStream) -> int:
    """Epsilon-greedy action; exploitation ties break to the lowest index."""
    if epsilon > 0.0 and stream.u() < epsilon:
        return stream.randint(qtable.n_actions)
    return int(qtable.values[state_idx].argmax())


def q_update(qtable: QTable, s: int, a: int, r: float, s_next: int,
             terminal: bool, params: QLearningParams) -> None:
    """One-step off-policy update of Q(s, a); no other cell changes.

    The step size of the n-th update of a cell is
    alpha / (1 + alpha_visit_decay * n), so the first update always uses
    the full alpha and repeated targets are averaged down over time.
    """
    values = qtable.values
    target = r if terminal else r + params.gamma * values[s_next].max()
    alpha = params.alpha / (1.0 + params.alpha_visit_decay
                            * qtable.sa_updates[s, a])
    qtable.sa_updates[s, a] += 1
    values[s, a] += alpha * (target - values[s, a])


def episode_return(rewards) -> float:
    return float(sum(rewards))


def policy_change_fraction(prev_greedy: np.ndarray,
                           new_greedy: np.ndarray) -> float:
    """Fraction of states whose greedy action differs between snapshots."""
    return float(np.mean(prev_greedy != new_greedy))


# ----------------------------------------------------------------------
# actions

class MarketOrderIntent(NamedTuple):
    side: Side
    volume: int


class LimitOrderIntent(NamedTuple):
    side: Side
    price: int
    volume: int


def apply_action_type_i(multiplier: float, child_volume: int, remaining: int,
                        side: Side = Side.BID) -> Optional[MarketOrderIntent]:
    """Market order of round(multiplier * child volume) on the parent's
    side, capped at the remaining inventory; the zero multiplier emits
    nothing."""
    vol = int(multiplier * child_volume + 0.5)
    if vol > remaining:
        vol = remaining
    if vol <= 0:
        return None
    return MarketOrderIntent(side, vol)


def limit_price_for(side: Side, mid: float, depth_ticks: float) -> int:
    """Passive price at the given depth from the mid on the parent's side.

    Rounding is away from the opposite best (floor for bids, ceil for
    asks), so the order can never cross for any positive depth.
    """
    if side == Side.BID:
        price = math.floor(mid - depth_ticks)
    else:
        price = math.ceil(mid + depth_ticks)
    return price if price > 0 else 1


def apply_action_type_ii(action: int, side: Side, mid: float,
                         child_volume: int, remaining: int,
                         depth_scale: float, T0: int, twap_interval: int):
    """Resolve a kind-II action into an order intent and the delay until
    the next decision.

    Actions 0..8 are the market-order multipliers (next decision after one
    TWAP interval).  Actions 9..14 place a limit order at depth
    a_delta * depth_scale ticks from the mid and re-decide after T0/rate
    events (rate in {100, 10, 1}: fast, moderate, slow).
    """
    if action < N_ACTIONS_TYPE_I:
        intent = apply_action_type_i(MO_MULTIPLIERS[action], child_volume,
                                     remaining, side)
        return intent, twap_interval
    a_delta, rate = LO_ACTIONS[action - N_ACTIONS_TYPE_I]
    vol = child_volume if child_volume < remaining else remaining
    interval = T0 // rate
    if interval < 1:
        interval = 1
    if vol <= 0:
        return None, interval
    price = limit_price_for(side, mid, a_delta * depth_scale)
    return LimitOrderIntent(side, price, vol), interval


# ----------------------------------------------------------------------
# reward

def _reward_from_sums(total_pv: float, total_v: float, agent_pv: float,
                      agent_v: float, side: Side, x_remaining: float,
                      v_n: float, t: float,
                      params: RewardParams) -> Optional[float]:
    """Slippage-plus-penalty reward from running trade sums.

    Returns None when the market VWAP excluding the agent is undefined
    (the reward for this decision is skipped).
    """
    rest_v = total_v - agent_v
    if total_v <= 0 or rest_v <= 0:
        return None
    slippage = math.log((total_pv / total_v) / ((total_pv - agent_pv) / rest_v))
    if side == Side.BID:
        slippage = -slippage
    if v_n <= 0:
        v_n = 1.0  # keeps the penalty finite and maximally punitive
    penalty = (x_remaining / v_n) * params.lambda_r * math.exp(params.gamma_r * t)
    return slippage - penalty


def compute_reward(trades, agent_id: int, side: Side, x_remaining: float,
                   v_n: float, t: float,
                   params: RewardParams) -> Optional[float]:
    """Reward for the agent's n-th decision given every trade so far.

    ``v_n`` is the volume the n-th child order matched and ``t`` the
    elapsed session fraction in [0, 1].  Returns None when every trade so
    far belongs to the agent (no market VWAP to compare against).
    """
    total_pv = total_v = agent_pv = agent_v = 0
    for tr in trades:
        pv = tr.price * tr.volume
        total_pv += pv
        total_v += tr.volume
        if agent_id in (tr.aggressor_agent, tr.passive_agent):
            agent_pv += pv
            agent_v += tr.volume
    return _reward_from_sums(total_pv, total_v, agent_pv, agent_v, side,
                             x_remaining, v_n, t, params)


# ----------------------------------------------------------------------
# runtime agents driven by the episode loop

class ExecutionAgent:
    """Per-episode runtime state shared by all execution-agent kinds."""

    kind = "?"
    n_actions = 0
    learns = False

    def __init__(self, agent_id: int, side: Side, X0: int, T0: int, N: int,
                 depth_scale: float = 10.0):
        self.agent_id = agent_id
        self.side = side
        self.X0 = X0
        self.T0 = T0
        self.schedule = build_twap_schedule(X0, N, T0)
        self.twap_interval = max(1, T0 // N)
        self.base_child = max(1, X0 // N)
        self.depth_scale = depth_scale
        self.spec = StateSpec.for_parent(X0, T0)
        self.reset()

    def reset(self):
        self.executed = 0
        self.decision_idx = 0
        self.next_wake = self.schedule.decision_points[0]
        self.done = False
        self.rewards: list[float] = []
        self.skipped_rewards = 0
        self.pending: Optional[tuple] = None  # (state_idx, action)
        self.pending_vn = 0
        self.agent_pv = 0
        self.agent_v = 0
        self.live_order: Optional[int] = None

    @property
    def remaining(self) -> int:
        return self.X0 - self.executed

    def on_fill(self, price: int, volume: int):
        """Called by the episode runner for every trade the agent is in."""
        self.executed += volume
        self.pending_vn += volume
        self.agent_pv += price * volume
        self.agent_v += volume

    def wake(self, ctx, seq: int, epsilon: float) -> bool:
        """Handle one decision event.  Returns False when the decision had
        to be deferred (one-sided book), handing the event slot back."""
        raise NotImplementedError


class TypeSAgent(ExecutionAgent):
    """Benchmark: one TWAP child market order per decision point."""

    kind = "S"

    def wake(self, ctx, seq: int, epsilon: float) -> bool:
        points, volumes = self.schedule
        vol = volumes[self.decision_idx]
        if vol > self.remaining:
            vol = self.remaining
        if vol > 0:
            ctx.submit_market(self, self.side, vol, seq)
        self.decision_idx += 1
        if self.decision_idx >= len(points) or self.remaining <= 0:
            self.done = True
        else:
            nxt = points[self.decision_idx]
            self.next_wake = nxt if nxt > seq else seq + 1
        return True


class _Learner(ExecutionAgent):
    learns = True

    def __init__(self, *args, qtable: QTable = None,
                 learning: QLearningParams = None,
                 reward: RewardParams = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.qtable = qtable if qtable is not None else QTable(self.n_actions)
        self.learning = learning if learning is not None else QLearningParams()
        self.reward_params = reward if reward is not None else RewardParams()

    def _observe(self, ctx, seq: int) -> Optional[int]:
        book = ctx.book
        pb = book.bid_prices[-1] if book.bid_prices else None
        pa = book.ask_prices[0] if book.ask_prices else None
        if pb is None or pa is None:
            return None
        v = book.bid_level_vol[pb] if self.side == Side.BID else book.ask_level_vol[pa]
        obs = Observation(self.remaining, seq, v, pa - pb)
        return state_index(discretize_state(obs, self.spec))

    def _close_pending(self, ctx, seq: int, s_now: int, terminal: bool):
        if self.pending is None:
            return
        s, a = self.pending
        self.pending = None
        r = _reward_from_sums(ctx.total_pv, ctx.total_v, self.agent_pv,
                              self.agent_v, self.side, self.remaining,
                              self.pending_vn, min(1.0, seq / self.T0),
                              self.reward_params)
        self.pending_vn = 0
        if r is None:
            self.skipped_rewards += 1
            return
        self.rewards.append(r)
        q_update(self.qtable, s, a, r, s_now, terminal, self.learning)

    def finalize(self, ctx, seq: int):
        """Terminal bookkeeping at parent completion or session end."""
        if self.pending is not None:
            s, _ = self.pending
            self._close_pending(ctx, seq, s, terminal=True)
        if self.live_order is not None:
            ctx.cancel(self, seq)
        self.done = True

    def _act(self, ctx, seq: int, action: int):
        raise NotImplementedError

    def wake(self, ctx, seq: int, epsilon: float) -> bool:
        s_now = self._observe(ctx, seq)
        if s_now is None:
            self.next_wake = seq + 1  # one-sided book: defer the decision
            return False
        if self.remaining <= 0:
            self._close_pending(ctx, seq, s_now, terminal=True)
            if self.live_order is not None:
                ctx.cancel(self, seq)
            self.done = True
            return True
        self._close_pending(ctx, seq, s_now, terminal=False)
        action = select_action(self.qtable, s_now, epsilon, ctx.stream)
        self.qtable.visits[s_now] += 1
        self.pending = (s_now, action)
        self._act(ctx, seq, action)
        return True


class TypeIAgent(_Learner):
    """Market-order-only learner: actions scale the TWAP child volume."""

    kind = "I"
    n_actions = N_ACTIONS_TYPE_I

    def _act(self, ctx, seq: int, action: int):
        points = self.schedule.decision_points
        i = self.decision_idx
        child = self.schedule.child_volumes[i if i < len(points) else -1]
        intent = apply_action_type_i(MO_MULTIPLIERS[action], child,
                                     self.remaining, self.side)
        if intent is not None:
            ctx.submit_market(self, self.side, intent.volume, seq)
        self.decision_idx += 1
        if self.decision_idx < len(points):
            nxt = points[self.decision_idx]
            self.next_wake = nxt if nxt > seq else seq + 1
        else:
            self.next_wake = seq + self.twap_interval


class TypeIIAgent(_Learner):
    """Learner mixing market orders with resting limit orders."""

    kind = "II"
    n_actions = N_ACTIONS_TYPE_II

    def _act(self, ctx, seq: int, action: int):
        mid = ctx.book.mid()
        intent, interval = apply_action_type_ii(
            action, self.side, mid, self.base_child, self.remaining,
            self.depth_scale, self.T0, self.twap_interval)
        if isinstance(intent, LimitOrderIntent):
            # one resting child at a time: replace the previous order
            if self.live_order is not None:
                ctx.cancel(self, seq)
            ctx.submit_limit(self, intent.side, intent.price, intent.volume,
                             seq)
        elif isinstance(intent, MarketOrderIntent):
            ctx.submit_market(self, intent.side, intent.volume, seq)
        self.decision_idx += 1
        self.next_wake = seq + interval


AGENT_KINDS = {"S": TypeSAgent, "I": TypeIAgent, "II": TypeIIAgent}

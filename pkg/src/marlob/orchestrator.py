"""Experiment cases, episode runner, training loop and artifact export.

A case declares which execution agents join the market ecology: kind
(S / I / II), side (+ acquisition, - liquidation) and count.  Every case
hands the execution agents a combined parent-order budget of 6% of ADV,
split equally, so the market faces similar latent liquidity demand across
cases.  ADV itself is measured as the mean traded volume of base-case
(no execution agents) sessions under the same environment parameters.

One episode = one trading session of ``session_events`` events, fully
determined by (case config, seed, incoming Q-tables).  Training repeats
episodes over a cycled seed list while the exploration rate decays.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, asdict
from heapq import heappush, heappop
from typing import NamedTuple, Optional

import numpy as np

from .book import LimitOrderBook, Order, Side
from .environment import (EnvironmentParams, MarketEnvironment, EXECUTION,
                          CLASS_NAMES)
from .execution import (AGENT_KINDS, QLearningParams, QTable, RewardParams,
                        StateSpec, state_index, policy_change_fraction)
from .randstream import DrawStream

#: execution-agent rosters per built-in case: (kind, side, count)
CASE_ROSTERS = {
    0: (),
    1: (("S", "-", 1),),
    2: (("S", "+", 5),),
    3: (("I", "+", 1),),
    4: (("I", "-", 1),),
    5: (("I", "+", 1), ("I", "-", 1)),
    6: (("II", "+", 1),),
    7: (("II", "+", 1), ("II", "-", 1)),
    8: (("II", "+", 1), ("I", "-", 1)),
    9: (("I", "-", 5),),
    10: (("II", "+", 5),),
    11: (("I", "+", 5), ("I", "-", 5)),
    12: (("II", "+", 5), ("II", "-", 5)),
}

#: total initial parent volume across the roster, as a fraction of ADV
PARENT_BUDGET_FRACTION = 0.06

_SIDE_OF_CHAR = {"+": Side.BID, "-": Side.ASK}

#: fixed seeds of the ADV calibration sessions
ADV_SEEDS = tuple(range(8001, 8021))

_adv_cache: dict[str, float] = {}


class EpisodeAborted(RuntimeError):
    """The environment failed mid-session (book stayed empty too long)."""


class AgentSpec(NamedTuple):
    kind: str
    side: Side
    X0: int


def params_hash(params: EnvironmentParams) -> str:
    blob = json.dumps(asdict(params), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _bare_session_volume(params: EnvironmentParams, seed: int) -> int:
    """Total traded volume of one environment-only session."""
    stream = DrawStream(seed)
    env = MarketEnvironment(params, stream)
    book = LimitOrderBook()
    total = 0
    for seq in range(1, params.session_events + 1):
        for t in env.step(book, seq):
            total += t.volume
    return total


def measure_adv(params: EnvironmentParams, n_sessions: int = 20,
                cache_path: Optional[str] = None) -> float:
    """Mean traded volume over base-case sessions; cached per parameter set."""
    key = params_hash(params) + f":{n_sessions}"
    if key in _adv_cache:
        return _adv_cache[key]
    disk: dict = {}
    if cache_path and os.path.exists(cache_path):
        with open(cache_path) as fh:
            disk = json.load(fh)
        if key in disk:
            _adv_cache[key] = disk[key]
            return disk[key]
    vols = [_bare_session_volume(params, s) for s in ADV_SEEDS[:n_sessions]]
    adv = float(np.mean(vols))
    _adv_cache[key] = adv
    if cache_path:
        disk[key] = adv
        _atomic_dump_json(cache_path, disk)
    return adv


def resolve_roster(roster, adv: float,
                   budget_fraction: float = PARENT_BUDGET_FRACTION):
    """Expand a roster into per-agent specs with the 6%-of-ADV budget split
    equally; integer remainders go to the earliest agents so the roster sum
    equals the budget exactly."""
    n = sum(count for _, _, count in roster)
    if n == 0:
        return ()
    budget = int(round(budget_fraction * adv))
    base, rem = divmod(budget, n)
    specs = []
    i = 0
    for kind, side_char, count in roster:
        if kind not in AGENT_KINDS:
            raise ValueError(f"unknown execution agent kind: {kind!r}")
        for _ in range(count):
            specs.append(AgentSpec(kind, _SIDE_OF_CHAR[side_char],
                                   base + (1 if i < rem else 0)))
            i += 1
    return tuple(specs)


@dataclass
class CaseConfig:
    """One experiment configuration, fully resolved and runnable."""

    case_id: object
    roster: tuple
    agent_specs: tuple
    adv: float
    env: EnvironmentParams
    learning: QLearningParams
    reward: RewardParams
    episodes: int = 100
    seeds: tuple = (1, 2, 3, 4, 5)
    decision_points: int = 50
    depth_scale: float = 10.0

    @property
    def learner_indices(self) -> tuple:
        return tuple(i for i, s in enumerate(self.agent_specs)
                     if s.kind != "S")


def load_case(case_id: int, env: Optional[EnvironmentParams] = None,
              adv: Optional[float] = None,
              learning: Optional[QLearningParams] = None,
              reward: Optional[RewardParams] = None,
              episodes: int = 100, seeds=(1, 2, 3, 4, 5),
              decision_points: int = 50, depth_scale: float = 10.0,
              adv_sessions: int = 20,
              adv_cache_path: Optional[str] = None,
              roster=None) -> CaseConfig:
    """Build the configuration for a built-in case (or a custom roster).

    ADV is measured from base-case sessions unless given explicitly.
    """
    if roster is None:
        if case_id not in CASE_ROSTERS:
            valid = ", ".join(str(k) for k in sorted(CASE_ROSTERS))
            raise ValueError(f"unknown case {case_id!r}; valid cases: {valid}")
        roster = CASE_ROSTERS[case_id]
    env = env if env is not None else EnvironmentParams()
    if adv is None:
        adv = measure_adv(env, n_sessions=adv_sessions,
                          cache_path=adv_cache_path)
    return CaseConfig(
        case_id=case_id, roster=tuple(roster),
        agent_specs=resolve_roster(roster, adv), adv=adv, env=env,
        learning=learning if learning is not None else QLearningParams(),
        reward=reward if reward is not None else RewardParams(),
        episodes=episodes, seeds=tuple(seeds),
        decision_points=decision_points, depth_scale=depth_scale)


# ----------------------------------------------------------------------
# episode runner

class EpisodeContext:
    """Shared episode state: the book, running VWAP sums and trade routing."""

    __slots__ = ("book", "env", "stream", "total_pv", "total_v",
                 "total_traded", "rl_by_id", "trade_signs", "record_trades")

    def __init__(self, book, env, stream, record_trades=False):
        self.book = book
        self.env = env
        self.stream = stream
        self.total_pv = 0
        self.total_v = 0
        self.total_traded = 0
        self.rl_by_id = {}
        self.trade_signs: list[int] = []
        self.record_trades = record_trades

    def absorb(self, trades):
        """Fold trades into the VWAP sums and notify involved learners."""
        for t in trades:
            v = t.volume
            self.total_pv += t.price * v
            self.total_v += v
            self.total_traded += v
            if self.record_trades:
                self.trade_signs.append(1 if t.aggressor_side == Side.BID
                                        else -1)
            ag = self.rl_by_id.get(t.aggressor_agent)
            if ag is not None:
                ag.on_fill(t.price, v)
            if t.passive_agent != t.aggressor_agent:
                pg = self.rl_by_id.get(t.passive_agent)
                if pg is not None:
                    pg.on_fill(t.price, v)

    def submit_market(self, agent, side: Side, volume: int, seq: int):
        trades = self.book.submit_market_order(side, volume, agent.agent_id,
                                               seq)
        if trades:
            self.env.route_trades(trades)
            self.absorb(trades)
        else:
            self.env.failed_market_orders += 1
        return trades

    def submit_limit(self, agent, side: Side, price: int, volume: int,
                     seq: int):
        oid = self.env.new_order_id()
        trades = self.book.submit_limit_order(
            Order(oid, agent.agent_id, side, price, volume, seq))
        if oid in self.book.orders:
            agent.live_order = oid
        if trades:
            self.env.route_trades(trades)
            self.absorb(trades)
        return trades

    def cancel(self, agent, seq: int):
        if agent.live_order is not None:
            self.book.cancel_order(agent.live_order, seq)
            agent.live_order = None


@dataclass
class RunArtifacts:
    """Everything one episode produces for training and analysis."""

    case_id: object
    seed: int
    events: Optional[list]
    mids: Optional[np.ndarray]
    micros: Optional[np.ndarray]
    trade_signs: Optional[np.ndarray]
    rewards: dict            # roster index -> per-decision rewards
    returns: dict            # roster index -> summed episode reward
    executed: dict           # roster index -> filled parent volume
    skipped_rewards: dict    # roster index -> reward evaluations skipped
    profits: list            # (seq, *per-class running profit)
    total_traded: int
    failed_market_orders: int
    environment_deaths: int


def build_agents(case: CaseConfig, env: MarketEnvironment,
                 qtables: Optional[list]):
    """Instantiate per-episode runtime agents; learners reuse ``qtables``."""
    agents = []
    T0 = case.env.session_events
    for i, spec in enumerate(case.agent_specs):
        cls = AGENT_KINDS[spec.kind]
        aid = env.register_agent(EXECUTION)
        n_dec = min(case.decision_points, spec.X0, T0)
        if spec.kind == "S":
            agents.append(cls(aid, spec.side, spec.X0, T0, n_dec))
        else:
            qt = qtables[i] if qtables is not None else None
            agents.append(cls(aid, spec.side, spec.X0, T0, n_dec,
                              depth_scale=case.depth_scale, qtable=qt,
                              learning=case.learning, reward=case.reward))
    return agents


def make_qtables(case: CaseConfig) -> list:
    """Fresh zero Q-tables aligned with the roster (None for S slots)."""
    tables = []
    for spec in case.agent_specs:
        if spec.kind == "S":
            tables.append(None)
        else:
            tables.append(QTable(AGENT_KINDS[spec.kind].n_actions))
    return tables


def run_episode(case: CaseConfig, seed: int, qtables: Optional[list] = None,
                epsilon: float = 0.0, record_events: bool = False,
                record_series: bool = False,
                abort_after: int = 5000) -> RunArtifacts:
    """Run one full session; identical inputs give identical artifacts."""
    stream = DrawStream(seed)
    env = MarketEnvironment(case.env, stream)
    book = LimitOrderBook(record_events=record_events)
    agents = build_agents(case, env, qtables)
    ctx = EpisodeContext(book, env, stream, record_trades=record_series)
    for ag in agents:
        ctx.rl_by_id[ag.agent_id] = ag

    heap = []
    for i, ag in enumerate(agents):
        heappush(heap, (ag.next_wake, i))

    T = case.env.session_events
    every = case.env.profit_sample_every
    mids = [] if record_series else None
    micros = [] if record_series else None
    profits = []
    empty_streak = 0
    nan = float("nan")

    for seq in range(1, T + 1):
        acted = False
        if heap and heap[0][0] <= seq:
            i = heappop(heap)[1]
            ag = agents[i]
            acted = ag.wake(ctx, seq, epsilon if ag.learns else 0.0)
            if not ag.done:
                heappush(heap, (ag.next_wake, i))
        if not acted:
            trades = env.step(book, seq)
            if trades:
                ctx.absorb(trades)
        mid = book.mid()
        if record_series:
            if mid is None:
                mids.append(nan)
                micros.append(nan)
            else:
                mids.append(mid)
                micros.append(book.micro())
        if mid is None:
            empty_streak += 1
            if empty_streak > abort_after:
                raise EpisodeAborted(
                    f"book had no two-sided quotes for {empty_streak} "
                    f"consecutive events (case {case.case_id}, seed {seed}, "
                    f"event {seq})")
        else:
            empty_streak = 0
        if seq % every == 0:
            profits.append((seq,) + env.class_profits(mid))

    for ag in agents:
        if ag.learns and not ag.done:
            ag.finalize(ctx, T)

    rewards = {}
    returns = {}
    executed = {}
    skipped = {}
    for i, ag in enumerate(agents):
        executed[i] = ag.executed
        if ag.learns:
            rewards[i] = list(ag.rewards)
            returns[i] = float(sum(ag.rewards))
            skipped[i] = ag.skipped_rewards
    return RunArtifacts(
        case_id=case.case_id, seed=seed,
        events=book.events,
        mids=np.asarray(mids) if record_series else None,
        micros=np.asarray(micros) if record_series else None,
        trade_signs=(np.asarray(ctx.trade_signs, dtype=np.int8)
                     if record_series else None),
        rewards=rewards, returns=returns, executed=executed,
        skipped_rewards=skipped, profits=profits,
        total_traded=ctx.total_traded,
        failed_market_orders=env.failed_market_orders,
        environment_deaths=env.deaths)


# ----------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    case: CaseConfig
    qtables: list
    #: per-episode summed reward, shape (episodes, n_learners)
    returns: np.ndarray
    #: greedy-policy change fraction between consecutive episodes,
    #: shape (episodes - 1, n_learners)
    policy_changes: np.ndarray
    epsilons: np.ndarray
    episode_seeds: list


def train(case: CaseConfig, episodes: Optional[int] = None,
          qtables: Optional[list] = None) -> TrainResult:
    """Train the case's learners over episodes with a cycled seed list and
    multiplicatively decaying exploration."""
    episodes = case.episodes if episodes is None else episodes
    if episodes < 1:
        raise ValueError("need at least one episode")
    if qtables is None:
        qtables = make_qtables(case)
    learner_idx = case.learner_indices
    decay = case.learning.decay_for(episodes)
    eps = case.learning.epsilon_initial
    floor = case.learning.epsilon_floor

    returns = np.zeros((episodes, len(learner_idx)))
    changes = np.zeros((max(episodes - 1, 0), len(learner_idx)))
    epsilons = np.zeros(episodes)
    seeds_used = []
    prev_greedy = [qtables[i].greedy_actions() for i in learner_idx]

    for ep in range(episodes):
        seed = case.seeds[ep % len(case.seeds)]
        seeds_used.append(seed)
        epsilons[ep] = eps
        art = run_episode(case, seed, qtables=qtables, epsilon=eps)
        for j, i in enumerate(learner_idx):
            returns[ep, j] = art.returns[i]
            g = qtables[i].greedy_actions()
            if ep > 0:
                changes[ep - 1, j] = policy_change_fraction(prev_greedy[j], g)
            prev_greedy[j] = g
        eps = max(floor, eps * decay)

    return TrainResult(case=case, qtables=qtables, returns=returns,
                       policy_changes=changes, epsilons=epsilons,
                       episode_seeds=seeds_used)


def greedy_policy_grid(qtable: QTable) -> np.ndarray:
    """25x25 grid of greedy action indices (-1 for never-visited states).

    Outer rows/columns are the inventory/time buckets; within each outer
    cell the 5x5 inner block is indexed by (spread, volume) buckets.
    """
    greedy = qtable.greedy_actions()
    grid = np.full((25, 25), -1, dtype=np.int64)
    for iv in range(1, 6):
        for tv in range(1, 6):
            for sv in range(1, 6):
                for vv in range(1, 6):
                    grid[(iv - 1) * 5 + (sv - 1), (tv - 1) * 5 + (vv - 1)] = \
                        greedy[state_index((iv, tv, vv, sv))]
    return grid


def greedy_policy_export(qtable: QTable,
                         visit_counts: Optional[np.ndarray] = None) -> np.ndarray:
    """Policy grid from a table, optionally overriding its visit counts."""
    if visit_counts is None:
        return greedy_policy_grid(qtable)
    clone = QTable(qtable.n_actions, qtable.values.shape[0])
    clone.values[:] = qtable.values
    clone.visits[:] = visit_counts
    return greedy_policy_grid(clone)


# ----------------------------------------------------------------------
# CSV artifact writers (all plain CSV, atomic replace, "\n" line endings)

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return ""
        return repr(x)
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def _atomic_writer(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    return tempfile.NamedTemporaryFile("w", dir=d, newline="", delete=False,
                                       suffix=".tmp")


def _finish(tmp, path):
    tmp.flush()
    os.fsync(tmp.fileno())
    tmp.close()
    os.replace(tmp.name, path)


def _atomic_dump_json(path: str, obj) -> None:
    tmp = _atomic_writer(path)
    json.dump(obj, tmp, indent=2, sort_keys=True)
    tmp.write("\n")
    _finish(tmp, path)


def write_csv(path: str, header, rows) -> None:
    tmp = _atomic_writer(path)
    w = csv.writer(tmp, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    _finish(tmp, path)


def write_events_csv(path: str, events) -> None:
    """Event log: one row per book event, post-event quote state."""
    from .book import EVENT_COLUMNS
    write_csv(path, EVENT_COLUMNS, (row[:12] for row in events))


def load_events_csv(path: str) -> list:
    """Read an event-log CSV back into typed in-memory rows."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        for raw in reader:
            seq, kind, agent_id, side, price, volume, bb, ba, bv, av, mid, micro = raw
            rows.append((
                int(seq), kind, int(agent_id), side,
                int(price) if price else None, int(volume),
                int(bb) if bb else None, int(ba) if ba else None,
                int(bv) if bv else None, int(av) if av else None,
                float(mid) if mid else None, float(micro) if micro else None,
                None))
    return rows


def write_prices_csv(path: str, mids, micros) -> None:
    write_csv(path, ("seq", "mid", "micro"),
              ((i + 1, m, u) for i, (m, u) in enumerate(zip(mids, micros))))


def load_prices_csv(path: str):
    mids = []
    micros = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for _, m, u in reader:
            mids.append(float(m) if m else float("nan"))
            micros.append(float(u) if u else float("nan"))
    return np.asarray(mids), np.asarray(micros)


def write_profits_csv(path: str, profits) -> None:
    write_csv(path, ("seq",) + CLASS_NAMES, profits)


def write_returns_csv(path: str, result: TrainResult) -> None:
    specs = result.case.agent_specs
    rows = []
    for ep in range(result.returns.shape[0]):
        for j, i in enumerate(result.case.learner_indices):
            rows.append((ep, i, specs[i].kind,
                         "+" if specs[i].side == Side.BID else "-",
                         result.returns[ep, j], result.epsilons[ep]))
    write_csv(path, ("episode", "agent", "kind", "side", "return", "epsilon"),
              rows)


def write_policy_changes_csv(path: str, result: TrainResult) -> None:
    rows = []
    for ep in range(result.policy_changes.shape[0]):
        for j, i in enumerate(result.case.learner_indices):
            rows.append((ep + 1, i, result.policy_changes[ep, j]))
    write_csv(path, ("episode", "agent", "greedy_change_fraction"), rows)


def write_qtable_csv(path: str, qtable: QTable) -> None:
    rows = []
    for iv in range(1, 6):
        for tv in range(1, 6):
            for vv in range(1, 6):
                for sv in range(1, 6):
                    si = state_index((iv, tv, vv, sv))
                    for a in range(qtable.n_actions):
                        rows.append((iv, tv, vv, sv, a,
                                     float(qtable.values[si, a]),
                                     int(qtable.visits[si])))
    write_csv(path, ("inventory", "time", "volume", "spread", "action",
                     "value", "visits"), rows)


def write_policy_csv(path: str, grid: np.ndarray) -> None:
    header = ["inv_spread"] + [f"t{t}v{v}" for t in range(1, 6)
                               for v in range(1, 6)]
    rows = []
    for r in range(25):
        label = f"i{r // 5 + 1}s{r % 5 + 1}"
        rows.append([label] + [int(x) for x in grid[r]])
    write_csv(path, header, rows)

"""Minimally intelligent market ecology and its event-time scheduler.

Three mechanistic agent classes populate the trading session:

* fundamentalists -- liquidity takers trading on the gap between a private
  valuation (drawn once at spawn) and the current mid-price;
* chartists -- liquidity takers trading on the sign of an exponentially
  weighted moving average of past mid-price log-returns;
* liquidity providers -- zero-intelligence makers quoting limit orders that
  lean against top-of-book imbalance, with random cancellation.

Takers face gamblers ruin: when an agent's running loss exceeds the wealth
budget it is retired and replaced by a fresh agent of the same class.

Each event draws one acting agent (class probability proportional to the
class arrival rate, then uniform within class).  Everything is driven by a
single DrawStream, so a (seed, params) pair fully determines the session.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .book import LimitOrderBook, Order, Side
from .randstream import DrawStream

# agent class indices used for account routing and profit reporting
FUNDAMENTALIST, CHARTIST, LIQUIDITY_PROVIDER, EXECUTION = range(4)
CLASS_NAMES = ("fundamentalist", "chartist", "liquidity_provider", "execution")


@dataclass
class EnvironmentParams:
    """Desk-scale defaults; every field is config-overridable."""

    n_fundamentalists: int = 8
    n_chartists: int = 8
    n_lps: int = 6
    # lognormal private values: initial_price * exp(drift + sigma * z).
    # Positive drift biases the value cloud above the opening price, giving
    # the session a gentle upward trend.
    fundamental_value_sigma: float = 0.008
    fundamental_value_drift: float = 0.004
    chartist_ewma_lambda: float = 0.85
    # LP quote offset (ticks) relative to the same-side best; negative
    # offsets improve the quote, clamped so the book never crosses
    lp_depth_min: int = -3
    lp_depth_max: int = 4
    # lognormal child-order sizes, truncated to [1, inf) integer units
    order_volume_mu: float = 4.7875  # ln 120
    order_volume_sigma: float = 0.9
    arrival_rate_fundamentalist: float = 1.0
    arrival_rate_chartist: float = 1.0
    arrival_rate_lp: float = 8.0
    cancel_rate: float = 0.42
    taker_wealth_budget: float = 3.0e6
    session_events: int = 50_000
    initial_price: int = 10_000
    profit_sample_every: int = 100

    def __post_init__(self):
        if min(self.n_fundamentalists, self.n_chartists, self.n_lps) < 0:
            raise ValueError("agent counts must be non-negative")
        if not 0.0 < self.chartist_ewma_lambda < 1.0:
            raise ValueError("chartist_ewma_lambda must lie in (0, 1)")
        if min(self.arrival_rate_fundamentalist, self.arrival_rate_chartist,
               self.arrival_rate_lp) <= 0.0:
            raise ValueError("arrival rates must be positive")
        if self.lp_depth_min > self.lp_depth_max:
            raise ValueError("empty LP depth range")
        if self.session_events <= 0 or self.initial_price <= 0:
            raise ValueError("session_events and initial_price must be positive")

    @property
    def lp_depth_range(self) -> tuple[int, int]:
        return (self.lp_depth_min, self.lp_depth_max)


class Fundamentalist:
    __slots__ = ("agent_id", "value")

    def __init__(self, agent_id: int, value: float):
        self.agent_id = agent_id
        self.value = value


class Chartist:
    __slots__ = ("agent_id", "ewma", "last_mid")

    def __init__(self, agent_id: int):
        self.agent_id = agent_id
        self.ewma = 0.0
        self.last_mid: Optional[float] = None


class LiquidityProvider:
    __slots__ = ("agent_id", "live_orders")

    def __init__(self, agent_id: int):
        self.agent_id = agent_id
        self.live_orders: list[int] = []


def draw_order_volume(stream: DrawStream, params: EnvironmentParams) -> int:
    v = math.exp(params.order_volume_mu
                 + params.order_volume_sigma * stream.normal())
    iv = int(v + 0.5)
    return iv if iv > 0 else 1


def draw_private_value(stream: DrawStream, params: EnvironmentParams) -> float:
    return params.initial_price * math.exp(
        params.fundamental_value_drift
        + params.fundamental_value_sigma * stream.normal())


def fundamentalist_decide(agent: Fundamentalist, mid: Optional[float],
                          stream: DrawStream, params: EnvironmentParams):
    """Market-order intent (side, volume), or None without a two-sided book
    or when the valuation equals the mid exactly."""
    if mid is None:
        return None
    if agent.value > mid:
        side = Side.BID
    elif agent.value < mid:
        side = Side.ASK
    else:
        return None
    return side, draw_order_volume(stream, params)


def chartist_decide(agent: Chartist, mid: Optional[float],
                    stream: DrawStream, params: EnvironmentParams):
    """Update the agent's EWMA of mid log-returns and emit a trend-following
    market-order intent on its sign.  First observation only seeds the EWMA."""
    if mid is None:
        return None
    if agent.last_mid is None:
        agent.last_mid = mid
        return None
    r = math.log(mid / agent.last_mid)
    agent.last_mid = mid
    lam = params.chartist_ewma_lambda
    agent.ewma = lam * agent.ewma + (1.0 - lam) * r
    if agent.ewma > 0.0:
        side = Side.BID
    elif agent.ewma < 0.0:
        side = Side.ASK
    else:
        return None
    return side, draw_order_volume(stream, params)


def liquidity_provider_decide(agent: LiquidityProvider, book: LimitOrderBook,
                              stream: DrawStream, params: EnvironmentParams):
    """Cancel a random live order with probability cancel_rate, otherwise
    quote a limit order leaning against top-of-book imbalance.

    Quote side probability: P(ask) = bid_vol / (bid_vol + ask_vol), so the
    thinner side is refreshed more often.  The price offset is uniform on
    lp_depth_range relative to the same-side best (bootstrap references:
    opposite best, then the initial price), clamped to keep the book
    uncrossed.  Returns ("cancel", order_id) or ("limit", side, price, vol)
    or None.
    """
    if stream.u() < params.cancel_rate:
        # uniform over the agent's live orders: rejection-sample the id
        # list, lazily dropping ids that already left the book
        live = agent.live_orders
        resting = book.orders
        while live:
            j = stream.randint(len(live))
            oid = live[j]
            if oid in resting:
                return "cancel", oid
            live[j] = live[-1]
            live.pop()
        return None

    pb = book.bid_prices[-1] if book.bid_prices else None
    pa = book.ask_prices[0] if book.ask_prices else None
    if pb is not None and pa is not None:
        vb = book.bid_level_vol[pb]
        va = book.ask_level_vol[pa]
        side = Side.ASK if stream.u() < vb / (vb + va) else Side.BID
    elif pb is None and pa is None:
        side = Side.ASK if stream.u() < 0.5 else Side.BID
    else:
        side = Side.ASK if pa is None else Side.BID  # quote the empty side

    lo, hi = params.lp_depth_min, params.lp_depth_max
    off = lo + stream.randint(hi - lo + 1)
    if side == Side.ASK:
        if pa is not None:
            price = pa + off
        elif pb is not None:
            price = pb + 1 + (off if off > 0 else 0)
        else:
            price = params.initial_price + (off if off > 1 else 1)
        if pb is not None and price <= pb:
            price = pb + 1
    else:
        if pb is not None:
            price = pb - off
        elif pa is not None:
            price = pa - 1 - (off if off > 0 else 0)
        else:
            price = params.initial_price - (off if off > 1 else 1)
        if pa is not None and price >= pa:
            price = pa - 1
    if price < 1:
        price = 1
    return "limit", side, price, draw_order_volume(stream, params)


class MarketEnvironment:
    """Owns the ecology agents, their accounts and the event scheduler."""

    def __init__(self, params: EnvironmentParams, stream: DrawStream):
        self.params = params
        self.stream = stream
        self.fundamentalists = []
        self.chartists = []
        self.lps = []
        self.accounts: dict[int, list] = {}   # agent_id -> [cash, inventory]
        self.class_of: dict[int, int] = {}
        self.graveyard = [0.0, 0.0, 0.0, 0.0]  # realized profit of retired agents
        self.deaths = 0
        self.failed_market_orders = 0
        self._next_agent_id = 0
        self.next_order_id = 0
        for _ in range(params.n_fundamentalists):
            a = Fundamentalist(self._new_agent_id(FUNDAMENTALIST),
                               draw_private_value(stream, params))
            self.fundamentalists.append(a)
        for _ in range(params.n_chartists):
            self.chartists.append(Chartist(self._new_agent_id(CHARTIST)))
        for _ in range(params.n_lps):
            self.lps.append(LiquidityProvider(
                self._new_agent_id(LIQUIDITY_PROVIDER)))
        rf = params.arrival_rate_fundamentalist if self.fundamentalists else 0.0
        rc = params.arrival_rate_chartist if self.chartists else 0.0
        rl = params.arrival_rate_lp if self.lps else 0.0
        total = rf + rc + rl
        if total <= 0.0:
            raise ValueError("environment needs at least one agent class")
        self._p_fund = rf / total
        self._p_chart = (rf + rc) / total

    def _new_agent_id(self, cls: int) -> int:
        aid = self._next_agent_id
        self._next_agent_id += 1
        self.accounts[aid] = [0.0, 0]
        self.class_of[aid] = cls
        return aid

    def register_agent(self, cls: int = EXECUTION) -> int:
        """Reserve an account/agent id for an externally driven agent."""
        return self._new_agent_id(cls)

    def new_order_id(self) -> int:
        oid = self.next_order_id
        self.next_order_id += 1
        return oid

    # ------------------------------------------------------------------

    def choose_actor(self):
        """Sample the next acting agent: class by arrival rate, uniform member."""
        u = self.stream.u()
        if u < self._p_fund:
            group = self.fundamentalists
        elif u < self._p_chart:
            group = self.chartists
        else:
            group = self.lps
        return group[self.stream.randint(len(group))]

    def step(self, book: LimitOrderBook, seq: int):
        """Run one environment event; returns the trades it produced."""
        agent = self.choose_actor()
        stream = self.stream
        params = self.params
        if agent.__class__ is LiquidityProvider:
            intent = liquidity_provider_decide(agent, book, stream, params)
            if intent is None:
                return ()
            if intent[0] == "cancel":
                book.cancel_order(intent[1], seq)
                return ()
            _, side, price, vol = intent
            oid = self.new_order_id()
            trades = book.submit_limit_order(
                Order(oid, agent.agent_id, side, price, vol, seq))
            agent.live_orders.append(oid)
            # LP quotes are clamped non-crossing, so no trades on arrival
            return trades
        if agent.__class__ is Fundamentalist:
            intent = fundamentalist_decide(agent, book.mid(), stream, params)
        else:
            intent = chartist_decide(agent, book.mid(), stream, params)
        if intent is None:
            return ()
        side, vol = intent
        trades = book.submit_market_order(side, vol, agent.agent_id, seq)
        if trades:
            self.route_trades(trades)
            self._ruin_check(agent, book)
        else:
            self.failed_market_orders += 1
        return trades

    def route_trades(self, trades):
        """Apply trade cash/inventory flows to both parties' accounts."""
        accounts = self.accounts
        for t in trades:
            notional = t.price * t.volume
            buyer, seller = ((t.aggressor_agent, t.passive_agent)
                             if t.aggressor_side == Side.BID
                             else (t.passive_agent, t.aggressor_agent))
            acc = accounts[buyer]
            acc[0] -= notional
            acc[1] += t.volume
            acc = accounts[seller]
            acc[0] += notional
            acc[1] -= t.volume

    def _ruin_check(self, agent, book: LimitOrderBook):
        mid = book.mid()
        if mid is None:
            return
        acc = self.accounts[agent.agent_id]
        value = acc[0] + acc[1] * mid
        if value >= -self.params.taker_wealth_budget:
            return
        # gamblers ruin: retire the strategy, spawn a fresh one in its slot
        cls = self.class_of[agent.agent_id]
        self.graveyard[cls] += value
        acc[0] = 0.0
        acc[1] = 0
        self.deaths += 1
        if cls == FUNDAMENTALIST:
            agent.value = draw_private_value(self.stream, self.params)
        else:
            agent.ewma = 0.0
            agent.last_mid = None

    def class_profits(self, mid: Optional[float]):
        """Running profit per agent class, inventory marked at the mid."""
        totals = list(self.graveyard)
        m = mid if mid is not None else float(self.params.initial_price)
        for aid, acc in self.accounts.items():
            totals[self.class_of[aid]] += acc[0] + acc[1] * m
        return tuple(totals)

"""Price-time-priority limit order book with deterministic matching.

Prices are integer tick counts (tick size = 1 simulation unit), volumes are
positive integer units.  One book instance is owned by one simulation run;
all mutation is single-threaded.

The book can optionally record an event stream (one tuple per book event,
post-event quote state on every row).  Replaying the recorded stream on a
fresh book reconstructs the book and its trades exactly.
"""

from __future__ import annotations

import bisect
from collections import deque
from enum import IntEnum
from typing import NamedTuple, Optional


class Side(IntEnum):
    """Order-book side.  For trades, BID means buyer-initiated."""

    BID = 0
    ASK = 1

    @property
    def opposite(self) -> "Side":
        return Side.ASK if self is Side.BID else Side.BID


#: side labels used in event rows / CSV exports
_ORDER_SIDE_STR = {Side.BID: "bid", Side.ASK: "ask"}
_TRADE_SIDE_STR = {Side.BID: "buy", Side.ASK: "sell"}


class Trade(NamedTuple):
    price: int
    volume: int
    aggressor_side: Side
    aggressor_agent: int
    passive_agent: int
    timestamp: int


class Order:
    """A resting or incoming limit order.  Volume is decremented by fills."""

    __slots__ = ("id", "agent_id", "side", "price", "volume", "timestamp")

    def __init__(self, id: int, agent_id: int, side: Side, price: int,
                 volume: int, timestamp: int):
        self.id = id
        self.agent_id = agent_id
        self.side = side
        self.price = price
        self.volume = volume
        self.timestamp = timestamp

    def __repr__(self):
        return (f"Order(id={self.id}, agent={self.agent_id}, "
                f"side={self.side.name}, px={self.price}, vol={self.volume}, "
                f"ts={self.timestamp})")


class EmptyVwapError(ValueError):
    """Raised when a VWAP is requested over an empty (filtered) trade set."""


class BookView(NamedTuple):
    """Snapshot of the top of the book.  Fields are None when undefined."""

    best_bid: Optional[int]
    best_ask: Optional[int]
    bid_volume: Optional[int]
    ask_volume: Optional[int]
    spread: Optional[int]
    mid: Optional[float]
    micro: Optional[float]


#: event-row column layout shared by the in-memory stream and the CSV export
#: (the in-memory rows carry one trailing ``order_id`` column used by replay).
EVENT_COLUMNS = ("seq", "kind", "agent_id", "side", "price", "volume",
                 "best_bid", "best_ask", "bid_vol", "ask_vol", "mid", "micro")


class LimitOrderBook:
    """Two-sided book: price-ordered levels, FIFO queues within a level."""

    def __init__(self, record_events: bool = False):
        self.bids: dict[int, deque] = {}
        self.asks: dict[int, deque] = {}
        self.bid_prices: list[int] = []   # ascending; best bid = [-1]
        self.ask_prices: list[int] = []   # ascending; best ask = [0]
        self.bid_level_vol: dict[int, int] = {}
        self.ask_level_vol: dict[int, int] = {}
        self.orders: dict[int, Order] = {}
        self.events: Optional[list] = [] if record_events else None
        self._last_order_ts = -1

    # ------------------------------------------------------------------
    # observables

    @property
    def best_bid(self) -> Optional[int]:
        return self.bid_prices[-1] if self.bid_prices else None

    @property
    def best_ask(self) -> Optional[int]:
        return self.ask_prices[0] if self.ask_prices else None

    def mid(self) -> Optional[float]:
        if self.bid_prices and self.ask_prices:
            return (self.bid_prices[-1] + self.ask_prices[0]) / 2.0
        return None

    def micro(self) -> Optional[float]:
        if not (self.bid_prices and self.ask_prices):
            return None
        pb = self.bid_prices[-1]
        pa = self.ask_prices[0]
        vb = self.bid_level_vol[pb]
        va = self.ask_level_vol[pa]
        # volume-weighted top of book, each price weighted by opposite volume
        return (va * pb + vb * pa) / (vb + va)

    def observables(self) -> BookView:
        pb = self.best_bid
        pa = self.best_ask
        vb = self.bid_level_vol[pb] if pb is not None else None
        va = self.ask_level_vol[pa] if pa is not None else None
        if pb is None or pa is None:
            return BookView(pb, pa, vb, va, None, None, None)
        return BookView(pb, pa, vb, va, pa - pb, (pb + pa) / 2.0,
                        (va * pb + vb * pa) / (vb + va))

    # ------------------------------------------------------------------
    # operations

    def submit_limit_order(self, order: Order) -> list[Trade]:
        """Match a limit order against the opposite side, rest any residual.

        Returns the trades generated on arrival.  Raises ValueError on a
        duplicate id, non-positive volume/price, or non-increasing timestamp.
        """
        if order.volume <= 0:
            raise ValueError(f"order volume must be positive: {order.volume}")
        if order.price is None or order.price <= 0:
            raise ValueError(f"limit order needs a positive price: {order.price}")
        if order.id in self.orders:
            raise ValueError(f"duplicate order id: {order.id}")
        if order.timestamp <= self._last_order_ts:
            raise ValueError("order timestamps must be strictly increasing")
        self._last_order_ts = order.timestamp

        trades = self._match(order.side, order.price, order.volume,
                             order.agent_id, order.timestamp)
        filled = sum(t.volume for t in trades)
        residual = order.volume - filled
        if residual > 0:
            rest = Order(order.id, order.agent_id, order.side, order.price,
                         residual, order.timestamp)
            if order.side == Side.BID:
                levels, prices, lvol = self.bids, self.bid_prices, self.bid_level_vol
            else:
                levels, prices, lvol = self.asks, self.ask_prices, self.ask_level_vol
            q = levels.get(order.price)
            if q is None:
                levels[order.price] = deque((rest,))
                bisect.insort(prices, order.price)
                lvol[order.price] = residual
            else:
                q.append(rest)
                lvol[order.price] += residual
            self.orders[order.id] = rest

        if self.events is not None:
            self._record("LimitPlaced", order.agent_id,
                         _ORDER_SIDE_STR[order.side], order.price,
                         order.volume, order.timestamp, order.id)
            for t in trades:
                self._record_trade(t)
        return trades

    def submit_market_order(self, side: Side, volume: int, agent_id: int,
                            timestamp: int) -> list[Trade]:
        """Walk the opposite side best-price-first until filled or empty.

        An empty opposite side is not an error: the (possibly empty) trade
        list is returned and the failed attempt still appears in the event
        stream.
        """
        if volume <= 0:
            raise ValueError(f"market order volume must be positive: {volume}")
        if timestamp <= self._last_order_ts:
            raise ValueError("order timestamps must be strictly increasing")
        self._last_order_ts = timestamp

        trades = self._match(side, None, volume, agent_id, timestamp)
        if self.events is not None:
            self._record("MarketExec", agent_id, _ORDER_SIDE_STR[side], None,
                         volume, timestamp, None)
            for t in trades:
                self._record_trade(t)
        return trades

    def cancel_order(self, order_id: int, timestamp: int = 0) -> bool:
        """Remove a resting order.  Returns False (no mutation) if absent."""
        order = self.orders.pop(order_id, None)
        if order is None:
            return False
        if order.side == Side.BID:
            levels, prices, lvol = self.bids, self.bid_prices, self.bid_level_vol
        else:
            levels, prices, lvol = self.asks, self.ask_prices, self.ask_level_vol
        q = levels[order.price]
        q.remove(order)
        lvol[order.price] -= order.volume
        if not q:
            del levels[order.price]
            del lvol[order.price]
            prices.pop(bisect.bisect_left(prices, order.price))
        if self.events is not None:
            self._record("Cancel", order.agent_id,
                         _ORDER_SIDE_STR[order.side], order.price,
                         order.volume, timestamp, order_id)
        return True

    # ------------------------------------------------------------------
    # internals

    def _match(self, side: Side, limit_price, volume: int, agent_id: int,
               timestamp: int) -> list[Trade]:
        trades = []
        if side == Side.BID:
            levels, prices, lvol = self.asks, self.ask_prices, self.ask_level_vol
        else:
            levels, prices, lvol = self.bids, self.bid_prices, self.bid_level_vol
        while volume > 0 and prices:
            best = prices[0] if side == Side.BID else prices[-1]
            if limit_price is not None:
                if side == Side.BID and best > limit_price:
                    break
                if side == Side.ASK and best < limit_price:
                    break
            q = levels[best]
            while q and volume > 0:
                top = q[0]
                fill = top.volume if top.volume < volume else volume
                top.volume -= fill
                volume -= fill
                lvol[best] -= fill
                trades.append(Trade(best, fill, side, agent_id,
                                    top.agent_id, timestamp))
                if top.volume == 0:
                    q.popleft()
                    del self.orders[top.id]
            if not q:
                del levels[best]
                del lvol[best]
                if side == Side.BID:
                    prices.pop(0)
                else:
                    prices.pop()
        return trades

    def _record(self, kind, agent_id, side_str, price, volume, seq, order_id):
        pb = self.bid_prices[-1] if self.bid_prices else None
        pa = self.ask_prices[0] if self.ask_prices else None
        vb = self.bid_level_vol[pb] if pb is not None else None
        va = self.ask_level_vol[pa] if pa is not None else None
        if pb is not None and pa is not None:
            mid = (pb + pa) / 2.0
            micro = (va * pb + vb * pa) / (vb + va)
        else:
            mid = micro = None
        self.events.append((seq, kind, agent_id, side_str, price, volume,
                            pb, pa, vb, va, mid, micro, order_id))

    def _record_trade(self, t: Trade):
        self._record("Trade", t.aggressor_agent,
                     _TRADE_SIDE_STR[t.aggressor_side], t.price, t.volume,
                     t.timestamp, None)

    # ------------------------------------------------------------------
    # state inspection (tests, replay)

    def snapshot(self):
        """Full book state as a comparable nested tuple."""
        out = []
        for side, levels, prices in (("bid", self.bids, self.bid_prices),
                                     ("ask", self.asks, self.ask_prices)):
            for p in prices:
                out.append((side, p, tuple((o.id, o.agent_id, o.volume,
                                            o.timestamp)
                                           for o in levels[p])))
        return tuple(out)

    def total_resting_volume(self, side: Side) -> int:
        lvol = self.bid_level_vol if side == Side.BID else self.ask_level_vol
        return sum(lvol.values())


def price_observables(book: LimitOrderBook) -> BookView:
    """Best quotes, spread, mid, micro and top-of-book volumes.

    Fields are None whenever a book side is empty; callers must handle the
    one-sided and empty cases.
    """
    return book.observables()


def vwap(trades, exclude_agent: Optional[int] = None) -> float:
    """Volume-weighted mean trade price, optionally excluding every trade
    in which ``exclude_agent`` took part (either side).

    Raises EmptyVwapError when the filtered set is empty.
    """
    pv = 0
    v = 0
    for t in trades:
        if exclude_agent is not None and (t.aggressor_agent == exclude_agent
                                          or t.passive_agent == exclude_agent):
            continue
        pv += t.price * t.volume
        v += t.volume
    if v == 0:
        raise EmptyVwapError("no trades left after exclusion")
    return pv / v


def replay_events(events) -> tuple[LimitOrderBook, list[Trade]]:
    """Re-apply a recorded event stream to a fresh book.

    Only the causal rows (LimitPlaced / MarketExec / Cancel) drive the
    replay; Trade rows are outputs of the original run and are skipped.
    Returns the rebuilt book and the trades the replay generated.
    """
    book = LimitOrderBook()
    trades: list[Trade] = []
    side_of = {"bid": Side.BID, "ask": Side.ASK}
    for row in events:
        seq, kind, agent_id, side, price, volume = row[:6]
        order_id = row[12]
        if kind == "LimitPlaced":
            trades.extend(book.submit_limit_order(
                Order(order_id, agent_id, side_of[side], price, volume, seq)))
        elif kind == "MarketExec":
            trades.extend(book.submit_market_order(side_of[side], volume,
                                                   agent_id, seq))
        elif kind == "Cancel":
            book.cancel_order(order_id, seq)
    return book, trades

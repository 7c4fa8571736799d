"""Independent brute-force order matcher used as the engine oracle.

Deliberately structured nothing like the engine: resting orders live in a
flat list and every incoming order rescans the whole book to find the next
fill (best price first, oldest timestamp within a price).
"""

from marlob.book import Side, Trade


class BruteForceBook:
    def __init__(self):
        self.resting = []  # [order_id, agent_id, side, price, volume, ts]

    def _next_match(self, side, limit_price):
        """Best crossing resting order on the opposite side, or None."""
        best = None
        for o in self.resting:
            if o[2] == side:
                continue
            if limit_price is not None:
                if side == Side.BID and o[3] > limit_price:
                    continue
                if side == Side.ASK and o[3] < limit_price:
                    continue
            if best is None:
                best = o
            elif side == Side.BID:
                if o[3] < best[3] or (o[3] == best[3] and o[5] < best[5]):
                    best = o
            else:
                if o[3] > best[3] or (o[3] == best[3] and o[5] < best[5]):
                    best = o
        return best

    def _execute(self, side, limit_price, volume, agent_id, ts):
        trades = []
        while volume > 0:
            o = self._next_match(side, limit_price)
            if o is None:
                break
            fill = min(volume, o[4])
            trades.append(Trade(o[3], fill, side, agent_id, o[1], ts))
            o[4] -= fill
            volume -= fill
            if o[4] == 0:
                self.resting.remove(o)
        return trades, volume

    def submit_limit(self, order_id, agent_id, side, price, volume, ts):
        trades, residual = self._execute(side, price, volume, agent_id, ts)
        if residual > 0:
            self.resting.append([order_id, agent_id, side, price, residual, ts])
        return trades

    def submit_market(self, side, volume, agent_id, ts):
        trades, _ = self._execute(side, None, volume, agent_id, ts)
        return trades

    def cancel(self, order_id):
        for o in self.resting:
            if o[0] == order_id:
                self.resting.remove(o)
                return True
        return False

    def snapshot(self):
        """Same nested-tuple layout as LimitOrderBook.snapshot()."""
        out = []
        bids = sorted((o for o in self.resting if o[2] == Side.BID),
                      key=lambda o: (o[3], o[5]))
        asks = sorted((o for o in self.resting if o[2] == Side.ASK),
                      key=lambda o: (o[3], o[5]))
        for side, orders in (("bid", bids), ("ask", asks)):
            by_price = {}
            for o in orders:
                by_price.setdefault(o[3], []).append((o[0], o[1], o[4], o[5]))
            for p in sorted(by_price):
                out.append((side, p, tuple(by_price[p])))
        return tuple(out)


def random_op_sequence(rng, n_events, price_center=100, price_band=12,
                       max_volume=60):
    """Reproducible mixed op stream: (kind, side, price, volume) tuples."""
    ops = []
    known_ids = []
    next_id = 0
    for ts in range(1, n_events + 1):
        u = rng.random()
        side = Side.BID if rng.random() < 0.5 else Side.ASK
        if u < 0.55:
            price = price_center + int(rng.integers(-price_band, price_band + 1))
            ops.append(("limit", next_id, side, max(1, price),
                        int(rng.integers(1, max_volume)), ts))
            known_ids.append(next_id)
            next_id += 1
        elif u < 0.85:
            ops.append(("market", None, side, None,
                        int(rng.integers(1, max_volume)), ts))
        else:
            if known_ids:
                oid = known_ids[int(rng.integers(0, len(known_ids)))]
            else:
                oid = 999_999  # unknown id: both books must report failure
            ops.append(("cancel", oid, None, None, None, ts))
    return ops


def apply_ops(book, brute, ops, agent_id=1):
    """Drive engine and oracle through one op stream.

    Returns (engine trades, oracle trades, cancel results pairs).
    """
    from marlob.book import LimitOrderBook, Order

    engine_trades = []
    brute_trades = []
    cancels = []
    for kind, oid, side, price, volume, ts in ops:
        if kind == "limit":
            engine_trades.extend(book.submit_limit_order(
                Order(oid, agent_id, side, price, volume, ts)))
            brute_trades.extend(brute.submit_limit(
                oid, agent_id, side, price, volume, ts))
        elif kind == "market":
            engine_trades.extend(book.submit_market_order(side, volume,
                                                          agent_id, ts))
            brute_trades.extend(brute.submit_market(side, volume, agent_id,
                                                    ts))
        else:
            cancels.append((book.cancel_order(oid, ts), brute.cancel(oid)))
    return engine_trades, brute_trades, cancels

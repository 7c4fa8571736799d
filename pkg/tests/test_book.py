import numpy as np
import pytest

from marlob.book import (EmptyVwapError, LimitOrderBook, Order, Side, Trade,
                         price_observables, replay_events, vwap)
from bruteforce import BruteForceBook, apply_ops, random_op_sequence


def lo(book, oid, side, price, vol, ts, agent=1):
    return book.submit_limit_order(Order(oid, agent, side, price, vol, ts))


class TestLimitOrders:
    def test_resting_on_empty_book(self):
        book = LimitOrderBook()
        trades = lo(book, 1, Side.ASK, 100, 50, 1)
        assert trades == []
        assert book.best_ask == 100
        assert book.ask_level_vol[100] == 50

    def test_crossing_bid_matches(self):
        book = LimitOrderBook()
        lo(book, 1, Side.ASK, 100, 50, 1, agent=7)
        trades = lo(book, 2, Side.BID, 100, 20, 2, agent=8)
        assert trades == [Trade(100, 20, Side.BID, 8, 7, 2)]
        assert book.ask_level_vol[100] == 30
        assert 2 not in book.orders  # fully filled, nothing rests

    def test_price_time_priority_within_level(self):
        book = LimitOrderBook()
        lo(book, 1, Side.ASK, 100, 10, 1, agent=5)
        lo(book, 2, Side.ASK, 100, 10, 2, agent=6)
        trades = lo(book, 3, Side.BID, 100, 15, 3, agent=8)
        assert trades == [Trade(100, 10, Side.BID, 8, 5, 3),
                          Trade(100, 5, Side.BID, 8, 6, 3)]
        assert book.ask_level_vol[100] == 5

    def test_residual_rests_after_partial_cross(self):
        book = LimitOrderBook()
        lo(book, 1, Side.ASK, 100, 10, 1)
        trades = lo(book, 2, Side.BID, 101, 25, 2)
        assert sum(t.volume for t in trades) == 10
        assert book.best_bid == 101
        assert book.bid_level_vol[101] == 15
        assert book.best_ask is None

    def test_rejects_duplicate_id(self):
        book = LimitOrderBook()
        lo(book, 1, Side.ASK, 100, 10, 1)
        with pytest.raises(ValueError, match="duplicate"):
            lo(book, 1, Side.ASK, 101, 10, 2)

    def test_rejects_zero_volume(self):
        book = LimitOrderBook()
        with pytest.raises(ValueError, match="volume"):
            lo(book, 1, Side.ASK, 100, 0, 1)

    def test_rejects_non_increasing_timestamp(self):
        book = LimitOrderBook()
        lo(book, 1, Side.ASK, 100, 10, 5)
        with pytest.raises(ValueError, match="timestamp"):
            lo(book, 2, Side.BID, 90, 10, 5)


class TestMarketOrders:
    def test_walks_levels_best_price_first(self):
        book = LimitOrderBook()
        lo(book, 1, Side.ASK, 100, 10, 1, agent=5)
        lo(book, 2, Side.ASK, 101, 10, 2, agent=6)
        trades = book.submit_market_order(Side.BID, 15, 9, 3)
        assert [(t.price, t.volume) for t in trades] == [(100, 10), (101, 5)]
        assert book.best_ask == 101
        assert book.ask_level_vol[101] == 5

    def test_small_order_inside_top_of_book(self):
        book = LimitOrderBook()
        lo(book, 1, Side.ASK, 100, 10, 1)
        lo(book, 2, Side.BID, 99, 10, 2)
        trades = book.submit_market_order(Side.BID, 5, 9, 3)
        assert [(t.price, t.volume) for t in trades] == [(100, 5)]
        assert (book.best_bid, book.best_ask) == (99, 100)

    def test_empty_opposite_side_returns_no_trades(self):
        book = LimitOrderBook(record_events=True)
        assert book.submit_market_order(Side.ASK, 5, 9, 1) == []
        # the failed attempt is still an event, not an exception
        assert [r[1] for r in book.events] == ["MarketExec"]


class TestCancel:
    def test_cancel_resting(self):
        book = LimitOrderBook()
        lo(book, 1, Side.ASK, 100, 10, 1)
        assert book.cancel_order(1) is True
        assert book.best_ask is None

    def test_cancel_twice_fails_second_time(self):
        book = LimitOrderBook()
        lo(book, 1, Side.ASK, 100, 10, 1)
        assert book.cancel_order(1) is True
        assert book.cancel_order(1) is False

    def test_cancel_after_fill_fails_without_mutation(self):
        book = LimitOrderBook()
        lo(book, 1, Side.ASK, 100, 10, 1)
        book.submit_market_order(Side.BID, 10, 9, 2)
        snap = book.snapshot()
        assert book.cancel_order(1) is False
        assert book.snapshot() == snap


class TestObservables:
    def test_symmetric_volumes(self):
        book = LimitOrderBook()
        lo(book, 1, Side.BID, 99, 10, 1)
        lo(book, 2, Side.ASK, 101, 10, 2)
        view = price_observables(book)
        assert (view.spread, view.mid, view.micro) == (2, 100.0, 100.0)

    def test_micro_tilts_toward_thin_side(self):
        book = LimitOrderBook()
        lo(book, 1, Side.BID, 99, 30, 1)
        lo(book, 2, Side.ASK, 101, 10, 2)
        view = price_observables(book)
        assert view.micro == pytest.approx((10 * 99 + 30 * 101) / 40)
        assert view.micro == pytest.approx(100.5)

    def test_one_sided_book_flags_absent(self):
        book = LimitOrderBook()
        lo(book, 1, Side.BID, 99, 10, 1)
        view = price_observables(book)
        assert view.best_bid == 99
        assert view.best_ask is None
        assert view.spread is None and view.mid is None and view.micro is None


class TestVwap:
    def trades(self, spec):
        return [Trade(p, v, Side.BID, agent, 0, i)
                for i, (p, v, agent) in enumerate(spec)]

    def test_equal_weights(self):
        assert vwap(self.trades([(100, 10, 1), (102, 10, 2)])) == 101

    def test_volume_weighted(self):
        assert vwap(self.trades([(100, 10, 1), (102, 30, 2)])) == 101.5

    def test_exclusion_empties_set(self):
        with pytest.raises(EmptyVwapError):
            vwap(self.trades([(100, 10, 1), (102, 30, 1)]), exclude_agent=1)

    def test_exclusion_covers_passive_side(self):
        trades = [Trade(100, 10, Side.BID, 1, 9, 0),
                  Trade(104, 10, Side.BID, 2, 3, 1)]
        assert vwap(trades, exclude_agent=9) == 104


def volumes_by_side(trades):
    out = {Side.BID: 0, Side.ASK: 0}
    for t in trades:
        out[t.aggressor_side.opposite] += t.volume  # passive side absorbed
    return out


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(40))
    def test_random_sequences_match_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        ops = random_op_sequence(rng, n_events=150)
        book = LimitOrderBook()
        brute = BruteForceBook()
        engine_trades, brute_trades, cancels = apply_ops(book, brute, ops)
        assert engine_trades == brute_trades
        assert all(a == b for a, b in cancels)
        assert book.snapshot() == brute.snapshot()

    @pytest.mark.parametrize("seed", range(10))
    def test_never_crossed_and_volume_conserved(self, seed):
        rng = np.random.default_rng(1000 + seed)
        ops = random_op_sequence(rng, n_events=200)
        book = LimitOrderBook()
        accepted = {Side.BID: 0, Side.ASK: 0}
        matched = {Side.BID: 0, Side.ASK: 0}
        cancelled = {Side.BID: 0, Side.ASK: 0}
        for kind, oid, side, price, volume, ts in ops:
            if kind == "limit":
                trades = book.submit_limit_order(Order(oid, 1, side, price,
                                                       volume, ts))
                accepted[side] += volume
                # an aggressive limit order consumes the opposite side and
                # its own matched volume never rests
                for t in trades:
                    matched[side.opposite] += t.volume
                    matched[side] += t.volume
            elif kind == "market":
                for t in book.submit_market_order(side, volume, 1, ts):
                    matched[side.opposite] += t.volume
            else:
                order = book.orders.get(oid)
                if order is not None:
                    cancelled[order.side] += order.volume
                book.cancel_order(oid, ts)
            bb, ba = book.best_bid, book.best_ask
            if bb is not None and ba is not None:
                assert bb < ba
            for s in (Side.BID, Side.ASK):
                assert (book.total_resting_volume(s)
                        == accepted[s] - matched[s] - cancelled[s])


class TestReplay:
    def test_replay_reconstructs_book_and_trades(self):
        rng = np.random.default_rng(99)
        ops = random_op_sequence(rng, n_events=300)
        book = LimitOrderBook(record_events=True)
        brute = BruteForceBook()
        engine_trades, _, _ = apply_ops(book, brute, ops)
        replayed_book, replayed_trades = replay_events(book.events)
        assert replayed_trades == engine_trades
        assert replayed_book.snapshot() == book.snapshot()

    def test_event_rows_carry_post_state(self):
        book = LimitOrderBook(record_events=True)
        lo(book, 1, Side.ASK, 100, 10, 1)
        row = book.events[-1]
        assert row[1] == "LimitPlaced"
        assert row[7] == 100  # best ask after the placement

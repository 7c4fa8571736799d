import math

import numpy as np
import pytest
from scipy import stats

from marlob.book import LimitOrderBook, Order, Side
from marlob.environment import (Chartist, EnvironmentParams, Fundamentalist,
                                LiquidityProvider, MarketEnvironment,
                                chartist_decide, fundamentalist_decide,
                                liquidity_provider_decide)
from marlob.orchestrator import load_case, run_episode
from marlob.randstream import DrawStream


@pytest.fixture
def params():
    return EnvironmentParams()


@pytest.fixture
def stream():
    return DrawStream(0)


class TestFundamentalist:
    def test_buys_below_value(self, params, stream):
        agent = Fundamentalist(0, value=105.0)
        intent = fundamentalist_decide(agent, 100.0, stream, params)
        assert intent is not None and intent[0] == Side.BID

    def test_sells_above_value(self, params, stream):
        agent = Fundamentalist(0, value=95.0)
        intent = fundamentalist_decide(agent, 100.0, stream, params)
        assert intent is not None and intent[0] == Side.ASK

    def test_no_order_at_exact_value(self, params, stream):
        agent = Fundamentalist(0, value=100.0)
        assert fundamentalist_decide(agent, 100.0, stream, params) is None

    def test_no_order_without_mid(self, params, stream):
        agent = Fundamentalist(0, value=100.0)
        assert fundamentalist_decide(agent, None, stream, params) is None


class TestChartist:
    def test_first_observation_only_seeds(self, params, stream):
        agent = Chartist(0)
        assert chartist_decide(agent, 100.0, stream, params) is None
        assert agent.last_mid == 100.0

    def test_positive_ewma_buys(self, params, stream):
        agent = Chartist(0)
        chartist_decide(agent, 100.0, stream, params)
        intent = chartist_decide(agent, 101.0, stream, params)
        assert agent.ewma > 0
        assert intent is not None and intent[0] == Side.BID

    def test_constant_mid_gives_zero_ewma_and_no_order(self, params, stream):
        agent = Chartist(0)
        chartist_decide(agent, 100.0, stream, params)
        for _ in range(5):
            intent = chartist_decide(agent, 100.0, stream, params)
        assert agent.ewma == 0.0
        assert intent is None

    def test_one_step_ewma_cancellation(self, stream):
        # lambda=0.5, prior ewma +0.02, incoming return -0.02: the updated
        # signal collapses to zero (up to float rounding) and the sign rule
        # emits no confident order either way
        params = EnvironmentParams(chartist_ewma_lambda=0.5)
        agent = Chartist(0)
        agent.last_mid = 100.0
        agent.ewma = 0.02
        chartist_decide(agent, 100.0 * math.exp(-0.02), stream, params)
        assert agent.ewma == pytest.approx(0.0, abs=1e-15)


class TestLiquidityProvider:
    def test_bootstraps_empty_book(self, params, stream):
        agent = LiquidityProvider(0)
        book = LimitOrderBook()
        quoting = EnvironmentParams(cancel_rate=0.0)
        intent = liquidity_provider_decide(agent, book, stream, quoting)
        kind, side, price, vol = intent
        assert kind == "limit" and vol >= 1
        assert abs(price - quoting.initial_price) <= max(
            abs(quoting.lp_depth_min), abs(quoting.lp_depth_max), 1)

    def test_leans_against_imbalance(self, params):
        # bid volume 90 vs ask volume 10: ask quotes with probability 0.9
        book = LimitOrderBook()
        book.submit_limit_order(Order(1, 1, Side.BID, 99, 90, 1))
        book.submit_limit_order(Order(2, 1, Side.ASK, 101, 10, 2))
        quoting = EnvironmentParams(cancel_rate=0.0)
        stream = DrawStream(123)
        agent = LiquidityProvider(0)
        n = 20_000
        asks = sum(
            liquidity_provider_decide(agent, book, stream, quoting)[1]
            == Side.ASK for _ in range(n))
        se = math.sqrt(0.9 * 0.1 / n)
        assert asks / n == pytest.approx(0.9, abs=3 * se)

    def test_cancel_with_no_live_orders_is_noop(self, params):
        agent = LiquidityProvider(0)
        book = LimitOrderBook()
        always_cancel = EnvironmentParams(cancel_rate=1.0)
        assert liquidity_provider_decide(agent, book, DrawStream(0),
                                         always_cancel) is None

    def test_cancel_targets_live_order_uniformly(self, params):
        agent = LiquidityProvider(0)
        book = LimitOrderBook()
        for i in range(4):
            book.submit_limit_order(Order(i, 0, Side.BID, 90 + i, 10, i + 1))
        agent.live_orders = [0, 1, 2, 3, 77]  # 77 is stale
        always_cancel = EnvironmentParams(cancel_rate=1.0)
        intent = liquidity_provider_decide(agent, book, DrawStream(5),
                                           always_cancel)
        assert intent[0] == "cancel" and intent[1] in (0, 1, 2, 3)
        assert 77 not in agent.live_orders or intent[1] != 77

    def test_quotes_never_cross(self, params):
        book = LimitOrderBook()
        book.submit_limit_order(Order(1, 1, Side.BID, 100, 10, 1))
        book.submit_limit_order(Order(2, 1, Side.ASK, 101, 10, 2))
        quoting = EnvironmentParams(cancel_rate=0.0)
        stream = DrawStream(7)
        agent = LiquidityProvider(0)
        for _ in range(500):
            _, side, price, _ = liquidity_provider_decide(agent, book, stream,
                                                          quoting)
            if side == Side.BID:
                assert price < 101
            else:
                assert price > 100


class TestScheduler:
    def count_classes(self, env, n=30_000):
        counts = {Fundamentalist: 0, Chartist: 0, LiquidityProvider: 0}
        for _ in range(n):
            counts[type(env.choose_actor())] += 1
        return counts

    def test_equal_rates_give_equal_class_probabilities(self):
        params = EnvironmentParams(arrival_rate_fundamentalist=1.0,
                                   arrival_rate_chartist=1.0,
                                   arrival_rate_lp=1.0)
        env = MarketEnvironment(params, DrawStream(3))
        counts = self.count_classes(env)
        n = sum(counts.values())
        se = math.sqrt((1 / 3) * (2 / 3) / n)
        for c in counts.values():
            assert c / n == pytest.approx(1 / 3, abs=4 * se)

    def test_rates_weight_class_choice(self):
        params = EnvironmentParams(arrival_rate_fundamentalist=1.0,
                                   arrival_rate_chartist=1.0,
                                   arrival_rate_lp=8.0)
        env = MarketEnvironment(params, DrawStream(4))
        counts = self.count_classes(env)
        n = sum(counts.values())
        se = math.sqrt(0.8 * 0.2 / n)
        assert counts[LiquidityProvider] / n == pytest.approx(0.8, abs=4 * se)

    def test_event_budget_is_enforced_by_runner(self):
        params = EnvironmentParams(session_events=500)
        case = load_case(0, env=params, adv=1.0)
        art = run_episode(case, seed=1, record_series=True)
        assert len(art.mids) == 500


def small_params(**kw):
    base = dict(session_events=4000, profit_sample_every=500)
    base.update(kw)
    return EnvironmentParams(**base)


class TestEnvironmentProperties:
    def test_lp_only_market_has_no_drift(self):
        # quotes random-walk around the seed price without takers; the mean
        # drift over seeds is statistically indistinguishable from zero
        drifts = []
        params = small_params(n_fundamentalists=0, n_chartists=0)
        case = load_case(0, env=params, adv=1.0)
        for seed in range(200):
            art = run_episode(case, seed=seed, record_series=True)
            mids = art.mids[~np.isnan(art.mids)]
            drifts.append(mids[-1] - mids[0])
        t, p = stats.ttest_1samp(drifts, 0.0)
        assert p > 0.05, (t, p, np.mean(drifts))

    def test_all_high_values_produce_net_buying(self):
        # private values forced far above the opening price: order flow is
        # net buying in (at least) 90% of seeds
        buying = 0
        n_seeds = 20
        for seed in range(n_seeds):
            params = small_params(fundamental_value_drift=0.05,
                                  fundamental_value_sigma=0.001)
            case = load_case(0, env=params, adv=1.0)
            art = run_episode(case, seed=seed, record_series=True)
            buying += art.trade_signs.sum() > 0
        assert buying >= 0.9 * n_seeds

    def test_determinism_bit_identical_event_log(self):
        params = small_params()
        case = load_case(0, env=params, adv=1.0)
        a = run_episode(case, seed=11, record_events=True)
        b = run_episode(case, seed=11, record_events=True)
        assert a.events == b.events
        assert a.total_traded == b.total_traded

    def test_book_never_crossed_during_session(self):
        params = small_params()
        case = load_case(0, env=params, adv=1.0)
        art = run_episode(case, seed=5, record_events=True)
        for row in art.events:
            bb, ba = row[6], row[7]
            if bb is not None and ba is not None:
                assert bb < ba

    def test_ruin_replaces_takers(self):
        params = small_params(session_events=30_000,
                              taker_wealth_budget=50_000.0)
        case = load_case(0, env=params, adv=1.0)
        art = run_episode(case, seed=2)
        assert art.environment_deaths > 0

    def test_class_profit_series_has_all_classes(self):
        params = small_params()
        case = load_case(0, env=params, adv=1.0)
        art = run_episode(case, seed=3)
        assert len(art.profits) == 4000 // 500
        seq, f, c, lp, ex = art.profits[-1]
        assert seq == 4000
        assert ex == 0.0  # no execution agents in the base case
        # takers pay the spread; makers earn it
        assert lp > 0

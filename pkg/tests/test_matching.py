import random
from decimal import Decimal

import pytest
from hypothesis import given, settings, strategies as st

from marketsim.domain import Instrument, Order, OrderType, Side, UnsortedInput
from marketsim.matching import (
    BookEvent,
    EventKind,
    LatencyModel,
    MatchingEngine,
    apply_latency,
    book_top,
    check_stop_triggers,
    replay_events,
)
from marketsim.matching.stops import PendingStop, StopBook

from oracles import BruteForceMatcher

INS = Instrument("NVDA", tick_size="0.5")


def mk(oid, side, kind, qty, price=None, agent="A", t=0):
    kind = OrderType(kind)
    return Order(oid, agent, "NVDA", Side(side), kind, qty,
                 limit_price=price if kind is OrderType.LIMIT else None,
                 stop_price=price if kind is OrderType.STOP else None, submit_time=t)


def trades(res):
    return [(f.order_id, f.counter_order_id, f.price, f.quantity) for f in res.fills if f.liquidity.value == "taker"]


class TestSubmit:
    def test_marketable_buy_limit_fills_at_resting_price(self) -> None:
        eng = MatchingEngine(INS)
        eng.submit(mk(1, "sell", "limit", 5, "99.5", "S"), 0)
        res = eng.submit(mk(2, "buy", "limit", 5, "100"), 1)
        assert trades(res) == [(2, 1, Decimal("99.5"), 5)]
        assert len(eng.book) == 0

    def test_non_marketable_rests(self) -> None:
        eng = MatchingEngine(INS)
        eng.submit(mk(1, "sell", "limit", 5, "101", "S"), 0)
        res = eng.submit(mk(2, "buy", "limit", 5, "100"), 1)
        assert res.fills == []
        assert res.outcomes[0].status == "resting"
        assert eng.book.best_bid == INS.to_ticks("100")

    def test_market_walks_two_levels(self) -> None:
        eng = MatchingEngine(INS)
        eng.submit(mk(1, "sell", "limit", 4, "99.5", "S"), 0)
        eng.submit(mk(2, "sell", "limit", 8, "100", "S"), 0)
        res = eng.submit(mk(3, "buy", "market", 10), 1)
        assert trades(res) == [(3, 1, Decimal("99.5"), 4), (3, 2, Decimal("100"), 6)]
        assert res.outcomes[0].status == "filled"
        assert book_top(eng.book, 5).asks == ((Decimal("100"), 2),)

    def test_market_on_empty_side_rejected(self) -> None:
        eng = MatchingEngine(INS)
        res = eng.submit(mk(1, "buy", "market", 3), 0)
        out = res.outcomes[0]
        assert (out.status, out.rejected_qty, out.reason) == ("rejected", 3, "NO_LIQUIDITY")
        assert len(eng.book) == 0

    def test_market_partial_then_rejected_remainder(self) -> None:
        eng = MatchingEngine(INS)
        eng.submit(mk(1, "sell", "limit", 2, "99.5", "S"), 0)
        out = eng.submit(mk(2, "buy", "market", 5), 0).outcomes[0]
        assert (out.status, out.filled_qty, out.rejected_qty) == ("partial", 2, 3)

    def test_fifo_within_level(self) -> None:
        eng = MatchingEngine(INS)
        eng.submit(mk(1, "sell", "limit", 2, "100", "S1"), 0)
        eng.submit(mk(2, "sell", "limit", 2, "100", "S2"), 1)
        res = eng.submit(mk(3, "buy", "limit", 3, "100"), 2)
        assert trades(res) == [(3, 1, Decimal("100"), 2), (3, 2, Decimal("100"), 1)]

    def test_self_match_flagged(self) -> None:
        eng = MatchingEngine(INS)
        eng.submit(mk(1, "sell", "limit", 1, "100", "A"), 0)
        res = eng.submit(mk(2, "buy", "market", 1, agent="A"), 0)
        assert all(f.self_match for f in res.fills)

    def test_admit_hook_caps_market(self) -> None:
        eng = MatchingEngine(INS, admit=lambda order, qty: (2, "INSUFFICIENT_CASH"))
        eng.submit(mk(1, "sell", "limit", 10, "100", "S"), 0)
        out = eng.submit(mk(2, "buy", "market", 5), 0).outcomes[0]
        assert (out.filled_qty, out.rejected_qty, out.reason) == (2, 3, "INSUFFICIENT_CASH")


class TestMakerGuard:
    def test_short_maker_is_pulled(self) -> None:
        # the guard lets order 1 trade only 3 of its 5 lots
        guard = lambda maker, qty, px: (3, "INSUFFICIENT_CASH") if maker.order_id == 1 else (qty, None)
        eng = MatchingEngine(INS, maker_guard=guard)
        eng.submit(mk(1, "sell", "limit", 5, "100", "S"), 0)
        eng.submit(mk(2, "sell", "limit", 5, "100.5", "T"), 0)
        res = eng.submit(mk(3, "buy", "market", 6), 1)
        assert trades(res) == [(3, 1, Decimal("100"), 3), (3, 2, Decimal("100.5"), 3)]
        assert res.pulled == [(1, "INSUFFICIENT_CASH")]
        assert 1 not in eng.book and eng.book.get(2).remaining_qty == 2

    def test_zero_allowance_skips_maker(self) -> None:
        eng = MatchingEngine(INS, maker_guard=lambda m, q, p: (0, "NO_POSITION"))
        eng.submit(mk(1, "sell", "limit", 5, "100", "S"), 0)
        res = eng.submit(mk(2, "buy", "limit", 5, "100"), 1)
        assert res.fills == [] and res.pulled == [(1, "NO_POSITION")]
        assert eng.book.best_bid == INS.to_ticks("100")


class TestTakerGuard:
    def test_market_taker_stops_at_allowance(self) -> None:
        budget = {"left": 4}

        def guard(order, qty, px):
            return min(qty, budget["left"]), "INSUFFICIENT_CASH"

        def on_fill(f):
            if f.agent_id == "A":
                budget["left"] -= f.quantity

        eng = MatchingEngine(INS, taker_guard=guard, on_fill=on_fill)
        eng.submit(mk(1, "sell", "limit", 3, "100", ""), 0)
        eng.submit(mk(2, "sell", "limit", 3, "100.5", ""), 0)
        res = eng.submit(mk(3, "buy", "market", 6), 1)
        assert trades(res) == [(3, 1, Decimal("100"), 3), (3, 2, Decimal("100.5"), 1)]
        out = res.outcomes[0]
        assert (out.status, out.filled_qty, out.rejected_qty, out.reason) == ("partial", 4, 2, "INSUFFICIENT_CASH")
        assert eng.book.get(2).remaining_qty == 2

    def test_limit_remainder_rejected_not_rested(self) -> None:
        eng = MatchingEngine(INS, taker_guard=lambda o, q, p: (0, "NO_POSITION"))
        eng.submit(mk(1, "buy", "limit", 5, "100", ""), 0)
        out = eng.submit(mk(2, "sell", "limit", 5, "99.5"), 1).outcomes[0]
        assert (out.status, out.rejected_qty, out.reason) == ("rejected", 5, "NO_POSITION")
        assert 2 not in eng.book and eng.book.get(1).remaining_qty == 5

    def test_unguarded_exogenous_taker(self) -> None:
        seen = []
        eng = MatchingEngine(INS, taker_guard=lambda o, q, p: (0, "X"), on_fill=seen.append)
        eng.submit(mk(1, "buy", "limit", 5, "100", "A"), 0)
        res = eng.submit(mk(2, "sell", "market", 2, agent=""), 1)
        assert seen == res.fills and len(seen) == 2


class TestCancel:
    def test_cancel_resting(self) -> None:
        eng = MatchingEngine(INS)
        for i in (1, 2, 3):
            eng.submit(mk(i, "buy", "limit", 1, "100"), 0)
        assert eng.cancel(2)
        assert [o.order_id for _, q in eng.book.levels(Side.BUY) for o in q] == [1, 3]

    def test_cancel_unknown(self) -> None:
        assert not MatchingEngine(INS).cancel(99)

    def test_cancel_after_full_fill(self) -> None:
        eng = MatchingEngine(INS)
        eng.submit(mk(1, "sell", "limit", 1, "100", "S"), 0)
        eng.submit(mk(2, "buy", "market", 1), 0)
        assert not eng.cancel(1)

    def test_cancel_pending_stop(self) -> None:
        eng = MatchingEngine(INS)
        eng.submit(mk(1, "sell", "stop", 1, "95"), 0)
        assert eng.cancel(1)
        assert len(eng.stops) == 0


class TestStops:
    def _stop(self, oid, side, px, t):
        return PendingStop(mk(oid, side, "stop", 1, px), INS.to_ticks(px), t, oid)

    def test_sell_stop_triggers_below(self) -> None:
        book = StopBook()
        book.add(self._stop(1, "sell", "95", 0))
        assert [s.order.order_id for s in check_stop_triggers(book, INS.to_ticks("94.5"))] == [1]

    def test_sell_stop_dormant_above(self) -> None:
        book = StopBook()
        book.add(self._stop(1, "sell", "95", 0))
        assert check_stop_triggers(book, INS.to_ticks("95.5")) == []
        assert len(book) == 1

    def test_equal_stops_arrival_order(self) -> None:
        book = StopBook()
        book.add(self._stop(2, "sell", "95", 20))
        book.add(self._stop(1, "sell", "95", 10))
        fired = check_stop_triggers(book, INS.to_ticks("95"))
        assert [s.order.order_id for s in fired] == [1, 2]

    def test_priority_toward_trigger(self) -> None:
        book = StopBook()
        book.add(self._stop(1, "sell", "90", 0))
        book.add(self._stop(2, "sell", "95", 5))
        book.add(self._stop(3, "buy", "80", 0))
        fired = check_stop_triggers(book, INS.to_ticks("85"))
        assert [s.order.order_id for s in fired] == [2, 1, 3]

    def test_stop_becomes_market_in_engine(self) -> None:
        eng = MatchingEngine(INS)
        eng.submit(mk(1, "buy", "limit", 5, "94"), 0)
        eng.submit(mk(2, "buy", "limit", 1, "95", "B"), 0)
        eng.submit(mk(3, "sell", "stop", 3, "95", "C"), 0)
        assert eng.book.best_bid == INS.to_ticks("95")
        res = eng.submit(mk(4, "sell", "market", 1, agent="D"), 5)
        act = [o for o in res.outcomes if o.activated]
        assert len(act) == 1 and act[0].order.order_id == 3
        assert trades(res)[-1] == (3, 1, Decimal("94"), 3)

    def test_stops_invisible_to_depth(self) -> None:
        eng = MatchingEngine(INS)
        eng.submit(mk(1, "sell", "stop", 3, "95"), 0)
        snap = book_top(eng.book, 5)
        assert snap.bids == () and snap.asks == ()


class TestLatency:
    def test_zero(self) -> None:
        o = mk(1, "buy", "market", 1, t=1000)
        assert apply_latency(o, LatencyModel()) == 1000

    def test_fixed(self) -> None:
        o = mk(1, "buy", "market", 1, t=1000)
        assert apply_latency(o, LatencyModel("fixed", 250)) == 1250

    def test_jitter_deterministic(self) -> None:
        m = LatencyModel("uniform_jitter", 100, 50, seed=7)
        arrivals = [apply_latency(mk(i, "buy", "market", 1, t=1000), m) for i in range(200)]
        again = [apply_latency(mk(i, "buy", "market", 1, t=1000), m) for i in range(200)]
        assert arrivals == again
        assert all(1100 <= a <= 1150 for a in arrivals)
        assert len(set(arrivals)) > 10

    def test_seed_changes_draws(self) -> None:
        a = [LatencyModel("uniform_jitter", 0, 1000, seed=1).delay("A", i) for i in range(20)]
        b = [LatencyModel("uniform_jitter", 0, 1000, seed=2).delay("A", i) for i in range(20)]
        assert a != b


class TestReplay:
    def test_add_then_agent_market(self) -> None:
        eng = MatchingEngine(INS)
        events = [BookEvent(100, "add", 1, "sell", "99.5", 5)]
        steps = list(replay_events(eng, events, [(100, mk(1 << 40, "buy", "market", 5, agent="A1", t=100))]))
        assert isinstance(steps[0].item, BookEvent)
        agent_fills = [f for f in steps[1].fills if f.agent_id == "A1"]
        assert [(f.price, f.quantity) for f in agent_fills] == [(Decimal("99.5"), 5)]

    def test_unknown_cancel_is_warning(self) -> None:
        eng = MatchingEngine(INS)
        steps = list(replay_events(eng, [BookEvent(1, "add", 1, "buy", "99", 2),
                                         BookEvent(2, "cancel", 77, "buy", "99", 2)]))
        assert steps[1].warning
        assert book_top(eng.book, 1).bids == ((Decimal("99"), 2),)

    def test_unsorted(self) -> None:
        eng = MatchingEngine(INS)
        with pytest.raises(UnsortedInput):
            list(replay_events(eng, [BookEvent(5, "add", 1, "buy", "99", 1), BookEvent(4, "add", 2, "buy", "99", 1)]))

    def test_pure_replay_equals_fold(self) -> None:
        rng = random.Random(3)
        events, live, t = [], {}, 0
        for oid in range(1, 400):
            t += rng.randint(0, 3)
            if live and rng.random() < 0.4:
                victim = rng.choice(sorted(live))
                side, px, qty = live[victim]
                if rng.random() < 0.5:
                    events.append(BookEvent(t, "cancel", victim, side, px, 0))
                    del live[victim]
                else:
                    take = rng.randint(1, qty)
                    events.append(BookEvent(t, "execute", victim, side, px, take))
                    if take == qty:
                        del live[victim]
                    else:
                        live[victim] = (side, px, qty - take)
            else:
                # non-crossing adds: bids below 100, asks above
                side = rng.choice(["buy", "sell"])
                px = Decimal(rng.randint(180, 199)) / 2 if side == "buy" else Decimal(rng.randint(201, 220)) / 2
                qty = rng.randint(1, 9)
                events.append(BookEvent(t, "add", oid, side, px, qty))
                live[oid] = (side, px, qty)
        eng = MatchingEngine(INS)
        for _ in replay_events(eng, events):
            assert not eng.book.is_crossed()
        expected = {Side.BUY: {}, Side.SELL: {}}
        for side, px, qty in live.values():
            expected[Side(side)][px] = expected[Side(side)].get(px, 0) + qty
        snap = eng.book.snapshot()
        assert dict(snap.bids) == expected[Side.BUY]
        assert dict(snap.asks) == expected[Side.SELL]

    def test_equal_timestamp_exogenous_first(self) -> None:
        eng = MatchingEngine(INS)
        agent = mk(1 << 40, "buy", "limit", 1, "100", "A1", t=50)
        steps = list(replay_events(eng, [BookEvent(50, "add", 1, "sell", "100", 1)], [(50, agent)]))
        assert isinstance(steps[0].item, BookEvent)
        assert steps[1].fills[0].counter_order_id == 1


class TestBookTop:
    def test_empty(self) -> None:
        snap = book_top(MatchingEngine(INS).book, 3)
        assert snap.bids == () and snap.asks == ()

    def test_depth_one(self) -> None:
        eng = MatchingEngine(INS)
        eng.submit(mk(1, "buy", "limit", 3, "100"), 0)
        eng.submit(mk(2, "buy", "limit", 7, "99"), 0)
        assert book_top(eng.book, 1).bids == ((Decimal("100"), 3),)

    def test_level_sum(self) -> None:
        eng = MatchingEngine(INS)
        eng.submit(mk(1, "sell", "limit", 2, "99.5"), 0)
        eng.submit(mk(2, "sell", "limit", 3, "99.5"), 0)
        assert book_top(eng.book, 2).asks == ((Decimal("99.5"), 5),)


def random_stream(rng, n):
    ops, live = [], []
    for i in range(1, n + 1):
        r = rng.random()
        side = rng.choice(["buy", "sell"])
        qty = rng.randint(1, 10)
        if r < 0.45:
            ops.append(("limit", i, f"A{rng.randint(1, 4)}", side, rng.randint(95, 105), qty))
            live.append(i)
        elif r < 0.65:
            ops.append(("market", i, f"A{rng.randint(1, 4)}", side, None, qty))
        elif r < 0.82:
            ops.append(("stop", i, f"A{rng.randint(1, 4)}", side, rng.randint(95, 105), qty))
            live.append(i)
        elif live:
            ops.append(("cancel", rng.choice(live)))
        else:
            ops.append(("cancel", 10_000 + i))
    return ops


def run_engine(ops, check=None):
    eng = MatchingEngine(Instrument("NVDA", tick_size="1"))
    fills = []
    for t, op in enumerate(ops):
        if op[0] == "cancel":
            eng.cancel(op[1])
        else:
            kind, oid, agent, side, px, qty = op
            res = eng.submit(mk(oid, side, kind, qty, None if px is None else str(px), agent, t), t)
            fills.extend((f.order_id, f.counter_order_id, int(f.price), f.quantity, f.liquidity.value, f.side.value)
                         for f in res.fills)
        if check:
            check(eng)
    return eng, fills


def run_oracle(ops):
    bf = BruteForceMatcher()
    for t, op in enumerate(ops):
        bf.apply(op, t)
    return bf


class TestOracleEquivalence:
    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 50))
    def test_against_bruteforce(self, seed, n) -> None:
        ops = random_stream(random.Random(seed), n)
        eng, fills = run_engine(ops, lambda e: not e.book.is_crossed() or pytest.fail("crossed"))
        bf = run_oracle(ops)
        assert fills == bf.fills
        assert eng.book.best_bid == bf.best("buy")
        assert eng.book.best_ask == bf.best("sell")

    def test_conservation_and_maker_price(self) -> None:
        rng = random.Random(11)
        for _ in range(200):
            ops = random_stream(rng, 50)
            _, fills = run_engine(ops)
            buys = sum(f[3] for f in fills if f[5] == "buy")
            sells = sum(f[3] for f in fills if f[5] == "sell")
            assert buys == sells
            limits = {op[1]: op[4] for op in ops if op[0] == "limit"}
            for f in fills:
                if f[4] == "maker":
                    assert f[2] == limits[f[0]]

    def test_fill_log_deterministic(self) -> None:
        ops = random_stream(random.Random(5), 50)
        assert run_engine(ops)[1] == run_engine(ops)[1]

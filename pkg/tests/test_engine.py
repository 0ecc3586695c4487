import sys
import time
from decimal import Decimal
from pathlib import Path

import pytest

from marketsim.agents import Action, ActionRequest, PortfolioState, apply_fill, register_strategy
from marketsim.agents.strategies import _REGISTRY, CancelRequest, Strategy
from marketsim.bus import ENGINE_INBOX, Envelope, MessageKind
from marketsim.config import loads_config
from marketsim.domain import OrderType, Side
from marketsim.engine import DataError, Simulation, run_simulation
from marketsim.evaluator.report import build_report, canonical_bytes, trade_log_bytes

from conftest import CONFIGS, FIXTURES

D = Decimal
FAKE = str(Path(__file__).with_name("fake_provider.py"))

CANDLE = """\
seed = 1
mode = "candle_level"
instrument = "NVDA"

[data.bars]
adapter = "csv_ohlcv"
path = "bars_small.csv"
"""

ORDERS = """\
seed = 1
mode = "order_level"
instrument = "TEST"

[data.events]
adapter = "native_events"
path = "events_native.csv"

[session]
start = 0
end = 10000
action_interval = "1s"
"""


def config(head: str, agents: str, extra: str = ""):
    return loads_config(head + extra + agents, FIXTURES)


class Recorder(Strategy):
    """Collects execution reports per agent for assertions."""

    reports = {}

    def __init__(self) -> None:
        self.seen = []

    def on_execution(self, report: dict) -> None:
        Recorder.reports.setdefault(self.agent_key, []).append(report)


class FarLimitThenCancel(Recorder):
    """Tick 1: a buy limit far below the market. Tick 2: cancel it."""

    agent_key = "far"

    def __init__(self) -> None:
        super().__init__()
        self.t = 0
        self.oid = None

    def on_execution(self, report: dict) -> None:
        super().on_execution(report)
        if report["status"] == "accepted":
            self.oid = report["order_id"]

    def decide(self, ctx):
        self.t += 1
        if self.t == 1:
            return [ActionRequest(Action.BUY, OrderType.LIMIT, 10, D("50.00"), "far below")]
        if self.t == 2 and self.oid is not None:
            return [CancelRequest(self.oid)]
        return []


class FarLimitOnce(Recorder):
    agent_key = "expire"

    def __init__(self) -> None:
        super().__init__()
        self.done = False

    def decide(self, ctx):
        if self.done:
            return []
        self.done = True
        return [ActionRequest(Action.BUY, OrderType.LIMIT, 10, D("50.00"), "never fills")]


class SlowFirstTick(Strategy):
    def __init__(self) -> None:
        self.t = 0

    def decide(self, ctx):
        self.t += 1
        if self.t == 1:
            time.sleep(0.6)
            return [ActionRequest(Action.BUY, OrderType.MARKET, 1, None, "late")]
        return []


for _name, _cls in [("test_far_cancel", FarLimitThenCancel), ("test_far_once", FarLimitOnce),
                    ("test_slow", SlowFirstTick)]:
    if _name not in _REGISTRY:
        register_strategy(_name, _cls)


def replay_account(trade_log, cash):
    p = PortfolioState(D(cash))
    for e in trade_log:
        p = apply_fill(p, Side(e["side"]), e["quantity"], D(e["price"]))
    return p


class TestCandleMode:
    def test_buy_and_hold_roi_is_price_relative(self) -> None:
        cfg = config(CANDLE, '[[agents]]\nid = "h"\nstrategy = "buy_and_hold"\ninitial_cash = "10100"\n')
        out = run_simulation(cfg)
        # decides after bar 1 closes at 101 and fills at bar 2's open (101); last close 110
        assert [(e["price"], e["quantity"]) for e in out.trade_log] == [("101", 100)]
        rec = out.recorders["h"]
        assert rec.equity[0].portfolio_value == D(10100)
        assert rec.equity[-1].portfolio_value == D(11000)
        report = build_report(out.meta, out.recorders, out.metrics_config)
        assert report["agents"]["h"]["metrics"]["ROI"] == pytest.approx(110 / 101 - 1, rel=1e-12)

    def test_one_tick_per_bar_except_last(self) -> None:
        out = run_simulation(config(CANDLE, '[[agents]]\nstrategy = "buy_and_hold"\n'))
        assert out.ticks == 4
        assert [a["sim_time"] for a in out.audit] == [c.bar_end for c in out.candles[:-1]]
        assert len(out.recorders["buy_and_hold"].equity) == 1 + len(out.candles)

    def test_action_interval_multiple_of_bars(self) -> None:
        out = run_simulation(config(CANDLE, '[[agents]]\nstrategy = "buy_and_hold"\n',
                                    '[session]\naction_interval = "2d"\n'))
        assert out.ticks == 2

    def test_action_interval_must_divide(self) -> None:
        with pytest.raises(Exception) as e:
            run_simulation(config(CANDLE, '[[agents]]\nstrategy = "buy_and_hold"\n',
                                  '[session]\naction_interval = "36h"\n'))
        assert "multiple" in str(e.value)

    def test_cancel_releases_hold(self) -> None:
        Recorder.reports.clear()
        out = run_simulation(config(CANDLE, '[[agents]]\nid = "far"\nstrategy = "test_far_cancel"\n'
                                            'initial_cash = "1000"\n', '[session]\ncalendar = "continuous"\n'))
        statuses = [r["status"] for r in Recorder.reports["far"]]
        assert statuses == ["accepted", "canceled"]
        assert out.trade_log == []
        assert out.recorders["far"].equity[-1].portfolio_value == D(1000)

    def test_per_bar_session_expires_orders(self) -> None:
        Recorder.reports.clear()
        run_simulation(config(CANDLE, '[[agents]]\nid = "expire"\nstrategy = "test_far_once"\n'))
        reps = Recorder.reports["expire"]
        assert [r["status"] for r in reps] == ["accepted", "session_expired"]

    def test_continuous_session_keeps_orders_until_end(self) -> None:
        Recorder.reports.clear()
        run_simulation(config(CANDLE, '[[agents]]\nid = "expire"\nstrategy = "test_far_once"\n',
                              '[session]\ncalendar = "continuous"\n'))
        reps = Recorder.reports["expire"]
        assert reps[-1]["status"] == "canceled" and reps[-1]["reason"] == "SESSION_END"

    def test_insufficient_cash_rejected(self) -> None:
        Recorder.reports.clear()
        run_simulation(config(CANDLE, '[[agents]]\nid = "far"\nstrategy = "test_far_cancel"\n'
                                      'initial_cash = "10"\n'))
        # 10 x 50.00 > 10 cash: the runtime refuses locally, so nothing reaches the engine
        assert "far" not in Recorder.reports

    def test_random_agents_keep_books_straight(self) -> None:
        cfg = config(CANDLE.replace("bars_small.csv", "daily_1200.csv").replace('"NVDA"', '"SYN"'),
                     '[[agents]]\nid = "r"\nstrategy = "random"\ncount = 5\ninitial_cash = "5000"\n'
                     'params = { trade_prob = 0.9, max_qty = 50 }\n')
        out = run_simulation(cfg)
        assert out.trade_log
        for aid, rec in out.recorders.items():
            assert rec.mismatches == 0
            mine = [e for e in out.trade_log if e["agent_id"] == aid]
            p = replay_account(mine, "5000")
            assert p.cash >= 0 and p.long_qty >= 0 and p.short_qty >= 0
            assert p.realized_pnl == rec.ledger.realized_pnl

    def test_news_pushed_without_lookahead(self) -> None:
        cfg = config(CANDLE + '[data.news]\nadapter = "news_jsonl"\npath = "news.jsonl"\n',
                     '[[agents]]\nstrategy = "buy_and_hold"\n')
        out = run_simulation(cfg, record_transcript=True)
        pushes = [d for d in out.transcript if d.kind == "ExternalData"]
        assert pushes
        assert all(d.payload_time <= d.clock for d in pushes)

    def test_missing_bars_file(self) -> None:
        cfg = config(CANDLE.replace("bars_small.csv", "nope.csv"), '[[agents]]\nstrategy = "buy_and_hold"\n')
        with pytest.raises(DataError) as e:
            run_simulation(cfg)
        assert e.value.code == "MISSING_FILE"


class TestOrderMode:
    def test_replay_fills_match_hand_derivation(self) -> None:
        cfg = config(ORDERS, '[[agents]]\nstrategy = "random"\nparams = { trade_prob = 0.0 }\n')
        out = run_simulation(cfg)
        got = [(f.order_id, f.counter_order_id, f.price, f.quantity, f.liquidity.value) for f in out.all_fills]
        # execute 4 of #1; buy #6 (8) takes 6 from #1 then 2 from #5; buy #8 (12) takes 3 from #5, 9 from #7
        assert got == [
            (1, None, D("100.5"), 4, "maker"),
            (6, 1, D("100.5"), 6, "taker"), (1, 6, D("100.5"), 6, "maker"),
            (6, 5, D("100.5"), 2, "taker"), (5, 6, D("100.5"), 2, "maker"),
            (8, 5, D("100.5"), 3, "taker"), (5, 8, D("100.5"), 3, "maker"),
            (8, 7, D("101.5"), 9, "taker"), (7, 8, D("101.5"), 9, "maker"),
        ]
        assert out.trade_log == []
        assert [c.bar_start for c in out.candles] == [4000, 5000, 8000]
        assert out.candles[-1].high == 101.5 and out.candles[-1].volume == 12

    def test_agents_trade_against_book(self) -> None:
        cfg = config(ORDERS, '[[agents]]\nid = "r"\nstrategy = "random"\ncount = 3\ninitial_cash = "5000"\n'
                             'params = { trade_prob = 1.0, max_qty = 5 }\n', '[latency]\nbase_ms = 5\n')
        out = run_simulation(cfg)
        for aid, rec in out.recorders.items():
            assert rec.mismatches == 0
            p = replay_account([e for e in out.trade_log if e["agent_id"] == aid], "5000")
            assert p.cash >= 0
        times = [e["exec_time"] for e in out.trade_log]
        assert times == sorted(times)

    def test_latency_delays_arrival(self) -> None:
        out = run_simulation(config(ORDERS, '[[agents]]\nid = "r"\nstrategy = "random"\n'
                                            'params = { trade_prob = 1.0 }\n', '[latency]\nbase_ms = 250\n'))
        for e in out.trade_log:
            assert e["exec_time"] % 1000 >= 250 or e["liquidity"] == "maker"


class TestDeterminism:
    def _bytes(self, cfg, **kw):
        out = run_simulation(cfg, **kw)
        return trade_log_bytes(out.trade_log), canonical_bytes(build_report(out.meta, out.recorders,
                                                                            out.metrics_config))

    def test_same_seed_same_bytes(self) -> None:
        cfg = config(ORDERS, '[[agents]]\nid = "r"\nstrategy = "random"\ncount = 4\n'
                             'params = { trade_prob = 1.0 }\n', '[latency]\nmode = "uniform_jitter"\njitter_ms = 300\n')
        assert self._bytes(cfg) == self._bytes(cfg)

    def test_different_seed_diverges(self) -> None:
        agents = ('[[agents]]\nid = "r"\nstrategy = "random"\ncount = 4\ninitial_cash = "5000"\n'
                  'params = { trade_prob = 0.9 }\n')
        head = CANDLE.replace("bars_small.csv", "daily_1200.csv").replace('"NVDA"', '"SYN"')
        a = self._bytes(config(head, agents))
        b = self._bytes(config(head.replace("seed = 1", "seed = 2"), agents))
        assert a[0] != b[0]

    def test_tcp_matches_inprocess_in_order_mode(self) -> None:
        cfg = config(ORDERS, '[[agents]]\nid = "r"\nstrategy = "random"\ncount = 3\n'
                             'params = { trade_prob = 1.0 }\n', '[latency]\nbase_ms = 20\n')
        assert self._bytes(cfg) == self._bytes(cfg, transport="tcp")


class TestLockstep:
    def test_missed_deadline_is_audited_and_late_orders_dropped(self) -> None:
        cfg = config(CANDLE, '[[agents]]\nid = "slow"\nstrategy = "test_slow"\n'
                             '[[agents]]\nid = "hold"\nstrategy = "buy_and_hold"\n',
                     '[session]\ndecision_timeout = 0.2\n')
        out = run_simulation(cfg, transport="tcp")
        first = [a for a in out.audit if a["agent_id"] == "slow"][0]
        assert first.get("missed") is True
        assert out.missed_acks >= 1  # the sleeper can overrun the next deadline too
        assert out.dropped_late >= 1
        assert all(e["agent_id"] == "hold" for e in out.trade_log)

    def test_spoofed_order_id_rejected(self) -> None:
        cfg = config(CANDLE, '[[agents]]\nid = "a"\nstrategy = "buy_and_hold"\n'
                             '[[agents]]\nid = "b"\nstrategy = "buy_and_hold"\n')
        sim = Simulation(cfg)
        sim._prepare_candles()
        sim.last_price = D(100)
        # "a" submits with an id from "b"'s id space
        order = {"order_id": (2 << 40) + 1, "agent_id": "a", "instrument": "NVDA", "side": "buy",
                 "order_type": "market", "quantity": 1, "limit_price": None, "stop_price": None,
                 "submit_time": 0, "explanation": "", "action": "BUY"}
        sim._on_submit(Envelope(ENGINE_INBOX, "a", 1, 0, MessageKind.ORDER_SUBMIT, {"order": order}))
        assert sim._reports["a"][0]["reason"] == "BAD_ORDER_ID"

    def test_external_provider_end_to_end(self) -> None:
        cmd = [sys.executable, FAKE, "random", "3"]
        cfg = config(CANDLE.replace("bars_small.csv", "daily_1200.csv").replace('"NVDA"', '"SYN"'),
                     f'[[agents]]\nid = "ext"\nstrategy = "external"\ninitial_cash = "20000"\n'
                     f'params = {{ command = {cmd!r}, timeout = 10.0 }}\n'.replace("'", '"'),
                     '[session]\nend = "2020-04-01"\n')
        out = run_simulation(cfg)
        assert sum(len(a["actions"]) for a in out.audit) > 50
        p = replay_account(out.trade_log, "20000")
        assert p.cash >= 0 and p.long_qty >= 0 and p.short_qty >= 0

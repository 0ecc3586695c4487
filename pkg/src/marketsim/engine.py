"""The simulation engine: owns the clock, the market and every account.

One tick of the loop advances the market (a bar in candle mode, an action
interval of replayed events in order mode), publishes what happened, then
sends a TimeTick and waits until every agent has acknowledged it (or its
decision deadline passed). Agent orders are processed in
``(sim_time, agent_id, seq)`` order, so the outcome does not depend on how
agents were scheduled or which transport carried their messages.
"""

from __future__ import annotations

import heapq
import logging
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Dict, List, Optional, Tuple

from marketsim.agents.portfolio import Account, Action, ActionRequest
from marketsim.agents.runtime import ORDER_ID_SHIFT, AgentRuntime, runtime_from_config
from marketsim.agents.strategies import make_strategy
from marketsim.bus import (
    CONTROL,
    ENGINE_ID,
    ENGINE_INBOX,
    Broker,
    Delivery,
    Envelope,
    LocalClient,
    MessageKind,
    exec_topic,
    external_topic,
    market_topic,
)
from marketsim.candles import PendingOrders, SessionClock, advance_session, resolve_bar
from marketsim.config import ConfigError, RunConfig
from marketsim.data import EventLoad, ExternalStore, OhlcvSeries, load_with
from marketsim.domain import (
    Candle,
    Fill,
    Liquidity,
    Order,
    OrderType,
    SimError,
    SimTime,
    aggregate_fills_to_candle,
    decimal_str,
    validate_order,
)
from marketsim.evaluator.ledger import AgentRecorder
from marketsim.evaluator.metrics import MetricsConfig
from marketsim.evaluator.report import trade_log_entry
from marketsim.indicators import IndicatorEngine
from marketsim.matching.matcher import MatchingEngine, SubmitResult
from marketsim.matching.replay import apply_event

log = logging.getLogger(__name__)

DATA_ERRORS = {"MISSING_FILE", "PARSE_ERROR", "INVALID_BAR", "UNKNOWN_DIALECT", "NO_DATA", "UNSORTED_EVENTS",
               "UNSORTED_INPUT"}
BOOK_DEPTH = 5


class DataError(SimError):
    code = "DATA_ERROR"


@dataclass
class MarketData:
    bars: Optional[OhlcvSeries] = None
    events: Optional[EventLoad] = None
    store: ExternalStore = field(default_factory=ExternalStore)


def load_market_data(cfg: RunConfig) -> MarketData:
    """Load every configured data stream up front; loaded data is never mutated."""
    out = MarketData()
    news, fundamentals = [], []
    for name, src in cfg.data.items():
        path = cfg.resolve(src.path)
        kw = {}
        if name == "bars":
            kw["instrument"] = cfg.instrument.symbol
        if src.date is not None:
            kw["date"] = src.date
        try:
            loaded = load_with(src.adapter, path, **kw)
        except SimError as exc:
            err = DataError(f"{name} ({path}): {exc}")
            err.code, err.line = exc.code, exc.line
            raise err from None
        if name == "bars":
            out.bars = loaded
        elif name == "events":
            out.events = loaded
        elif name == "news":
            news = loaded
        else:
            fundamentals = loaded
    out.store = ExternalStore(news, fundamentals)
    return out


@dataclass
class RunOutputs:
    meta: dict
    candles: List[Candle]
    recorders: Dict[str, AgentRecorder]
    trade_log: List[dict]
    audit: List[dict]
    all_fills: List[Fill]
    transcript: List[Delivery]
    ticks: int = 0
    messages: int = 0
    wall_seconds: float = 0.0
    missed_acks: int = 0
    dropped_late: int = 0
    deliveries: int = 0

    @property
    def metrics_config(self) -> MetricsConfig:
        m = self.meta["metrics"]
        return MetricsConfig(m["risk_free_rate"], m["periods_per_year"])


@dataclass
class _Live:
    order: Order
    remaining: int
    arrived: bool = True


class Simulation:
    """One run of a :class:`RunConfig`. Construct, then call :meth:`run` once."""

    def __init__(self, cfg: RunConfig, data: Optional[MarketData] = None, transport: Optional[str] = None,
                 processes: Optional[bool] = None, record_transcript: bool = False,
                 connect_timeout: float = 60.0):
        self.cfg = cfg
        self.data = data if data is not None else load_market_data(cfg)
        self.transport = transport or cfg.transport
        self.processes = cfg.processes if processes is None else processes
        self.connect_timeout = connect_timeout
        self.ins = cfg.instrument
        self.symbol = cfg.instrument.symbol
        self.roster = cfg.roster()
        self.now: SimTime = 0
        self.broker = Broker(clock=lambda: self.now, record=record_transcript)
        self.client = LocalClient(self.broker, ENGINE_ID)
        self.accounts = {a.agent_id: Account(a.agent_id, a.initial_cash) for a in self.roster}
        self.agent_nos = {a.agent_id: a.agent_no for a in self.roster}
        self.recorders: Dict[str, AgentRecorder] = {}
        self.trade_log: List[dict] = []
        self.audit: List[dict] = []
        self.all_fills: List[Fill] = []
        self.live: Dict[int, _Live] = {}
        self.used_ids: set = set()
        self.last_price: Optional[Decimal] = None
        self._reports: Dict[str, List[dict]] = {}
        self._touched: Dict[str, None] = {}
        self._cv = threading.Condition()
        self._inbox: List[Envelope] = []
        self._acks: Dict[str, dict] = {}
        self._tick = 0
        self._tick_time: SimTime = 0
        self.missed_acks = 0
        self.dropped_late = 0
        self.messages = 0
        self._threads: List[threading.Thread] = []
        self._procs: List[subprocess.Popen] = []
        self._server = None
        self._runtimes: List[AgentRuntime] = []

    # -- bus plumbing ----------------------------------------------------

    def _on_inbox(self, env: Envelope) -> None:
        with self._cv:
            self.messages += 1
            if env.sim_time < self._tick_time or env.sender not in self.accounts:
                self.dropped_late += 1
                return
            if env.kind is MessageKind.TICK_ACK:
                if env.payload.get("tick") == self._tick:
                    self._acks[env.sender] = env.payload.get("record") or {}
                    if len(self._acks) == len(self.roster):
                        self._cv.notify_all()
            else:
                self._inbox.append(env)

    def _on_data_request(self, env: Envelope) -> dict:
        q = env.payload
        items = self.data.store.query(q.get("symbol", self.symbol), q.get("kind", "news"),
                                      int(q.get("start", 0)), int(q.get("end", self.now)), self.now)
        return {"items": items, "kind": q.get("kind", "news"), "symbol": q.get("symbol", self.symbol)}

    def _publish(self, topic: str, kind: MessageKind, payload: dict) -> None:
        self.client.publish(topic, kind, payload, self.now)

    def _agent_config(self, a) -> dict:
        return {"agent_id": a.agent_id, "agent_no": a.agent_no, "strategy": a.strategy, "params": a.params,
                "seed": a.seed, "instrument": self.symbol, "initial_cash": a.initial_cash,
                "window": list(self.window), "action_interval": self.interval}

    def _start_agents(self) -> None:
        self.client.subscribe(ENGINE_INBOX, self._on_inbox)
        self.broker.register_responder(MessageKind.DATA_REQUEST, self._on_data_request)
        if self.transport == "inprocess":
            for a in self.roster:
                strat = make_strategy(a.strategy, a.params, a.seed)
                rt = AgentRuntime(a.agent_id, a.agent_no, strat, LocalClient(self.broker, a.agent_id), self.symbol,
                                  a.initial_cash, self.window, self.interval)
                rt.start()
                self._runtimes.append(rt)
            return
        from marketsim.bus.tcp import BusServer, TcpClient

        configs = {a.agent_id: self._agent_config(a) for a in self.roster}
        self._server = server = BusServer(self.broker, agent_configs=configs).start()
        if self.processes:
            for a in self.roster:
                cmd = [sys.executable, "-m", "marketsim.agents", "--host", server.host,
                       "--port", str(server.port), "--agent-id", a.agent_id]
                self._procs.append(subprocess.Popen(cmd))
        else:
            def run_agent(aid: str) -> None:
                client = TcpClient(server.host, server.port, aid)
                rt = runtime_from_config(client, client.config)
                rt.start()
                while not rt.finished.is_set() and not client.closed.is_set():
                    rt.finished.wait(0.1)
                client.close()

            for a in self.roster:
                t = threading.Thread(target=run_agent, args=(a.agent_id,), name=f"agent-{a.agent_id}", daemon=True)
                t.start()
                self._threads.append(t)
        if not server.wait_ready([a.agent_id for a in self.roster], self.connect_timeout):
            missing = sorted({a.agent_id for a in self.roster} - server.ready_ids)
            raise SimError(f"agents did not connect in time: {missing[:5]}", code="AGENT_START")

    def _stop_agents(self) -> None:
        if self._server is not None:
            deadline = time.monotonic() + 10
            for t in self._threads:
                t.join(timeout=max(0.0, deadline - time.monotonic()))
            for p in self._procs:
                try:
                    p.wait(timeout=max(0.1, deadline - time.monotonic()))
                except subprocess.TimeoutExpired:
                    p.kill()
            self._server.close()
        self.broker.close()

    # -- lockstep --------------------------------------------------------

    def _barrier(self, market_open: bool) -> None:
        """Send a TimeTick, wait for every agent, then apply their orders in canonical order."""
        with self._cv:
            self._tick += 1
            self._tick_time = self.now
            self._acks = {}
        self._publish(CONTROL, MessageKind.TIME_TICK,
                      {"sim_time": self.now, "market_open": market_open, "tick": self._tick})
        with self._cv:
            done = self._cv.wait_for(lambda: len(self._acks) == len(self.roster), self.cfg.session.decision_timeout)
            inbox, self._inbox = self._inbox, []
            acks = dict(self._acks)
            self._tick_time = self.now + 1  # anything still in flight for this tick is late from here on
        if not done:
            log.warning("tick %d: %d agent(s) missed the decision deadline", self._tick,
                        len(self.roster) - len(acks))
        inbox.sort(key=lambda e: (e.sim_time, e.sender, e.seq))
        for env in inbox:
            if env.sim_time != self.now:
                self.dropped_late += 1
                continue
            if env.kind is MessageKind.ORDER_SUBMIT:
                self._on_submit(env)
            elif env.kind is MessageKind.ORDER_CANCEL:
                self._on_cancel(env)
        for a in self.roster:
            rec = acks.get(a.agent_id)
            if rec is None:
                self.missed_acks += 1
                rec = {"actions": [], "explanation": "", "missed": True}
            entry = {"agent_id": a.agent_id, "sim_time": self.now, "tick": self._tick}
            entry.update(rec)
            self.audit.append(entry)
        self._flush()

    # -- order intake ------------------------------------------------------

    def _report(self, agent_id: str, order_id: int, status: str, reason: Optional[str] = None,
                remaining: int = 0, fills: Tuple[Fill, ...] = ()) -> None:
        self._reports.setdefault(agent_id, []).append(
            {"order_id": order_id, "status": status, "reason": reason, "remaining": remaining,
             "fills": [f.to_dict() for f in fills], "sim_time": self.now})

    def _flush(self) -> None:
        """Send queued execution reports, then one PortfolioUpdate per touched agent."""
        for aid in sorted(self._reports):
            for rep in self._reports[aid]:
                self._publish(exec_topic(aid), MessageKind.EXECUTION_REPORT, rep)
        self._reports.clear()
        mark = self.last_price
        for aid in sorted(self._touched):
            acct = self.accounts[aid]
            self._publish(exec_topic(aid), MessageKind.PORTFOLIO_UPDATE,
                          {"portfolio": acct.state.to_dict(mark), "available": acct.available().to_dict(),
                           "sim_time": self.now})
        self._touched.clear()

    def _ref_price(self, order: Order) -> Optional[Decimal]:
        if self.last_price is not None:
            return self.last_price
        return order.limit_price if order.order_type is OrderType.LIMIT else order.stop_price

    def _on_submit(self, env: Envelope) -> None:
        aid = env.sender
        try:
            order = Order.from_dict(env.payload["order"])
        except (KeyError, TypeError, ValueError, ArithmeticError, SimError) as exc:
            log.warning("malformed order from %s: %s", aid, exc)
            return
        oid = order.order_id
        self._touched[aid] = None
        if order.agent_id != aid or (oid >> ORDER_ID_SHIFT) != self.agent_nos[aid] or oid in self.used_ids:
            self._report(aid, oid, "rejected", "BAD_ORDER_ID")
            return
        self.used_ids.add(oid)
        v = validate_order(order, self.ins)
        if not v.accepted:
            self._report(aid, oid, "rejected", v.reason)
            return
        try:
            action = Action(order.action)
        except ValueError:
            self._report(aid, oid, "rejected", "BAD_ACTION")
            return
        if action.side is not order.side:
            self._report(aid, oid, "rejected", "BAD_ACTION")
            return
        ref = self._ref_price(order)
        if ref is None:
            self._report(aid, oid, "rejected", "NO_REFERENCE_PRICE")
            return
        price = order.limit_price if order.order_type is OrderType.LIMIT else order.stop_price
        req = ActionRequest(action, order.order_type, order.quantity, price, order.explanation)
        acct = self.accounts[aid]
        res = acct.check(req, ref)
        if not res.accepted:
            self._report(aid, oid, "rejected", res.reason)
            return
        qty = res.request.quantity
        qty -= qty % self.ins.lot_size
        if qty <= 0:
            self._report(aid, oid, "rejected", "LOT_MISALIGNED")
            return
        if qty != order.quantity:
            order = replace(order, quantity=qty)
        hold_px = price if order.order_type is not OrderType.MARKET else ref
        acct.hold(oid, action, qty, hold_px if action is Action.BUY or action is Action.SHORT_COVER else None)
        self.live[oid] = _Live(order, qty)
        self._report(aid, oid, "accepted", "CLIPPED" if res.clipped else None, qty)
        self._accept(order)

    def _on_cancel(self, env: Envelope) -> None:
        aid = env.sender
        oid = env.payload.get("order_id")
        self._touched[aid] = None
        live = self.live.get(oid)
        if live is None or live.order.agent_id != aid:
            self._report(aid, oid if isinstance(oid, int) else -1, "rejected", "UNKNOWN_ORDER")
            return
        self._cancel(live)

    def _close(self, oid: int, status: str, reason: Optional[str]) -> None:
        live = self.live.pop(oid, None)
        if live is None:
            return
        aid = live.order.agent_id
        self.accounts[aid].release(oid)
        self._touched[aid] = None
        self._report(aid, oid, status, reason, 0)

    # -- fills -----------------------------------------------------------

    def _settle(self, fill: Fill) -> None:
        """Book one agent fill: account, ledger, trade log, report."""
        live = self.live[fill.order_id]
        order = live.order
        aid = order.agent_id
        action = Action(order.action)
        acct = self.accounts[aid]
        acct.fill(fill.order_id, action, fill.quantity, fill.price)
        live.remaining -= fill.quantity
        rec = self.recorders[aid]
        rec.record_fill(fill, action.value, acct.state, order.explanation)
        self.trade_log.append(trade_log_entry(len(self.trade_log), fill, action.value, order.explanation))
        self._touched[aid] = None
        status = "filled" if live.remaining == 0 else "partial"
        self._report(aid, fill.order_id, status, None, live.remaining, (fill,))
        if live.remaining == 0:
            del self.live[fill.order_id]
            acct.release(fill.order_id)

    def _mark_all(self) -> None:
        if self.last_price is None:
            return
        for aid, acct in self.accounts.items():
            self.recorders[aid].mark(self.now, acct.state.market_value(self.last_price))

    # -- run ---------------------------------------------------------------

    def run(self) -> RunOutputs:
        t0 = time.perf_counter()
        try:
            if self.cfg.mode == "candle_level":
                candles = self._prepare_candles()
            else:
                candles = None
                self._prepare_orders()
            self._start_agents()
            if candles is not None:
                out_candles = self._run_candles(candles)
            else:
                out_candles = self._run_orders()
            for oid in sorted(self.live):
                self._close(oid, "canceled", "SESSION_END")
            self._flush()
            self._publish(CONTROL, MessageKind.SESSION_END, {"sim_time": self.now})
        finally:
            self._stop_agents()
        meta = self._meta(out_candles)
        return RunOutputs(meta, out_candles, self.recorders, self.trade_log, self.audit, self.all_fills,
                          list(self.broker.transcript), self._tick, self.messages, time.perf_counter() - t0,
                          self.missed_acks, self.dropped_late, self.broker.delivered)

    def _meta(self, candles: List[Candle]) -> dict:
        cfg = self.cfg
        return {
            "instrument": self.symbol,
            "mode": cfg.mode,
            "seed": cfg.seed,
            "timeframe": self.timeframe,
            "start_time": self.window[0],
            "end_time": self.window[1],
            "bars": len(candles),
            "ticks": self._tick,
            "agents": [{"agent_id": a.agent_id, "agent_no": a.agent_no, "strategy": a.strategy,
                        "params": a.params, "initial_cash": a.initial_cash, "seed": a.seed} for a in self.roster],
            "strategies": {a.agent_id: a.strategy for a in self.roster},
            "metrics": {"risk_free_rate": cfg.risk_free_rate, "periods_per_year": cfg.periods_per_year},
        }

    def _init_recorders(self, start: SimTime) -> None:
        self.recorders = {a.agent_id: AgentRecorder(a.agent_id, a.initial_cash, start) for a in self.roster}

    # -- candle mode -------------------------------------------------------

    def _prepare_candles(self) -> List[Candle]:
        bars = self.data.bars
        if bars is None:
            raise DataError("candle_level mode needs a bars data stream", code="NO_DATA")
        s = self.cfg.session
        lo, hi = s.start_ms, s.end_ms
        candles = [c for c in bars.candles if (lo is None or c.bar_start >= lo) and (hi is None or c.bar_end <= hi)]
        if not candles:
            raise DataError("no bars inside the session window", code="NO_DATA")
        self.timeframe = bars.timeframe
        self.interval = s.interval_ms or self.timeframe
        if self.interval % self.timeframe:
            raise ConfigError(f"session.action_interval ({self.interval} ms) must be a multiple of the bar "
                              f"timeframe ({self.timeframe} ms)", key="session.action_interval")
        self.window = (candles[0].bar_start, candles[-1].bar_end)
        self._init_recorders(candles[0].bar_start)
        return candles

    def _run_candles(self, candles: List[Candle]) -> List[Candle]:
        cal = self.cfg.session.calendar_obj(self.timeframe)
        clock = SessionClock(cal)
        self.pending = PendingOrders()
        self.clock = clock
        ind = IndicatorEngine(self.cfg.indicator_params, self.cfg.indicators)
        every = self.interval // self.timeframe
        news_after = candles[0].bar_start - 1
        for i, bar in enumerate(candles):
            self.now = bar.bar_start
            _, expired = advance_session(clock, bar.bar_start, self.pending)
            for o in expired:
                self._close(o.order_id, "session_expired", None)
            for order, fill in resolve_bar(self.pending.active(), bar, self.ins).fills:
                self._candle_fill(order, fill)
            self.now = bar.bar_end
            events, expired = advance_session(clock, bar.bar_end, self.pending, allow_open=False)
            for o in expired:
                self._close(o.order_id, "session_expired", None)
            frame = ind.update(bar)
            if any(ev.kind == "close" for ev in events):
                ind.reset_session()
            self.last_price = Decimal(repr(bar.close))
            self._publish(market_topic(self.symbol), MessageKind.MARKET_DATA,
                          {"candle": bar.to_dict(), "indicators": frame.values})
            items = self.data.store.news_between(self.symbol, news_after, self.now)
            news_after = self.now
            if items:
                self._publish(external_topic(self.symbol), MessageKind.EXTERNAL_DATA,
                              {"kind": "news", "items": items})
            self._flush()
            self._mark_all()
            if (i + 1) % every == 0 and i + 1 < len(candles):
                self._barrier(clock.market_open)
        return candles

    def _accept(self, order: Order) -> None:
        if self.cfg.mode == "candle_level":
            self.pending.add(order, self.clock.market_open)
        else:
            arrival = self.now + self.cfg.latency.delay(order.agent_id, order.order_id)
            self._arrivals_push(arrival, order)

    def _cancel(self, live: _Live) -> None:
        oid = live.order.order_id
        if self.cfg.mode == "candle_level":
            self.pending.remove(oid)
        elif live.arrived:
            self.engine.cancel(oid)
        self._close(oid, "canceled", None)

    def _candle_fill(self, order: Order, fill: Fill) -> None:
        """Clip a bar fill to what the account can settle right now; cancel the rest."""
        self.pending.remove(order.order_id)
        acct = self.accounts[order.agent_id]
        cap, why = acct.capacity(order.order_id, Action(order.action), fill.price)
        qty = min(fill.quantity, cap)
        qty -= qty % self.ins.lot_size
        self.now = fill.exec_time
        if qty > 0:
            f = replace(fill, quantity=qty) if qty != fill.quantity else fill
            self.all_fills.append(f)
            self._settle(f)
        if qty < fill.quantity:
            self._close(order.order_id, "canceled", why)

    # -- order mode --------------------------------------------------------

    def _prepare_orders(self) -> None:
        ev = self.data.events
        if ev is None or not ev.events:
            raise DataError("order_level mode needs a non-empty events stream", code="NO_DATA")
        events = ev.events
        for a, b in zip(events, events[1:]):
            if b.event_time < a.event_time:
                raise DataError(f"events go back in time at {b.event_time}", code="UNSORTED_EVENTS")
        s = self.cfg.session
        lo = s.start_ms if s.start_ms is not None else events[0].event_time
        hi = s.end_ms if s.end_ms is not None else events[-1].event_time
        self.events = [e for e in events if lo <= e.event_time <= hi]
        self.interval = s.interval_ms
        self.timeframe = self.interval
        n = max(1, -(-(hi - lo) // self.interval))
        self.window = (lo, lo + n * self.interval)
        self._init_recorders(lo)
        self.engine = MatchingEngine(self.ins, maker_guard=self._maker_guard, taker_guard=self._taker_guard,
                                     on_fill=self._on_engine_fill)
        self._arrivals: List[Tuple[SimTime, int, Order]] = []
        self._arrival_seq = 0

    def _arrivals_push(self, t: SimTime, order: Order) -> None:
        self._arrival_seq += 1
        self.live[order.order_id].arrived = False
        heapq.heappush(self._arrivals, (t, self._arrival_seq, order))

    def _maker_guard(self, maker, qty: int, price_ticks: int):
        live = self.live.get(maker.order_id)
        if live is None:
            return 0, "UNKNOWN_ORDER"
        cap, why = self.accounts[maker.agent_id].capacity(maker.order_id, Action(live.order.action),
                                                          self.ins.from_ticks(price_ticks))
        cap -= cap % self.ins.lot_size
        return min(qty, cap), why

    def _taker_guard(self, order: Order, qty: int, price_ticks: int):
        cap, why = self.accounts[order.agent_id].capacity(order.order_id, Action(order.action),
                                                          self.ins.from_ticks(price_ticks))
        cap -= cap % self.ins.lot_size
        return min(qty, cap), why

    def _on_engine_fill(self, fill: Fill) -> None:
        self.all_fills.append(fill)
        if fill.liquidity is Liquidity.TAKER or fill.counter_order_id is None:
            self._prints.append(fill)
        if fill.agent_id and fill.order_id in self.live:
            self.now = fill.exec_time
            self._settle(fill)

    def _absorb(self, res: SubmitResult) -> None:
        """Close agent orders the matcher rejected in part or pulled from the book."""
        for out in res.outcomes:
            oid = out.order.order_id
            if oid in self.live and out.rejected_qty:
                self._close(oid, "canceled" if out.filled_qty else "rejected", out.reason)
        for oid, why in res.pulled:
            self._close(oid, "canceled", why)

    def _run_orders(self) -> List[Candle]:
        lo, hi = self.window
        events = self.events
        ei = 0
        ind = IndicatorEngine(self.cfg.indicator_params, self.cfg.indicators)
        candles: List[Candle] = []
        news_after = lo - 1
        n_ticks = (hi - lo) // self.interval
        for j in range(1, n_ticks + 1):
            start, end = lo + (j - 1) * self.interval, lo + j * self.interval
            self._prints: List[Fill] = []
            while True:
                t_ev = events[ei].event_time if ei < len(events) else None
                t_ag = self._arrivals[0][0] if self._arrivals else None
                if (t_ev is None or t_ev >= end) and (t_ag is None or t_ag >= end):
                    break
                if t_ag is None or (t_ev is not None and t_ev <= t_ag):
                    self.now = max(self.now, t_ev)
                    res, warning = apply_event(self.engine, events[ei])
                    if warning:
                        log.debug(warning)
                    ei += 1
                else:
                    t, _, order = heapq.heappop(self._arrivals)
                    self.now = max(self.now, t)
                    live = self.live.get(order.order_id)
                    if live is None:  # canceled before it arrived
                        continue
                    live.arrived = True
                    res = self.engine.submit(order, self.now)
                self._absorb(res)
            self.now = end
            if self.engine.last_trade_price is not None:
                self.last_price = self.ins.from_ticks(self.engine.last_trade_price)
            candle = aggregate_fills_to_candle(self._prints, start, self.interval, self.symbol)
            payload = {"book_top": self.engine.book.snapshot(BOOK_DEPTH).to_dict(),
                       "last_trade_price": None if self.last_price is None else decimal_str(self.last_price),
                       "candle": None, "indicators": {}}
            if candle is not None:
                candles.append(candle)
                payload["candle"] = candle.to_dict()
                payload["indicators"] = ind.update(candle, self.engine.book.snapshot(BOOK_DEPTH)).values
            self._publish(market_topic(self.symbol), MessageKind.MARKET_DATA, payload)
            items = self.data.store.news_between(self.symbol, news_after, self.now)
            news_after = self.now
            if items:
                self._publish(external_topic(self.symbol), MessageKind.EXTERNAL_DATA,
                              {"kind": "news", "items": items})
            self._flush()
            self._mark_all()
            if j < n_ticks:
                self._barrier(True)
        return candles


def run_simulation(cfg: RunConfig, **kw) -> RunOutputs:
    return Simulation(cfg, **kw).run()

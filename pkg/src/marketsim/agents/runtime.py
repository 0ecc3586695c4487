"""Agent-side runtime: turns bus traffic into strategy calls and strategy output into orders.

The same :class:`AgentRuntime` runs over an in-process ``LocalClient`` or a
``TcpClient``; it only needs ``subscribe``, ``publish``, ``request`` and
``ready``.
"""

from __future__ import annotations

import argparse
import logging
import threading
from collections import deque
from decimal import Decimal
from typing import Deque, Dict, List, Optional

from marketsim.agents.portfolio import ActionRequest, PortfolioState, enforce_constraints
from marketsim.agents.strategies import CancelRequest, DecisionContext, Strategy, make_strategy
from marketsim.bus.envelope import (
    CONTROL,
    ENGINE_INBOX,
    Envelope,
    MessageKind,
    exec_topic,
    external_topic,
    market_topic,
)
from marketsim.domain import Candle, Order, OrderType, SimTime, to_decimal

log = logging.getLogger(__name__)

ORDER_ID_SHIFT = 40
_TERMINAL = {"filled", "rejected", "canceled", "session_expired"}


def make_order_id(agent_no: int, local: int) -> int:
    return (agent_no << ORDER_ID_SHIFT) | local


class AgentRuntime:
    def __init__(self, agent_id: str, agent_no: int, strategy: Strategy, client, instrument: str,
                 initial_cash="0", window: Optional[tuple] = None, action_interval: Optional[int] = None,
                 max_activity: int = 20, max_news: int = 50):
        self.agent_id = agent_id
        self.agent_no = agent_no
        self.strategy = strategy
        self.client = client
        self.instrument = instrument
        self.window = window
        self.action_interval = action_interval
        self.portfolio = PortfolioState(to_decimal(initial_cash))
        self.available = self.portfolio
        self.last_price: Optional[Decimal] = None
        self.candle: Optional[Candle] = None
        self.indicators: Dict[str, object] = {}
        self.open_orders: Dict[int, dict] = {}
        self.activity: Deque[dict] = deque(maxlen=max_activity)
        self.news: Deque[dict] = deque(maxlen=max_news)
        self._local = 0
        self.finished = threading.Event()

    def start(self) -> None:
        c = self.client
        c.subscribe(market_topic(self.instrument), self._on_market)
        c.subscribe(exec_topic(self.agent_id), self._on_exec)
        c.subscribe(external_topic(self.instrument), self._on_external)
        c.subscribe(CONTROL, self._on_control)
        c.ready()

    # -- inbound -----------------------------------------------------------

    def _on_market(self, env: Envelope) -> None:
        p = env.payload
        if p.get("candle") is not None:
            self.candle = Candle.from_dict(p["candle"])
            self.last_price = to_decimal(self.candle.close)
        if p.get("last_trade_price") is not None:
            self.last_price = Decimal(p["last_trade_price"])
        self.indicators = p.get("indicators") or {}
        if self.candle is not None and p.get("candle") is not None:
            self.strategy.on_market_data(self.candle, self.indicators)

    def _on_exec(self, env: Envelope) -> None:
        p = env.payload
        if env.kind is MessageKind.PORTFOLIO_UPDATE:
            self.portfolio = PortfolioState.from_dict(p["portfolio"])
            self.available = PortfolioState.from_dict(p["available"])
            return
        if env.kind is not MessageKind.EXECUTION_REPORT:
            return
        oid, status = p["order_id"], p["status"]
        if status in _TERMINAL:
            self.open_orders.pop(oid, None)
        elif oid in self.open_orders:
            self.open_orders[oid]["remaining"] = p.get("remaining", self.open_orders[oid].get("remaining"))
        if status != "accepted" or p.get("remaining"):
            self.activity.append({k: p[k] for k in ("order_id", "status", "reason", "sim_time") if k in p})
        self.strategy.on_execution(p)

    def _on_external(self, env: Envelope) -> None:
        for item in env.payload.get("items", ()):
            self.news.append(item)

    def _on_control(self, env: Envelope) -> None:
        if env.kind is MessageKind.TIME_TICK:
            self._decide(env.payload)
        elif env.kind is MessageKind.SESSION_END:
            self.strategy.close()
            self.finished.set()

    # -- decisions ---------------------------------------------------------

    def _decide(self, tick: dict) -> None:
        t: SimTime = tick["sim_time"]
        ctx = DecisionContext(
            agent_id=self.agent_id, sim_time=t, market_open=bool(tick.get("market_open")),
            portfolio=self.available, last_price=self.last_price, candle=self.candle,
            indicators=self.indicators, open_orders=dict(self.open_orders), news=list(self.news),
            recent_activity=list(self.activity), window=self.window, action_interval=self.action_interval,
            instrument=self.instrument,
        )
        try:
            decisions = self.strategy.decide(ctx)
        except Exception as exc:  # a broken strategy must not stall the barrier
            log.exception("agent %s strategy failed", self.agent_id)
            decisions = []
            explanation = f"strategy error: {exc}"
        else:
            explanation = getattr(self.strategy, "explanation", "") or " | ".join(
                d.explanation for d in decisions if d.explanation)
        actions: List[dict] = []
        for d in decisions:
            if isinstance(d, CancelRequest):
                self.client.publish(ENGINE_INBOX, MessageKind.ORDER_CANCEL, {"order_id": d.order_id}, t)
                actions.append({"cancel": d.order_id})
                continue
            rec = d.to_dict()
            if self.last_price is None:
                rec["local_rejection"] = "NO_REFERENCE_PRICE"
                actions.append(rec)
                continue
            res = enforce_constraints(d, self.available, self.last_price)
            if not res.accepted:
                rec["local_rejection"] = res.reason
                actions.append(rec)
                continue
            req: ActionRequest = res.request
            if res.clipped:
                rec["clipped_to"] = req.quantity
            order = self._order(req, t)
            rec["order_id"] = order.order_id
            actions.append(rec)
            self.open_orders[order.order_id] = {"order_id": order.order_id, "action": req.action.value,
                                                "orderType": rec["orderType"], "price": rec["price"],
                                                "remaining": req.quantity}
            self.client.publish(ENGINE_INBOX, MessageKind.ORDER_SUBMIT, {"order": order.to_dict()}, t)
        record = {"actions": actions, "explanation": explanation}
        diag = getattr(self.strategy, "last_diagnostic", None)
        if diag is not None and diag(t):
            record["diagnostic"] = diag(t)
        self.client.publish(ENGINE_INBOX, MessageKind.TICK_ACK, {"tick": tick.get("tick"), "record": record}, t)

    def _order(self, req: ActionRequest, t: SimTime) -> Order:
        self._local += 1
        return Order(
            make_order_id(self.agent_no, self._local), self.agent_id, self.instrument, req.action.side,
            req.order_type, req.quantity,
            limit_price=req.price if req.order_type is OrderType.LIMIT else None,
            stop_price=req.price if req.order_type is OrderType.STOP else None,
            submit_time=t, explanation=req.explanation, action=req.action.value,
        )


def runtime_from_config(client, cfg: dict) -> AgentRuntime:
    """Build a runtime from the agent config handed out in the TCP welcome."""
    strategy = make_strategy(cfg["strategy"], cfg.get("params"), cfg.get("seed", 0))
    window = tuple(cfg["window"]) if cfg.get("window") else None
    return AgentRuntime(cfg["agent_id"], int(cfg["agent_no"]), strategy, client, cfg["instrument"],
                        cfg.get("initial_cash", "0"), window, cfg.get("action_interval"))


def run_remote_agent(host: str, port: int, agent_id: str, timeout: Optional[float] = None) -> None:
    """Connect over TCP, run until SessionEnd or disconnect."""
    from marketsim.bus.tcp import TcpClient

    client = TcpClient(host, port, agent_id)
    rt = runtime_from_config(client, client.config)
    rt.start()
    while not rt.finished.is_set() and not client.closed.is_set():
        rt.finished.wait(0.05 if timeout is None else min(0.05, timeout))
    client.close()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="run one simulation agent over TCP")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, required=True)
    ap.add_argument("--agent-id", required=True)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    run_remote_agent(args.host, args.port, args.agent_id)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

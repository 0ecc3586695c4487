"""Price-time priority matching over an :class:`OrderBook` plus stop handling."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

from marketsim.domain import Fill, Instrument, Liquidity, Order, OrderType, Side, SimTime
from marketsim.matching.book import OrderBook, RestingOrder
from marketsim.matching.stops import PendingStop, StopBook, check_stop_triggers

log = logging.getLogger(__name__)

EXOGENOUS = ""  # agent id carried by replayed historical orders

# (order, wanted qty) -> (admitted qty, rejection reason for the rest)
AdmitHook = Callable[[Order, int], Tuple[int, Optional[str]]]
# (resting order, qty about to trade, price ticks) -> (allowed qty, reason); the maker is pulled when short
MakerGuard = Callable[[RestingOrder, int, int], Tuple[int, Optional[str]]]
# (incoming order, qty about to trade, price ticks) -> (allowed qty, reason); the taker stops when short
TakerGuard = Callable[[Order, int, int], Tuple[int, Optional[str]]]


@dataclass
class Outcome:
    """What happened to one incoming (or stop-activated) order."""

    order: Order
    status: str  # filled | partial | resting | rejected | stop_pending
    filled_qty: int = 0
    rested_qty: int = 0
    rejected_qty: int = 0
    reason: Optional[str] = None
    activated: bool = False


@dataclass
class SubmitResult:
    fills: List[Fill] = field(default_factory=list)
    outcomes: List[Outcome] = field(default_factory=list)
    pulled: List[Tuple[int, str]] = field(default_factory=list)  # (maker order id, reason)

    def fills_for(self, order_id: int) -> List[Fill]:
        return [f for f in self.fills if f.order_id == order_id]

    def extend(self, other: "SubmitResult") -> None:
        self.fills.extend(other.fills)
        self.outcomes.extend(other.outcomes)
        self.pulled.extend(other.pulled)


class MatchingEngine:
    """Single-owner matcher: mutate only from one task, in arrival order.

    ``admit`` lets the owner cap the size of market executions (incoming
    market orders and activated stops) just before they hit the book.
    ``maker_guard`` is consulted before a resting agent order trades; if it
    allows less than the match size the maker trades what it may and the
    rest of it is pulled from the book. ``taker_guard`` does the same for an
    incoming agent order at each price level; whatever it refuses is
    rejected rather than rested. ``on_fill`` sees every fill as it happens,
    so guards consulted later in the same sweep can rely on updated state.
    """

    def __init__(self, instrument: Instrument, admit: Optional[AdmitHook] = None,
                 maker_guard: Optional[MakerGuard] = None, taker_guard: Optional[TakerGuard] = None,
                 on_fill: Optional[Callable[[Fill], None]] = None):
        self.instrument = instrument
        self.book = OrderBook(instrument)
        self.stops = StopBook()
        self.admit = admit
        self.maker_guard = maker_guard
        self.taker_guard = taker_guard
        self.on_fill = on_fill
        self._pulled: List[Tuple[int, str]] = []
        self._taker_stop: Optional[str] = None
        self.now: SimTime = 0
        self._activation_queue: deque[PendingStop] = deque()

    @property
    def last_trade_price(self) -> Optional[int]:
        return self.book.last_trade_price

    def advance_to(self, t: SimTime) -> None:
        if t < self.now:
            raise ValueError(f"arrival {t} precedes engine time {self.now}")
        self.now = t

    def submit(self, order: Order, arrival_time: SimTime) -> SubmitResult:
        """Match an incoming order; the remainder of a limit order rests."""
        self.advance_to(arrival_time)
        res = SubmitResult()
        if order.order_type is OrderType.STOP:
            stop = PendingStop(order, self.instrument.to_ticks(order.stop_price), arrival_time, self.book.next_seq())
            self.stops.add(stop)
            res.outcomes.append(Outcome(order, "stop_pending"))
            # a stop that is already through the last print fires immediately
            self._queue_activations(check_stop_triggers(self.stops, self.book.last_trade_price))
        elif order.order_type is OrderType.MARKET:
            res.outcomes.append(self._execute_market(order, res.fills))
        else:
            res.outcomes.append(self._execute_limit(order, arrival_time, res.fills))
        self._drain_activations(res)
        self._collect_pulled(res)
        return res

    def cancel(self, order_id: int) -> bool:
        if self.book.remove(order_id) is not None:
            return True
        return self.stops.remove(order_id) is not None

    def execute_resting(self, order_id: int, qty: int, exec_time: SimTime) -> SubmitResult:
        """Exogenous execution against a resting order (a trade we only see one side of)."""
        self.advance_to(exec_time)
        res = SubmitResult()
        o = self.book.get(order_id)
        if o is None:
            return res
        taken = self.book.reduce(order_id, qty)
        if taken:
            f = Fill(o.order_id, self.instrument.from_ticks(o.price), taken, self.now,
                     Liquidity.MAKER, o.side, None, o.agent_id or None)
            res.fills.append(f)
            if self.on_fill is not None:
                self.on_fill(f)
            self._print(o.price)
        self._drain_activations(res)
        self._collect_pulled(res)
        return res

    # -- internals -------------------------------------------------------

    def _collect_pulled(self, res: SubmitResult) -> None:
        res.pulled.extend(self._pulled)
        self._pulled.clear()

    def _print(self, price: int) -> None:
        self.book.last_trade_price = price
        self._queue_activations(check_stop_triggers(self.stops, price))

    def _queue_activations(self, fired: List[PendingStop]) -> None:
        self._activation_queue.extend(fired)

    def _drain_activations(self, res: SubmitResult) -> None:
        while self._activation_queue:
            stop = self._activation_queue.popleft()
            o = stop.order
            market = Order(o.order_id, o.agent_id, o.instrument, o.side, OrderType.MARKET, o.quantity,
                           submit_time=o.submit_time, explanation=o.explanation, action=o.action)
            out = self._execute_market(market, res.fills)
            out.order = o
            out.activated = True
            res.outcomes.append(out)

    def _execute_market(self, order: Order, fills: List[Fill]) -> Outcome:
        qty = order.quantity
        reason = None
        if self.admit is not None:
            allowed, reason = self.admit(order, qty)
            allowed = max(0, min(qty, allowed))
        else:
            allowed = qty
        filled = self._cross(order, allowed, None, fills) if allowed else 0
        rejected = qty - filled
        if rejected and filled < allowed:
            reason = self._taker_stop or "NO_LIQUIDITY"
        status = "filled" if not rejected else ("partial" if filled else "rejected")
        return Outcome(order, status, filled_qty=filled, rejected_qty=rejected, reason=reason if rejected else None)

    def _execute_limit(self, order: Order, arrival_time: SimTime, fills: List[Fill]) -> Outcome:
        limit = self.instrument.to_ticks(order.limit_price)
        filled = self._cross(order, order.quantity, limit, fills)
        rest = order.quantity - filled
        if rest and self._taker_stop is not None:
            status = "partial" if filled else "rejected"
            return Outcome(order, status, filled_qty=filled, rejected_qty=rest, reason=self._taker_stop)
        if rest:
            # the remainder rests (pulled makers were already taken off the book)
            self.book.add(RestingOrder(order.order_id, order.agent_id, order.side, limit, rest,
                                       arrival_time, self.book.next_seq(), order.action))
        status = "filled" if not rest else ("partial" if filled else "resting")
        return Outcome(order, status, filled_qty=filled, rested_qty=rest)

    def _cross(self, order: Order, qty: int, limit: Optional[int], fills: List[Fill]) -> int:
        side = order.side
        opp = side.opposite
        remaining = qty
        ins = self.instrument
        self._taker_stop = None
        while remaining > 0:
            maker = self.book.front(opp)
            if maker is None:
                break
            if limit is not None and (maker.price > limit if side is Side.BUY else maker.price < limit):
                break
            take = min(remaining, maker.remaining_qty)
            if self.taker_guard is not None and order.agent_id:
                allowed, why = self.taker_guard(order, take, maker.price)
                if allowed < take:
                    take, self._taker_stop = max(0, allowed), why or "CONSTRAINT"
                    if take == 0:
                        break
            pull_reason = None
            if self.maker_guard is not None and maker.agent_id:
                allowed, why = self.maker_guard(maker, take, maker.price)
                if allowed < take:
                    take, pull_reason = max(0, allowed), why or "CONSTRAINT"
            if take == 0:
                self.book.remove(maker.order_id)
                self._pulled.append((maker.order_id, pull_reason))
                continue
            price = ins.from_ticks(maker.price)
            selfm = bool(order.agent_id) and order.agent_id == maker.agent_id
            pair = (Fill(order.order_id, price, take, self.now, Liquidity.TAKER, side,
                         maker.order_id, order.agent_id or None, selfm),
                    Fill(maker.order_id, price, take, self.now, Liquidity.MAKER, opp,
                         order.order_id, maker.agent_id or None, selfm))
            fills.extend(pair)
            if self.on_fill is not None:
                for f in pair:
                    self.on_fill(f)
            self.book.reduce(maker.order_id, take)
            remaining -= take
            self._print(maker.price)
            if pull_reason is not None:
                self.book.remove(maker.order_id)
                self._pulled.append((maker.order_id, pull_reason))
            if self._taker_stop is not None:
                break
        return qty - remaining


def submit(engine: MatchingEngine, order: Order, arrival_time: SimTime) -> SubmitResult:
    return engine.submit(order, arrival_time)


def cancel(engine: MatchingEngine, order_id: int) -> bool:
    return engine.cancel(order_id)

"""Replay of exogenous order-book events with agent orders interleaved by time."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from decimal import Decimal
from typing import Iterable, Iterator, Optional, Sequence, Tuple, Union

from marketsim.domain import Order, OrderType, Side, SimTime, UnsortedInput, decimal_str, to_decimal
from marketsim.matching.book import BookSnapshot
from marketsim.matching.matcher import EXOGENOUS, MatchingEngine, SubmitResult

log = logging.getLogger(__name__)


class EventKind(str, enum.Enum):
    ADD = "add"
    CANCEL = "cancel"
    EXECUTE = "execute"


@dataclass(frozen=True)
class BookEvent:
    event_time: SimTime
    kind: EventKind
    order_id: int
    side: Side
    price: Decimal
    quantity: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EventKind(self.kind))
        object.__setattr__(self, "side", Side(self.side))
        object.__setattr__(self, "price", to_decimal(self.price))

    def as_row(self) -> list:
        return [self.event_time, self.kind.value, self.order_id, self.side.value, decimal_str(self.price), self.quantity]


@dataclass
class ReplayStep:
    time: SimTime
    item: Union[BookEvent, Order]
    result: SubmitResult
    snapshot: Optional[BookSnapshot] = None
    warning: Optional[str] = None

    @property
    def fills(self):
        return self.result.fills


def apply_event(engine: MatchingEngine, ev: BookEvent) -> Tuple[SubmitResult, Optional[str]]:
    """Apply one exogenous event; dataset noise becomes a warning, never an exception."""
    book = engine.book
    if ev.kind is EventKind.ADD:
        if ev.order_id in book or ev.order_id in engine.stops:
            return SubmitResult(), f"add for live id {ev.order_id} ignored"
        order = Order(ev.order_id, EXOGENOUS, engine.instrument.symbol, ev.side, OrderType.LIMIT,
                      ev.quantity, limit_price=ev.price, submit_time=ev.event_time)
        return engine.submit(order, ev.event_time), None
    if ev.kind is EventKind.CANCEL:
        engine.advance_to(ev.event_time)
        resting = book.get(ev.order_id)
        if resting is None:
            return SubmitResult(), f"cancel for unknown id {ev.order_id}"
        if 0 < ev.quantity < resting.remaining_qty:
            book.reduce(ev.order_id, ev.quantity)
        else:
            book.remove(ev.order_id)
        return SubmitResult(), None
    if ev.order_id not in book:
        engine.advance_to(ev.event_time)
        return SubmitResult(), f"execute for unknown id {ev.order_id}"
    return engine.execute_resting(ev.order_id, ev.quantity, ev.event_time), None


def replay_events(
    engine: MatchingEngine,
    events: Iterable[BookEvent],
    agent_orders: Sequence[Tuple[SimTime, Order]] = (),
    snapshot_depth: Optional[int] = None,
) -> Iterator[ReplayStep]:
    """Yield one step per event or agent order, in simulation-time order.

    At equal timestamps exogenous events go first; agent orders keep the
    order they were given in (callers sort them by agent id and sequence).
    """
    agent = sorted(enumerate(agent_orders), key=lambda p: (p[1][0], p[0]))
    ai = 0
    last_t: Optional[SimTime] = None
    for ev in events:
        if last_t is not None and ev.event_time < last_t:
            raise UnsortedInput(f"event at {ev.event_time} after {last_t}")
        last_t = ev.event_time
        while ai < len(agent) and agent[ai][1][0] < ev.event_time:
            yield _agent_step(engine, agent[ai][1], snapshot_depth)
            ai += 1
        res, warning = apply_event(engine, ev)
        if warning:
            log.warning(warning)
        yield ReplayStep(ev.event_time, ev, res, _snap(engine, snapshot_depth), warning)
    while ai < len(agent):
        yield _agent_step(engine, agent[ai][1], snapshot_depth)
        ai += 1


def _agent_step(engine: MatchingEngine, item: Tuple[SimTime, Order], depth: Optional[int]) -> ReplayStep:
    t, order = item
    return ReplayStep(t, order, engine.submit(order, t), _snap(engine, depth))


def _snap(engine: MatchingEngine, depth: Optional[int]) -> Optional[BookSnapshot]:
    return engine.book.snapshot(depth) if depth is not None else None

"""Dormant stop orders held outside the visible book."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

from marketsim.domain import Order, Side, SimTime


@dataclass
class PendingStop:
    order: Order
    stop_price: int  # ticks
    arrival_time: SimTime
    seq: int

    @property
    def side(self) -> Side:
        return self.order.side

    def triggered_by(self, last_trade_price: int) -> bool:
        if self.order.side is Side.SELL:
            return last_trade_price <= self.stop_price
        return last_trade_price >= self.stop_price

    def priority(self) -> tuple:
        # sell stops sit below the market, so the highest one is reached first
        px = -self.stop_price if self.order.side is Side.SELL else self.stop_price
        return (px, self.arrival_time, self.seq)


class StopBook:
    def __init__(self) -> None:
        self._stops: dict[int, PendingStop] = {}

    def __len__(self) -> int:
        return len(self._stops)

    def __contains__(self, order_id: int) -> bool:
        return order_id in self._stops

    def __iter__(self):
        return iter(list(self._stops.values()))

    def add(self, stop: PendingStop) -> None:
        if stop.order.order_id in self._stops:
            raise ValueError(f"duplicate stop id {stop.order.order_id}")
        self._stops[stop.order.order_id] = stop

    def remove(self, order_id: int) -> Optional[PendingStop]:
        return self._stops.pop(order_id, None)


def check_stop_triggers(pending: StopBook, last_trade_price: Optional[int]) -> List[PendingStop]:
    """Remove and return the stops a print at ``last_trade_price`` activates.

    Sell stops fire at or below their stop price, buy stops at or above. The
    result is ordered by closeness of the stop price to the trigger side, then
    by arrival time and sequence.
    """
    if last_trade_price is None or not len(pending):
        return []
    fired = [s for s in pending if s.triggered_by(last_trade_price)]
    fired.sort(key=PendingStop.priority)
    for s in fired:
        pending.remove(s.order.order_id)
    return fired

"""Price-level limit order book with FIFO queues.

Prices inside the book are integer tick counts. Bids are kept in ascending
order with the best bid last; asks ascending with the best ask first.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass
from decimal import Decimal
from typing import Deque, Dict, Iterator, List, Optional, Tuple

from marketsim.domain import Instrument, Side, SimTime, decimal_str


@dataclass
class RestingOrder:
    order_id: int
    agent_id: str
    side: Side
    price: int
    remaining_qty: int
    arrival_time: SimTime
    seq: int
    action: Optional[str] = None


@dataclass(frozen=True)
class BookSnapshot:
    """Immutable depth ladder; safe to hand to agents or other threads."""

    bids: Tuple[Tuple[Decimal, int], ...]
    asks: Tuple[Tuple[Decimal, int], ...]
    last_trade_price: Optional[Decimal] = None

    def to_dict(self) -> dict:
        return {
            "bids": [[decimal_str(p), q] for p, q in self.bids],
            "asks": [[decimal_str(p), q] for p, q in self.asks],
            "last_trade_price": None if self.last_trade_price is None else decimal_str(self.last_trade_price),
        }


class OrderBook:
    def __init__(self, instrument: Instrument):
        self.instrument = instrument
        self._levels: Dict[Side, Dict[int, Deque[RestingOrder]]] = {Side.BUY: {}, Side.SELL: {}}
        self._prices: Dict[Side, List[int]] = {Side.BUY: [], Side.SELL: []}
        self._index: Dict[int, RestingOrder] = {}
        self.last_trade_price: Optional[int] = None
        self._seq = 0

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, order_id: int) -> bool:
        return order_id in self._index

    def get(self, order_id: int) -> Optional[RestingOrder]:
        return self._index.get(order_id)

    def best(self, side: Side) -> Optional[int]:
        prices = self._prices[side]
        if not prices:
            return None
        return prices[-1] if side is Side.BUY else prices[0]

    @property
    def best_bid(self) -> Optional[int]:
        return self.best(Side.BUY)

    @property
    def best_ask(self) -> Optional[int]:
        return self.best(Side.SELL)

    def is_crossed(self) -> bool:
        bb, ba = self.best_bid, self.best_ask
        return bb is not None and ba is not None and bb >= ba

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def add(self, order: RestingOrder) -> None:
        """Append a resting order at the back of its level's queue."""
        if order.remaining_qty <= 0:
            raise ValueError("resting quantity must be positive")
        if order.order_id in self._index:
            raise ValueError(f"duplicate order id {order.order_id}")
        levels = self._levels[order.side]
        q = levels.get(order.price)
        if q is None:
            q = levels[order.price] = deque()
            bisect.insort(self._prices[order.side], order.price)
        q.append(order)
        self._index[order.order_id] = order

    def front(self, side: Side) -> Optional[RestingOrder]:
        px = self.best(side)
        if px is None:
            return None
        return self._levels[side][px][0]

    def reduce(self, order_id: int, qty: int) -> int:
        """Take up to ``qty`` off a resting order; returns the amount actually removed."""
        o = self._index.get(order_id)
        if o is None or qty <= 0:
            return 0
        taken = min(qty, o.remaining_qty)
        o.remaining_qty -= taken
        if o.remaining_qty == 0:
            self._remove(o)
        return taken

    def remove(self, order_id: int) -> Optional[RestingOrder]:
        o = self._index.get(order_id)
        if o is not None:
            self._remove(o)
        return o

    def _remove(self, o: RestingOrder) -> None:
        del self._index[o.order_id]
        levels = self._levels[o.side]
        q = levels[o.price]
        if q and q[0] is o:
            q.popleft()
        else:
            q.remove(o)
        if not q:
            del levels[o.price]
            prices = self._prices[o.side]
            prices.pop(bisect.bisect_left(prices, o.price))

    def levels(self, side: Side) -> Iterator[Tuple[int, Deque[RestingOrder]]]:
        """Levels best-first."""
        prices = self._prices[side]
        order = reversed(prices) if side is Side.BUY else iter(prices)
        levels = self._levels[side]
        for px in list(order):
            yield px, levels[px]

    def orders(self) -> List[RestingOrder]:
        return list(self._index.values())

    def ladder(self, side: Side, depth: Optional[int] = None) -> List[Tuple[int, int]]:
        out = []
        for px, q in self.levels(side):
            if depth is not None and len(out) >= depth:
                break
            out.append((px, sum(o.remaining_qty for o in q)))
        return out

    def depth_qty(self, side: Side, depth: int) -> int:
        return sum(q for _, q in self.ladder(side, depth))

    def walk(self, side: Side, qty: int, limit: Optional[int] = None) -> List[Tuple[int, int]]:
        """Price/quantity pairs an incoming order on ``side`` would take, without mutating."""
        out: List[Tuple[int, int]] = []
        need = qty
        for px, lvl_qty in self.ladder(side.opposite):
            if need <= 0:
                break
            if limit is not None and (px > limit if side is Side.BUY else px < limit):
                break
            take = min(need, lvl_qty)
            out.append((px, take))
            need -= take
        return out

    def snapshot(self, depth: Optional[int] = None) -> BookSnapshot:
        ins = self.instrument
        return BookSnapshot(
            bids=tuple((ins.from_ticks(p), q) for p, q in self.ladder(Side.BUY, depth)),
            asks=tuple((ins.from_ticks(p), q) for p, q in self.ladder(Side.SELL, depth)),
            last_trade_price=None if self.last_trade_price is None else ins.from_ticks(self.last_trade_price),
        )


def book_top(book: OrderBook, depth: int) -> BookSnapshot:
    """Best-first ladders of (price, total quantity) per side, ``depth`` levels deep."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    return book.snapshot(depth)

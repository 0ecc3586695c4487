"""Candlestick-level execution.

Bars carry no intra-bar detail, so conditional orders are resolved against a
deterministic synthetic path through the bar: open, then the extreme on the
"wrong" side of the bar, then the other extreme, then close. Up bars go
O -> L -> H -> C and down bars O -> H -> L -> C.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from marketsim.domain import Candle, Fill, Instrument, Liquidity, Order, OrderType, Side, SimTime

_THIRD = Fraction(1, 3)


@dataclass(frozen=True)
class SyntheticPath:
    waypoints: Tuple[Tuple[Fraction, float], ...]

    @property
    def prices(self) -> list:
        return [p for _, p in self.waypoints]

    def price_at(self, frac: Fraction) -> float:
        pts = self.waypoints
        for (f0, p0), (f1, p1) in zip(pts, pts[1:]):
            if f0 <= frac <= f1:
                if f1 == f0:
                    return p1
                return p0 + (p1 - p0) * float((frac - f0) / (f1 - f0))
        raise ValueError(f"fraction {frac} outside [0, 1]")


def path_points(o, h, l, c) -> tuple:
    """O, X, Y, C for a bar; works on floats or integer ticks alike."""
    if c >= o:
        return (o, l, h, c)
    return (o, h, l, c)


def synth_path(candle: Candle) -> SyntheticPath:
    pts = path_points(candle.open, candle.high, candle.low, candle.close)
    return SyntheticPath(tuple((i * _THIRD, p) for i, p in enumerate(pts)))


def _hits(side: Side, kind: OrderType, level: int, price: int) -> bool:
    if kind is OrderType.LIMIT:
        return price <= level if side is Side.BUY else price >= level
    return price >= level if side is Side.BUY else price <= level


def first_crossing(points: Sequence[int], side: Side, kind: OrderType, level: Optional[int]) -> Optional[Tuple[Fraction, int]]:
    """Path position and execution price (ticks) of an order against tick waypoints.

    Market orders take the open. Anything already executable at the open
    fills at the open (a gap through the level); otherwise the fill is at the
    level itself at the first point the path reaches it.
    """
    if kind is OrderType.MARKET:
        return Fraction(0), points[0]
    if _hits(side, kind, level, points[0]):
        return Fraction(0), points[0]
    for k, (a, b) in enumerate(zip(points, points[1:])):
        if _hits(side, kind, level, b):
            # a did not hit and b does, so the level lies in (a, b]
            return k * _THIRD + _THIRD * Fraction(a - level, a - b), level
    return None


@dataclass
class BarResolution:
    """Ordered candidate fills plus orders the bar never reached."""

    fills: List[Tuple[Order, Fill]] = field(default_factory=list)
    surviving: List[Order] = field(default_factory=list)


def resolve_bar(open_orders: Sequence[Order], candle: Candle, instrument: Instrument) -> BarResolution:
    """Decide which queued orders this bar executes, at what price and in what order.

    Fills come back sorted by position along the synthetic path, ties broken
    by the order of ``open_orders``. Every order fills completely or not at all.
    """
    pts = path_points(*(instrument.round_ticks(x) for x in (candle.open, candle.high, candle.low, candle.close)))
    hits = []
    out = BarResolution()
    for idx, order in enumerate(open_orders):
        level = None
        if order.order_type is OrderType.LIMIT:
            level = instrument.to_ticks(order.limit_price)
        elif order.order_type is OrderType.STOP:
            level = instrument.to_ticks(order.stop_price)
        hit = first_crossing(pts, order.side, order.order_type, level)
        if hit is None:
            out.surviving.append(order)
        else:
            hits.append((hit[0], idx, hit[1], order))
    hits.sort(key=lambda h: (h[0], h[1]))
    tf = candle.timeframe
    for frac, _, px, order in hits:
        t = candle.bar_start + min(int(frac * tf), tf - 1)
        out.fills.append((order, Fill(order.order_id, instrument.from_ticks(px), order.quantity, t,
                                      Liquidity.TAKER, order.side, None, order.agent_id)))
    return out


# -- sessions ----------------------------------------------------------------


class CalendarKind(str, enum.Enum):
    CONTINUOUS = "continuous"  # 24/7, e.g. crypto
    DAILY = "daily"  # one session per weekday between fixed UTC clock times
    PER_BAR = "per_bar"  # every bar is its own session (daily bars)


DAY_MS = 86_400_000


@dataclass(frozen=True)
class Calendar:
    kind: CalendarKind = CalendarKind.CONTINUOUS
    open_minute: int = 0  # minutes after 00:00 UTC
    close_minute: int = 24 * 60
    weekdays: Tuple[int, ...] = (0, 1, 2, 3, 4)
    bar_ms: int = DAY_MS

    def session_at(self, t: SimTime) -> Optional[Tuple[Optional[SimTime], Optional[SimTime]]]:
        """``(open, close)`` of the session containing ``t``, or ``None`` when closed."""
        if self.kind is CalendarKind.CONTINUOUS:
            return (None, None)
        if self.kind is CalendarKind.PER_BAR:
            start = (t // self.bar_ms) * self.bar_ms
            return (start, start + self.bar_ms)
        day = (t // DAY_MS) * DAY_MS
        # epoch day 0 (1970-01-01) was a Thursday
        weekday = ((t // DAY_MS) + 3) % 7
        if weekday not in self.weekdays:
            return None
        o, c = day + self.open_minute * 60_000, day + self.close_minute * 60_000
        if o <= t < c:
            return (o, c)
        return None


@dataclass(frozen=True)
class SessionEvent:
    kind: str  # open | close
    time: Optional[SimTime]


class SessionClock:
    def __init__(self, calendar: Calendar):
        self.calendar = calendar
        self.market_open = False
        self._close: Optional[SimTime] = None
        self.bar_index = -1

    def advance(self, now: SimTime, allow_open: bool = True) -> List[SessionEvent]:
        """Emit the close/open boundaries crossed up to ``now``.

        A close at ``now`` is processed before an open at ``now``. Pass
        ``allow_open=False`` at bar-end instants so a decision made between
        two per-bar sessions sees the market as closed.
        """
        events = []
        if self.market_open and self._close is not None and now >= self._close:
            events.append(SessionEvent("close", self._close))
            self.market_open = False
            self._close = None
        if allow_open and not self.market_open:
            s = self.calendar.session_at(now)
            if s is not None:
                self.market_open = True
                self._close = s[1]
                events.append(SessionEvent("open", s[0] if s[0] is not None else now))
        return events


class PendingOrders:
    """Orders waiting for bars: queued while the market is closed, active while open."""

    def __init__(self) -> None:
        self._orders: Dict[int, Tuple[Order, bool]] = {}

    def __len__(self) -> int:
        return len(self._orders)

    def __contains__(self, order_id: int) -> bool:
        return order_id in self._orders

    def add(self, order: Order, market_open: bool) -> None:
        self._orders[order.order_id] = (order, market_open)

    def remove(self, order_id: int) -> Optional[Order]:
        entry = self._orders.pop(order_id, None)
        return entry[0] if entry else None

    def active(self) -> List[Order]:
        return [o for o, act in self._orders.values() if act]

    def queued(self) -> List[Order]:
        return [o for o, act in self._orders.values() if not act]

    def activate_all(self) -> None:
        for oid, (o, _) in list(self._orders.items()):
            self._orders[oid] = (o, True)

    def retain(self, keep: Callable[[Order], bool]) -> None:
        for oid, (o, _) in list(self._orders.items()):
            if not keep(o):
                del self._orders[oid]

    def expire_active(self) -> List[Order]:
        gone = self.active()
        for o in gone:
            del self._orders[o.order_id]
        return gone


def advance_session(clock: SessionClock, now: SimTime, pending: PendingOrders,
                    allow_open: bool = True) -> Tuple[List[SessionEvent], List[Order]]:
    """Move the session clock and apply its consequences to pending orders.

    At a close every active order is expired (returned for session_expired
    reports). At an open queued orders become active.
    """
    events = clock.advance(now, allow_open)
    expired: List[Order] = []
    for ev in events:
        if ev.kind == "close":
            expired.extend(pending.expire_active())
        else:
            pending.activate_all()
    return events, expired

"""Trade ledger and equity history, one per agent.

Trades are paired with the same average-cost rule the agents' portfolios
use, so the ledger's realized P&L reconciles with ``PortfolioState`` to the
last Decimal digit.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from typing import List, Optional

from marketsim.domain import Fill, Side, SimError, SimTime, decimal_str

log = logging.getLogger(__name__)

ZERO = Decimal(0)


class Direction(str, enum.Enum):
    LONG = "long"
    SHORT = "short"

    @property
    def sign(self) -> int:
        return 1 if self is Direction.LONG else -1


@dataclass
class TradeRecord:
    direction: Direction
    qty: int
    entry_price: Decimal
    open_time: SimTime
    close_time: Optional[SimTime] = None
    exit_price: Optional[Decimal] = None
    realized_pnl: Decimal = ZERO
    is_open: bool = True

    @property
    def entry_notional(self) -> Decimal:
        return self.qty * self.entry_price

    def to_dict(self) -> dict:
        return {
            "direction": self.direction.value,
            "qty": self.qty,
            "entry_price": decimal_str(self.entry_price),
            "exit_price": None if self.exit_price is None else decimal_str(self.exit_price),
            "open_time": self.open_time,
            "close_time": self.close_time,
            "realized_pnl": decimal_str(self.realized_pnl),
            "open": self.is_open,
        }


@dataclass(frozen=True)
class ExecutedFill:
    """A fill as the evaluator saw it, kept for volume stats and chart markers."""

    exec_time: SimTime
    side: Side
    qty: int
    price: Decimal
    order_id: int
    action: Optional[str] = None
    explanation: str = ""

    @property
    def notional(self) -> Decimal:
        return self.qty * self.price

    def to_dict(self) -> dict:
        return {"exec_time": self.exec_time, "side": self.side.value, "qty": self.qty,
                "price": decimal_str(self.price), "order_id": self.order_id, "action": self.action,
                "explanation": self.explanation}


@dataclass(frozen=True)
class EquityPoint:
    sim_time: SimTime
    portfolio_value: Decimal


class TradeLedger:
    """Average-cost pairing of fills into open and closed trades.

    A partial close splits the open trade: the closed part becomes its own
    record and the remainder stays open at the same entry price.
    """

    def __init__(self) -> None:
        self.closed: List[TradeRecord] = []
        self.fills: List[ExecutedFill] = []
        self.open_long: Optional[TradeRecord] = None
        self.open_short: Optional[TradeRecord] = None
        self.realized_pnl = ZERO
        self._last_time: Optional[SimTime] = None

    @property
    def trades(self) -> List[TradeRecord]:
        """Closed trades in closing order, then any open trades."""
        return self.closed + [t for t in (self.open_long, self.open_short) if t is not None]

    def record(self, fill: ExecutedFill) -> List[TradeRecord]:
        """Apply one fill and return the trades it closed."""
        if self._last_time is not None and fill.exec_time < self._last_time:
            raise SimError(f"fill at {fill.exec_time} arrived after one at {self._last_time}", code="OUT_OF_ORDER")
        self._last_time = fill.exec_time
        self.fills.append(fill)
        if fill.side is Side.BUY:
            return self._apply(fill, "open_short", "open_long", Direction.LONG)
        return self._apply(fill, "open_long", "open_short", Direction.SHORT)

    def _apply(self, fill: ExecutedFill, against: str, toward: str, direction: Direction) -> List[TradeRecord]:
        qty, price, t = fill.qty, Decimal(fill.price), fill.exec_time
        closed = []
        opp: Optional[TradeRecord] = getattr(self, against)
        if opp is not None:
            n = min(qty, opp.qty)
            pnl = n * (price - opp.entry_price) * opp.direction.sign
            rec = TradeRecord(opp.direction, n, opp.entry_price, opp.open_time, t, price, pnl, False)
            self.closed.append(rec)
            closed.append(rec)
            self.realized_pnl += pnl
            opp.qty -= n
            if opp.qty == 0:
                setattr(self, against, None)
            qty -= n
        if qty:
            cur: Optional[TradeRecord] = getattr(self, toward)
            if cur is None:
                setattr(self, toward, TradeRecord(direction, qty, price, t))
            else:
                total = cur.qty + qty
                cur.entry_price = (cur.entry_price * cur.qty + price * qty) / total
                cur.qty = total
        return closed


class AgentRecorder:
    """Ledger plus equity curve for one agent."""

    def __init__(self, agent_id: str, initial_cash, start_time: SimTime = 0):
        self.agent_id = agent_id
        self.initial_cash = Decimal(initial_cash)
        self.ledger = TradeLedger()
        self.equity: List[EquityPoint] = [EquityPoint(start_time, self.initial_cash)]
        self.mismatches = 0

    def record_fill(self, fill: Fill, action: Optional[str] = None, portfolio_after=None,
                    explanation: str = "") -> List[TradeRecord]:
        ef = ExecutedFill(fill.exec_time, fill.side, fill.quantity, Decimal(fill.price), fill.order_id, action,
                          explanation)
        closed = self.ledger.record(ef)
        if portfolio_after is not None and portfolio_after.realized_pnl != self.ledger.realized_pnl:
            self.mismatches += 1
            log.warning("agent %s: ledger realized %s != portfolio realized %s", self.agent_id,
                        self.ledger.realized_pnl, portfolio_after.realized_pnl)
        return closed

    def mark(self, t: SimTime, value) -> None:
        """Append a close-marked equity point; a repeat timestamp replaces the last point."""
        value = Decimal(value)
        if self.equity and t < self.equity[-1].sim_time:
            raise SimError(f"equity point at {t} is before {self.equity[-1].sim_time}", code="OUT_OF_ORDER")
        if self.equity and t == self.equity[-1].sim_time and len(self.equity) > 1:
            self.equity[-1] = EquityPoint(t, value)
        else:
            self.equity.append(EquityPoint(t, value))

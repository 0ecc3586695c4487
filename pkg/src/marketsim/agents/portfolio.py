"""Portfolio accounting, trading actions and the position/cash constraint rules."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from decimal import Decimal, ROUND_FLOOR
from typing import Dict, List, Optional, Tuple, Union

from marketsim.domain import OrderType, Side, SimError, decimal_str, to_decimal

ZERO = Decimal(0)


class Action(str, enum.Enum):
    BUY = "BUY"
    SELL = "SELL"
    SHORT = "SHORT"
    SHORT_COVER = "SHORT_COVER"

    @property
    def side(self) -> Side:
        return Side.BUY if self in (Action.BUY, Action.SHORT_COVER) else Side.SELL


ACTION_KEYS = ("action", "orderType", "price", "quantity", "explanation")


@dataclass(frozen=True)
class ActionRequest:
    action: Action
    order_type: OrderType
    quantity: int
    price: Optional[Decimal] = None
    explanation: str = ""

    def to_dict(self) -> dict:
        """The provider wire shape (exact key names)."""
        return {
            "action": self.action.value,
            "orderType": self.order_type.value.upper(),
            "price": None if self.price is None else float(self.price),
            "quantity": self.quantity,
            "explanation": self.explanation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActionRequest":
        return parse_action(d)


def parse_action(d: object) -> ActionRequest:
    """Strict parse of one action object; any deviation raises MALFORMED_ACTION."""

    def bad(msg: str) -> SimError:
        return SimError(msg, code="MALFORMED_ACTION")

    if not isinstance(d, dict):
        raise bad(f"expected an object, got {type(d).__name__}")
    keys = set(d)
    if keys != set(ACTION_KEYS):
        extra = sorted(keys - set(ACTION_KEYS))
        missing = sorted(set(ACTION_KEYS) - keys)
        raise bad(f"fields must be exactly {list(ACTION_KEYS)}; unexpected {extra}, missing {missing}")
    try:
        action = Action(d["action"])
    except ValueError:
        raise bad(f"action must be BUY|SELL|SHORT|SHORT_COVER, got {d['action']!r}") from None
    if d["orderType"] not in ("MARKET", "LIMIT", "STOP"):
        raise bad(f"orderType must be MARKET|LIMIT|STOP, got {d['orderType']!r}")
    otype = OrderType(d["orderType"].lower())
    price = d["price"]
    if price is not None and (isinstance(price, bool) or not isinstance(price, (int, float))):
        raise bad(f"price must be a number or null, got {price!r}")
    qty = d["quantity"]
    if isinstance(qty, bool) or not isinstance(qty, int):
        raise bad(f"quantity must be an integer, got {qty!r}")
    if not isinstance(d["explanation"], str):
        raise bad("explanation must be a string")
    return ActionRequest(action, otype, qty, to_decimal(price), d["explanation"])


def parse_action_document(text: Union[str, bytes]) -> List[ActionRequest]:
    """Parse a provider response. The whole document is rejected on any error."""
    try:
        doc = json.loads(text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise SimError(f"response is not JSON: {exc}", code="MALFORMED_ACTION") from None
    if not isinstance(doc, list):
        raise SimError("response must be a JSON array", code="MALFORMED_ACTION")
    return [parse_action(d) for d in doc]


@dataclass(frozen=True)
class PortfolioState:
    cash: Decimal
    long_qty: int = 0
    short_qty: int = 0
    avg_entry_long: Decimal = ZERO
    avg_entry_short: Decimal = ZERO
    realized_pnl: Decimal = ZERO

    @property
    def net_qty(self) -> int:
        return self.long_qty - self.short_qty

    def market_value(self, mark: Decimal) -> Decimal:
        return self.cash + (self.long_qty - self.short_qty) * mark

    def unrealized_pnl(self, mark: Decimal) -> Decimal:
        return self.long_qty * (mark - self.avg_entry_long) + self.short_qty * (self.avg_entry_short - mark)

    def to_dict(self, mark: Optional[Decimal] = None) -> dict:
        d = {
            "cash": decimal_str(self.cash),
            "long_qty": self.long_qty,
            "short_qty": self.short_qty,
            "avg_entry_long": decimal_str(self.avg_entry_long),
            "avg_entry_short": decimal_str(self.avg_entry_short),
            "realized_pnl": decimal_str(self.realized_pnl),
        }
        if mark is not None:
            d["unrealized_pnl"] = decimal_str(self.unrealized_pnl(mark))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PortfolioState":
        return cls(Decimal(d["cash"]), int(d["long_qty"]), int(d["short_qty"]), Decimal(d["avg_entry_long"]),
                   Decimal(d["avg_entry_short"]), Decimal(d["realized_pnl"]))


def apply_fill(p: PortfolioState, side: Side, qty: int, price: Decimal) -> PortfolioState:
    """Average-cost update. A fill nets the opposite position before opening a new one."""
    price = Decimal(price)
    cash = p.cash - qty * price if side is Side.BUY else p.cash + qty * price
    realized = p.realized_pnl
    if side is Side.BUY:
        cover = min(qty, p.short_qty)
        realized += cover * (p.avg_entry_short - price)
        short = p.short_qty - cover
        avg_short = p.avg_entry_short if short else ZERO
        add = qty - cover
        long_ = p.long_qty + add
        avg_long = (p.avg_entry_long * p.long_qty + price * add) / long_ if add else p.avg_entry_long
        return PortfolioState(cash, long_, short, avg_long, avg_short, realized)
    close = min(qty, p.long_qty)
    realized += close * (price - p.avg_entry_long)
    long_ = p.long_qty - close
    avg_long = p.avg_entry_long if long_ else ZERO
    add = qty - close
    short = p.short_qty + add
    avg_short = (p.avg_entry_short * p.short_qty + price * add) / short if add else p.avg_entry_short
    return PortfolioState(cash, long_, short, avg_long, avg_short, realized)


def _floor_div(a: Decimal, b: Decimal) -> int:
    if b <= 0:
        return 0
    return max(0, int((a / b).to_integral_value(rounding=ROUND_FLOOR)))


def short_capacity(p: PortfolioState, price: Decimal) -> int:
    """Most lots SHORT may sell so the short book stays within the cash balance.

    Selling first closes any long; the short opened after that must satisfy
    short_qty * price <= cash - short_qty * price (cash net of the buy-back).
    """
    return p.long_qty + _floor_div(p.cash + p.long_qty * price - 2 * p.short_qty * price, price)


@dataclass(frozen=True)
class ConstraintResult:
    request: Optional[ActionRequest]
    reason: Optional[str] = None
    clipped: bool = False

    @property
    def accepted(self) -> bool:
        return self.request is not None


def order_price(req: ActionRequest, ref_price: Decimal) -> Decimal:
    if req.order_type is OrderType.MARKET or req.price is None:
        return ref_price
    return req.price


def enforce_constraints(req: ActionRequest, p: PortfolioState, ref_price) -> ConstraintResult:
    """Clip or reject ``req`` so it cannot break the cash and position rules."""
    ref = to_decimal(ref_price)
    if ref is None or ref <= 0:
        raise SimError(f"reference price must be positive, got {ref_price!r}", code="BAD_PRICE")
    if req.quantity <= 0:
        return ConstraintResult(None, "BAD_QUANTITY")
    px = order_price(req, ref)
    if px <= 0:
        return ConstraintResult(None, "BAD_PRICE")
    qty = req.quantity
    if req.action is Action.BUY:
        if qty * px > p.cash:
            return ConstraintResult(None, "INSUFFICIENT_CASH")
        return ConstraintResult(req)
    if req.action is Action.SHORT:
        if qty > short_capacity(p, px):
            return ConstraintResult(None, "INSUFFICIENT_CASH")
        return ConstraintResult(req)
    if req.action is Action.SELL:
        cap = p.long_qty
    else:
        cap = p.short_qty
    if cap <= 0:
        return ConstraintResult(None, "NO_POSITION")
    if req.action is Action.SHORT_COVER:
        afford = _floor_div(p.cash, px)
        if afford <= 0:
            return ConstraintResult(None, "INSUFFICIENT_CASH")
        cap = min(cap, afford)
    if qty > cap:
        return ConstraintResult(replace(req, quantity=cap), clipped=True)
    return ConstraintResult(req)


@dataclass
class Reservation:
    action: Action
    qty: int
    price: Optional[Decimal]  # limit price for cash holds, None when nothing is held

    @property
    def cash(self) -> Decimal:
        if self.price is None or self.action.side is Side.SELL:
            return ZERO
        return self.qty * self.price


class Account:
    """Engine-side book-keeping for one agent: state plus holds for open orders.

    Resting buy limits hold cash, resting SELLs hold long lots and resting
    SHORT_COVERs hold short lots. ``capacity`` gives the largest quantity an
    order may execute right now without breaking a rule, counting every hold
    except the order's own.
    """

    def __init__(self, agent_id: str, cash) -> None:
        self.agent_id = agent_id
        self.initial_cash = to_decimal(cash)
        self.state = PortfolioState(self.initial_cash)
        self.holds: Dict[int, Reservation] = {}
        self.reserved_cash = ZERO
        self.reserved_long = 0
        self.reserved_short = 0

    def available(self) -> PortfolioState:
        s = self.state
        return replace(s, cash=s.cash - self.reserved_cash, long_qty=s.long_qty - self.reserved_long,
                       short_qty=s.short_qty - self.reserved_short)

    def check(self, req: ActionRequest, ref_price) -> ConstraintResult:
        return enforce_constraints(req, self.available(), ref_price)

    def hold(self, order_id: int, action: Action, qty: int, limit: Optional[Decimal]) -> None:
        r = Reservation(action, qty, limit)
        self.holds[order_id] = r
        self._adjust(r, +1)

    def release(self, order_id: int) -> None:
        r = self.holds.pop(order_id, None)
        if r is not None:
            self._adjust(r, -1)

    def _adjust(self, r: Reservation, sign: int) -> None:
        self.reserved_cash += sign * r.cash
        if r.action is Action.SELL:
            self.reserved_long += sign * r.qty
        elif r.action is Action.SHORT_COVER:
            self.reserved_short += sign * r.qty

    def _others(self, order_id: Optional[int]) -> Tuple[Decimal, int, int]:
        r = self.holds.get(order_id) if order_id is not None else None
        if r is None:
            return self.reserved_cash, self.reserved_long, self.reserved_short
        own_long = r.qty if r.action is Action.SELL else 0
        own_short = r.qty if r.action is Action.SHORT_COVER else 0
        return self.reserved_cash - r.cash, self.reserved_long - own_long, self.reserved_short - own_short

    def capacity(self, order_id: Optional[int], action: Action, price: Decimal) -> Tuple[int, Optional[str]]:
        rc, rl, rs = self._others(order_id)
        s = self.state
        cash = s.cash - rc
        if action is Action.BUY:
            return _floor_div(cash, price), "INSUFFICIENT_CASH"
        if action is Action.SELL:
            return max(0, s.long_qty - rl), "NO_POSITION"
        if action is Action.SHORT_COVER:
            by_pos = max(0, s.short_qty - rs)
            by_cash = _floor_div(cash, price)
            return min(by_pos, by_cash), "NO_POSITION" if by_pos <= by_cash else "INSUFFICIENT_CASH"
        free = replace(s, cash=cash, long_qty=max(0, s.long_qty - rl))
        return short_capacity(free, price), "INSUFFICIENT_CASH"

    def fill(self, order_id: Optional[int], action: Action, qty: int, price: Decimal) -> PortfolioState:
        self.state = apply_fill(self.state, action.side, qty, price)
        r = self.holds.get(order_id) if order_id is not None else None
        if r is not None:
            self._adjust(r, -1)
            r.qty -= qty
            if r.qty <= 0:
                del self.holds[order_id]
            else:
                self._adjust(r, +1)
        return self.state

"""Shared vocabulary: instruments, orders, candles, fills and the time model.

Simulation time is integer milliseconds since the Unix epoch (UTC). Prices
cross module boundaries as ``Decimal`` and are converted to integer tick
counts wherever matching decisions are made, so equality is exact.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from typing import Optional, Sequence, Union

SimTime = int
Number = Union[int, float, str, Decimal]

_DURATION_RE = re.compile(r"^\s*(\d+)\s*(ms|s|m|h|d|w)\s*$")
_UNIT_MS = {"ms": 1, "s": 1_000, "m": 60_000, "h": 3_600_000, "d": 86_400_000, "w": 604_800_000}


class SimError(Exception):
    """Base error carrying a machine-readable code."""

    code = "SIM_ERROR"

    def __init__(self, message: str = "", *, code: Optional[str] = None, line: Optional[int] = None):
        if code is not None:
            self.code = code
        self.line = line
        prefix = f"{self.code}"
        if line is not None:
            prefix += f" (line {line})"
        super().__init__(f"{prefix}: {message}" if message else prefix)


class UnsortedInput(SimError):
    code = "UNSORTED_INPUT"


class AssetClass(str, enum.Enum):
    EQUITY = "equity"
    CRYPTO = "crypto"


class Side(str, enum.Enum):
    BUY = "buy"
    SELL = "sell"

    @property
    def opposite(self) -> "Side":
        return Side.SELL if self is Side.BUY else Side.BUY


class OrderType(str, enum.Enum):
    MARKET = "market"
    LIMIT = "limit"
    STOP = "stop"


class Liquidity(str, enum.Enum):
    MAKER = "maker"
    TAKER = "taker"


def parse_duration(value: Union[str, int]) -> int:
    """Parse ``"5m"``, ``"1h"``, ``"1d"`` (or a bare millisecond int) to milliseconds."""
    if isinstance(value, bool):
        raise ValueError(f"bad duration: {value!r}")
    if isinstance(value, int):
        if value < 0:
            raise ValueError(f"negative duration: {value}")
        return value
    m = _DURATION_RE.match(str(value))
    if not m:
        raise ValueError(f"bad duration: {value!r}")
    return int(m.group(1)) * _UNIT_MS[m.group(2)]


def parse_time(value: Union[str, int]) -> SimTime:
    """Epoch milliseconds from an int or an ISO-8601 string (naive strings are UTC)."""
    if isinstance(value, bool):
        raise ValueError(f"bad time: {value!r}")
    if isinstance(value, int):
        if value < 0:
            raise ValueError(f"negative time: {value}")
        return value
    dt = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(round(dt.timestamp() * 1000))


def format_time(t: SimTime) -> str:
    return datetime.fromtimestamp(t / 1000, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")[:-4] + "Z"


def to_decimal(x: Optional[Number]) -> Optional[Decimal]:
    if x is None or isinstance(x, Decimal):
        return x
    if isinstance(x, bool):
        raise TypeError("bool is not a price")
    if isinstance(x, float):
        return Decimal(repr(x))
    return Decimal(x)


def decimal_str(d: Decimal) -> str:
    """Canonical text for a decimal: no exponent, no trailing zeros."""
    if d == 0:
        return "0"
    return format(d.normalize(), "f")


@dataclass(frozen=True)
class Instrument:
    symbol: str
    asset_class: AssetClass = AssetClass.EQUITY
    tick_size: Decimal = Decimal("0.01")
    lot_size: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "tick_size", to_decimal(self.tick_size))
        object.__setattr__(self, "asset_class", AssetClass(self.asset_class))
        if not self.symbol or not re.fullmatch(r"[A-Z0-9][A-Z0-9._\-]*", self.symbol):
            raise ValueError(f"symbol must be a non-empty uppercase token, got {self.symbol!r}")
        if self.tick_size <= 0:
            raise ValueError("tick_size must be positive")
        if self.lot_size <= 0:
            raise ValueError("lot_size must be positive")

    def is_aligned(self, price: Number) -> bool:
        try:
            return (to_decimal(price) % self.tick_size) == 0
        except InvalidOperation:
            return False

    def to_ticks(self, price: Number) -> int:
        """Exact tick count for an aligned price; raises ``ValueError`` otherwise."""
        q = to_decimal(price) / self.tick_size
        if q != q.to_integral_value():
            raise ValueError(f"price {price} is not a multiple of tick {self.tick_size}")
        return int(q)

    def round_ticks(self, price: Number) -> int:
        """Nearest tick count (half-even) for prices that may be off-grid, e.g. vendor bars."""
        return int((to_decimal(price) / self.tick_size).to_integral_value())

    def from_ticks(self, ticks: int) -> Decimal:
        return ticks * self.tick_size


@dataclass(frozen=True)
class Order:
    order_id: int
    agent_id: str
    instrument: str
    side: Side
    order_type: OrderType
    quantity: int
    limit_price: Optional[Decimal] = None
    stop_price: Optional[Decimal] = None
    submit_time: SimTime = 0
    explanation: str = ""
    # BUY / SELL / SHORT / SHORT_COVER when the order came from an agent action
    action: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "side", Side(self.side))
        object.__setattr__(self, "order_type", OrderType(self.order_type))
        object.__setattr__(self, "limit_price", to_decimal(self.limit_price))
        object.__setattr__(self, "stop_price", to_decimal(self.stop_price))

    def to_dict(self) -> dict:
        return {
            "order_id": self.order_id,
            "agent_id": self.agent_id,
            "instrument": self.instrument,
            "side": self.side.value,
            "order_type": self.order_type.value,
            "quantity": self.quantity,
            "limit_price": None if self.limit_price is None else decimal_str(self.limit_price),
            "stop_price": None if self.stop_price is None else decimal_str(self.stop_price),
            "submit_time": self.submit_time,
            "explanation": self.explanation,
            "action": self.action,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Order":
        return cls(
            order_id=int(d["order_id"]),
            agent_id=d["agent_id"],
            instrument=d["instrument"],
            side=Side(d["side"]),
            order_type=OrderType(d["order_type"]),
            quantity=int(d["quantity"]),
            limit_price=d.get("limit_price"),
            stop_price=d.get("stop_price"),
            submit_time=int(d.get("submit_time", 0)),
            explanation=d.get("explanation") or "",
            action=d.get("action"),
        )


@dataclass(frozen=True)
class ValidationResult:
    accepted: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = ValidationResult(True)


def validate_order(order: Order, instrument: Instrument) -> ValidationResult:
    """Check an order against its invariants; rejection is returned, never raised."""
    if order.instrument != instrument.symbol:
        return ValidationResult(False, "UNKNOWN_INSTRUMENT")
    if isinstance(order.quantity, bool) or not isinstance(order.quantity, int) or order.quantity <= 0:
        return ValidationResult(False, "BAD_QUANTITY")
    if order.quantity % instrument.lot_size:
        return ValidationResult(False, "LOT_MISALIGNED")
    if order.order_type is OrderType.MARKET:
        if order.limit_price is not None or order.stop_price is not None:
            return ValidationResult(False, "PRICE_ON_MARKET")
    elif order.order_type is OrderType.LIMIT:
        if order.limit_price is None:
            return ValidationResult(False, "MISSING_LIMIT_PRICE")
        if order.stop_price is not None:
            return ValidationResult(False, "STOP_ON_LIMIT")
    elif order.order_type is OrderType.STOP:
        if order.stop_price is None:
            return ValidationResult(False, "MISSING_STOP_PRICE")
        if order.limit_price is not None:
            return ValidationResult(False, "LIMIT_ON_STOP")
    for p in (order.limit_price, order.stop_price):
        if p is None:
            continue
        if not p.is_finite() or p <= 0:
            return ValidationResult(False, "BAD_PRICE")
        if not instrument.is_aligned(p):
            return ValidationResult(False, "TICK_MISALIGNED")
    if order.submit_time < 0:
        return ValidationResult(False, "BAD_TIME")
    return ACCEPT


@dataclass(frozen=True)
class Candle:
    instrument: str
    open: float
    high: float
    low: float
    close: float
    volume: float
    bar_start: SimTime
    timeframe: int  # milliseconds

    @property
    def bar_end(self) -> SimTime:
        return self.bar_start + self.timeframe

    def problems(self) -> list[str]:
        out = []
        if self.low > min(self.open, self.close):
            out.append("low above open/close")
        if self.high < max(self.open, self.close):
            out.append("high below open/close")
        if self.low > self.high:
            out.append("low above high")
        if self.volume < 0:
            out.append("negative volume")
        if self.timeframe <= 0:
            out.append("non-positive timeframe")
        return out

    def is_valid(self) -> bool:
        return not self.problems()

    def to_dict(self) -> dict:
        return {
            "instrument": self.instrument,
            "open": self.open,
            "high": self.high,
            "low": self.low,
            "close": self.close,
            "volume": self.volume,
            "bar_start": self.bar_start,
            "bar_end": self.bar_end,
            "timeframe": self.timeframe,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Candle":
        return cls(d["instrument"], d["open"], d["high"], d["low"], d["close"], d["volume"],
                   int(d["bar_start"]), int(d["timeframe"]))


@dataclass(frozen=True)
class Fill:
    order_id: int
    price: Decimal
    quantity: int
    exec_time: SimTime
    liquidity: Liquidity
    side: Side
    counter_order_id: Optional[int] = None  # None = external book liquidity
    agent_id: Optional[str] = None
    self_match: bool = False

    def to_dict(self) -> dict:
        return {
            "order_id": self.order_id,
            "counter_order_id": self.counter_order_id,
            "price": decimal_str(self.price),
            "quantity": self.quantity,
            "exec_time": self.exec_time,
            "liquidity": self.liquidity.value,
            "side": self.side.value,
            "agent_id": self.agent_id,
            "self_match": self.self_match,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Fill":
        return cls(
            order_id=int(d["order_id"]),
            price=Decimal(d["price"]),
            quantity=int(d["quantity"]),
            exec_time=int(d["exec_time"]),
            liquidity=Liquidity(d["liquidity"]),
            side=Side(d["side"]),
            counter_order_id=d.get("counter_order_id"),
            agent_id=d.get("agent_id"),
            self_match=bool(d.get("self_match", False)),
        )


def aggregate_fills_to_candle(
    fills: Sequence[Fill], bar_start: SimTime, timeframe: int, instrument: str = ""
) -> Optional[Candle]:
    """Fold a time-sorted run of trade prints into one OHLCV bar.

    Returns ``None`` (absent bar) when there are no fills. Raises
    :class:`UnsortedInput` when timestamps go backwards.
    """
    if not fills:
        return None
    prev = None
    for f in fills:
        if prev is not None and f.exec_time < prev:
            raise UnsortedInput(f"fill at {f.exec_time} precedes {prev}")
        prev = f.exec_time
        if not bar_start <= f.exec_time < bar_start + timeframe:
            raise ValueError(f"fill at {f.exec_time} outside bar [{bar_start}, {bar_start + timeframe})")
    prices = [float(f.price) for f in fills]
    return Candle(
        instrument=instrument,
        open=prices[0],
        high=max(prices),
        low=min(prices),
        close=prices[-1],
        volume=float(sum(f.quantity for f in fills)),
        bar_start=bar_start,
        timeframe=timeframe,
    )


def bucket_start(t: SimTime, timeframe: int, origin: SimTime = 0) -> SimTime:
    return origin + ((t - origin) // timeframe) * timeframe


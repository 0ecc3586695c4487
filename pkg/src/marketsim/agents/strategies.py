"""Built-in deterministic strategies and the strategy registry."""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Deque, Dict, List, Optional, Union

from marketsim.agents.portfolio import Action, ActionRequest, PortfolioState, _floor_div
from marketsim.domain import Candle, OrderType, Side, SimError, SimTime


@dataclass(frozen=True)
class CancelRequest:
    order_id: int
    explanation: str = ""


Decision = Union[ActionRequest, CancelRequest]


@dataclass
class DecisionContext:
    """Everything a strategy may look at when asked to decide."""

    agent_id: str
    sim_time: SimTime
    market_open: bool
    portfolio: PortfolioState  # holdings net of holds for open orders
    last_price: Optional[Decimal]
    candle: Optional[Candle] = None
    indicators: Dict[str, object] = field(default_factory=dict)
    open_orders: Dict[int, dict] = field(default_factory=dict)
    news: List[dict] = field(default_factory=list)
    recent_activity: List[dict] = field(default_factory=list)
    window: Optional[tuple] = None
    action_interval: Optional[int] = None
    instrument: str = ""


class Strategy:
    """Base class. Strategies must be pure functions of the data they are fed and their seed."""

    name = "base"
    explanation = ""

    def on_market_data(self, candle: Candle, indicators: Dict[str, object]) -> None:
        pass

    def on_execution(self, report: dict) -> None:
        pass

    def decide(self, ctx: DecisionContext) -> List[Decision]:
        return []

    def close(self) -> None:
        pass


class BuyAndHold(Strategy):
    name = "buy_and_hold"

    def __init__(self) -> None:
        self.done = False

    def decide(self, ctx: DecisionContext) -> List[Decision]:
        if self.done or ctx.last_price is None:
            return []
        self.done = True
        qty = _floor_div(ctx.portfolio.cash, ctx.last_price)
        if qty <= 0:
            return []
        return [ActionRequest(Action.BUY, OrderType.MARKET, qty, None,
                              f"buy and hold: {qty} lots at market")]


class MACrossover(Strategy):
    """All-in long on a fast-over-slow SMA cross, flat again on the cross back."""

    name = "ma_crossover"

    def __init__(self, fast_n: int = 10, slow_n: int = 30) -> None:
        if not (0 < fast_n < slow_n):
            raise SimError(f"need 0 < fast_n < slow_n, got {fast_n}, {slow_n}", code="BAD_WINDOWS")
        self.fast_n, self.slow_n = fast_n, slow_n
        self.closes: Deque[float] = deque(maxlen=slow_n + 1)
        self.signal = 0  # +1 crossed up, -1 crossed down, 0 none on the last bar

    def on_market_data(self, candle: Candle, indicators: Dict[str, object]) -> None:
        self.closes.append(float(candle.close))
        self.signal = 0
        if len(self.closes) <= self.slow_n:
            return
        xs = list(self.closes)
        f, n = self.fast_n, self.slow_n
        fast_now, slow_now = sum(xs[-f:]) / f, sum(xs[-n:]) / n
        fast_prev, slow_prev = sum(xs[-f - 1:-1]) / f, sum(xs[-n - 1:-1]) / n
        if fast_prev <= slow_prev and fast_now > slow_now:
            self.signal = 1
        elif fast_prev >= slow_prev and fast_now < slow_now:
            self.signal = -1

    def decide(self, ctx: DecisionContext) -> List[Decision]:
        p = ctx.portfolio
        if self.signal > 0 and p.long_qty == 0 and ctx.last_price:
            qty = _floor_div(p.cash, ctx.last_price)
            if qty > 0:
                return [ActionRequest(Action.BUY, OrderType.MARKET, qty, None,
                                      f"SMA{self.fast_n} crossed above SMA{self.slow_n}")]
        if self.signal < 0 and p.long_qty > 0:
            return [ActionRequest(Action.SELL, OrderType.MARKET, p.long_qty, None,
                                  f"SMA{self.fast_n} crossed below SMA{self.slow_n}")]
        return []


class RandomTrader(Strategy):
    """Seeded noise trader; exercises every action and order type."""

    name = "random"

    def __init__(self, seed: Union[int, str] = 0, trade_prob: float = 0.3, max_qty: int = 10,
                 tick: str = "0.01", cancel_prob: float = 0.1) -> None:
        self.rng = random.Random(seed)
        self.trade_prob = trade_prob
        self.max_qty = max_qty
        self.tick = Decimal(tick)
        self.cancel_prob = cancel_prob

    def decide(self, ctx: DecisionContext) -> List[Decision]:
        rng = self.rng
        out: List[Decision] = []
        if ctx.open_orders and rng.random() < self.cancel_prob:
            oid = sorted(ctx.open_orders)[rng.randrange(len(ctx.open_orders))]
            out.append(CancelRequest(oid, "random cancel"))
        if ctx.last_price is None or rng.random() >= self.trade_prob:
            return out
        action = rng.choice(list(Action))
        otype = rng.choice([OrderType.MARKET, OrderType.LIMIT, OrderType.STOP])
        qty = rng.randint(1, self.max_qty)
        price = None
        if otype is not OrderType.MARKET:
            offset = Decimal(rng.randint(-100, 100)) * self.tick
            price = max(self.tick, (ctx.last_price + offset).quantize(self.tick))
            # keep stops on the triggering side of the last price
            if otype is OrderType.STOP:
                gap = abs(offset) + self.tick
                price = ctx.last_price + gap if action.side is Side.BUY else max(self.tick, ctx.last_price - gap)
        out.append(ActionRequest(action, otype, qty, price, f"random {action.value.lower()}"))
        return out


StrategyFactory = Callable[..., Strategy]

_REGISTRY: Dict[str, StrategyFactory] = {}


def register_strategy(name: str, factory: StrategyFactory) -> None:
    if name in _REGISTRY:
        raise SimError(f"strategy {name!r} already registered", code="DUPLICATE_STRATEGY")
    _REGISTRY[name] = factory


def strategy_names() -> List[str]:
    return sorted(_REGISTRY)


def make_strategy(name: str, params: Optional[dict] = None, seed: Union[int, str] = 0) -> Strategy:
    """Build a registered strategy. ``seed`` is passed to strategies that take one."""
    if name not in _REGISTRY:
        raise SimError(f"unknown strategy {name!r}; known: {strategy_names()}", code="UNKNOWN_STRATEGY")
    params = dict(params or {})
    factory = _REGISTRY[name]
    if getattr(factory, "seeded", False):
        params.setdefault("seed", seed)
    return factory(**params)


def _seeded(factory: StrategyFactory) -> StrategyFactory:
    factory.seeded = True  # type: ignore[attr-defined]
    return factory


register_strategy("buy_and_hold", BuyAndHold)
register_strategy("ma_crossover", MACrossover)
register_strategy("random", _seeded(RandomTrader))

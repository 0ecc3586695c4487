"""Performance metrics over a trade ledger and an equity curve.

Report keys are the row labels of the usual summary table (``"ROI"``,
``"Sharpe Ratio - SR"`` ...). Values are floats, ints or ``None`` when a
metric is undefined for the data (e.g. Sortino with fewer than two losing
periods).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

from marketsim.domain import SimError
from marketsim.evaluator.ledger import ZERO, EquityPoint, TradeLedger

PROFIT_FACTOR_NO_LOSS = 999.0

METRIC_NAMES = (
    "ROI",
    "Sharpe Ratio - SR",
    "Annualized SR",
    "Sortino Ratio",
    "Win Rate",
    "Profit Factor",
    "Max Drawdown",
    "Num Trades",
    "Num Closed Trades",
    "Total Traded Volume",
    "Average Trade Size",
    "ROIC",
    "Profit per Trade",
    "Last Portfolio Value",
    "Realized P&L",
)


@dataclass(frozen=True)
class MetricsConfig:
    risk_free_rate: float = 0.0  # annual
    periods_per_year: float = 252.0

    @property
    def rf_per_period(self) -> float:
        return self.risk_free_rate / self.periods_per_year


MetricFn = Callable[[TradeLedger, Sequence[EquityPoint]], object]
_CUSTOM: Dict[str, MetricFn] = {}


def register_metric(name: str, fn: MetricFn) -> None:
    if name in _CUSTOM or name in METRIC_NAMES:
        raise SimError(f"metric {name!r} already registered", code="DUPLICATE_METRIC")
    _CUSTOM[name] = fn


def unregister_metric(name: str) -> None:
    _CUSTOM.pop(name, None)


def custom_metric_names() -> List[str]:
    return list(_CUSTOM)


def period_returns(values: Sequence[float]) -> List[float]:
    """Simple returns; a step from a non-positive value has no defined return (nan)."""
    return [b / a - 1.0 if a > 0 else math.nan for a, b in zip(values, values[1:])]


def _usable(returns: Sequence[float]) -> bool:
    return all(math.isfinite(r) for r in returns)


def _stdev(xs: Sequence[float]) -> Optional[float]:
    """Sample standard deviation; None when it is zero or overflows."""
    m = math.fsum(xs) / len(xs)
    sd = math.sqrt(math.fsum((x - m) * (x - m) for x in xs) / (len(xs) - 1))
    return sd if sd > 0 and math.isfinite(sd) else None


def max_drawdown(values: Sequence[float]) -> float:
    """Largest fall from a running peak, as a fraction of that peak."""
    worst = 0.0
    peak = None
    for v in values:
        if peak is None or v > peak:
            peak = v
        if peak > 0:
            dd = (peak - v) / peak
            if dd > worst:
                worst = dd
    return worst


def sharpe(returns: Sequence[float], rf_per_period: float = 0.0) -> Optional[float]:
    if len(returns) < 2 or not _usable(returns):
        return None
    sd = _stdev(returns)
    if sd is None:
        return None
    return math.fsum(r - rf_per_period for r in returns) / len(returns) / sd


def sortino(returns: Sequence[float], rf_per_period: float = 0.0) -> Optional[float]:
    neg = [r for r in returns if r < 0]
    if len(neg) < 2 or not _usable(returns):
        return None
    sd = _stdev(neg)
    if sd is None:
        return None
    return math.fsum(r - rf_per_period for r in returns) / len(returns) / sd


def _finite(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def compute_metrics(ledger: TradeLedger, equity: Sequence[EquityPoint],
                    config: Optional[MetricsConfig] = None) -> Dict[str, object]:
    if not equity:
        raise SimError("equity series is empty", code="NO_EQUITY")
    cfg = config or MetricsConfig()
    values = [float(p.portfolio_value) for p in equity]
    initial, final = equity[0].portfolio_value, equity[-1].portfolio_value
    rets = period_returns(values)
    sr = sharpe(rets, cfg.rf_per_period)
    closed = ledger.closed
    pnls = [t.realized_pnl for t in closed]
    gross_profit = sum((p for p in pnls if p > 0), start=ZERO)
    gross_loss = -sum((p for p in pnls if p < 0), start=ZERO)
    if gross_loss > 0:
        pf: Optional[float] = float(gross_profit / gross_loss)
    elif gross_profit > 0:
        pf = PROFIT_FACTOR_NO_LOSS
    else:
        pf = None
    volume = sum((f.notional for f in ledger.fills), start=ZERO)
    deployed = sum((t.entry_notional for t in closed), start=ZERO)
    realized = ledger.realized_pnl
    n_fills = len(ledger.fills)
    out: Dict[str, object] = {
        "ROI": float((final - initial) / initial) if initial else None,
        "Sharpe Ratio - SR": sr,
        "Annualized SR": None if sr is None else sr * math.sqrt(cfg.periods_per_year),
        "Sortino Ratio": sortino(rets, cfg.rf_per_period),
        "Win Rate": sum(1 for p in pnls if p > 0) / len(closed) if closed else None,
        "Profit Factor": pf,
        "Max Drawdown": max_drawdown(values),
        "Num Trades": n_fills,
        "Num Closed Trades": len(closed),
        "Total Traded Volume": float(volume),
        "Average Trade Size": float(volume / n_fills) if n_fills else None,
        "ROIC": float(realized / deployed) if deployed else None,
        "Profit per Trade": float(realized / len(closed)) if closed else None,
        "Last Portfolio Value": float(final),
        "Realized P&L": float(realized),
    }
    for name, fn in _CUSTOM.items():
        out[name] = fn(ledger, equity)
    return {k: _finite(v) for k, v in out.items()}

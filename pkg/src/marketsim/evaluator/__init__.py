from marketsim.evaluator.ledger import (
    AgentRecorder,
    Direction,
    EquityPoint,
    ExecutedFill,
    TradeLedger,
    TradeRecord,
)
from marketsim.evaluator.metrics import (
    METRIC_NAMES,
    PROFIT_FACTOR_NO_LOSS,
    MetricsConfig,
    compute_metrics,
    max_drawdown,
    period_returns,
    register_metric,
    sharpe,
    sortino,
    unregister_metric,
)
from marketsim.evaluator.report import (
    build_report,
    canonical_bytes,
    load_run,
    regenerate,
    render_html,
    trades_csv,
    write_run,
)

__all__ = [
    "AgentRecorder", "Direction", "EquityPoint", "ExecutedFill", "METRIC_NAMES", "MetricsConfig",
    "PROFIT_FACTOR_NO_LOSS", "TradeLedger", "TradeRecord", "build_report", "canonical_bytes", "compute_metrics",
    "load_run", "max_drawdown", "period_returns", "regenerate", "register_metric", "render_html", "sharpe",
    "sortino", "trades_csv", "unregister_metric", "write_run",
]

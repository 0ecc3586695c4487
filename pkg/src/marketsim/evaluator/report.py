"""Run outputs: trade log, equity history, report.json, report.html, trades.csv.

Everything a report needs is written into the run directory, so
``load_run`` + ``build_report`` regenerate the same bytes later without
re-running the simulation.
"""

from __future__ import annotations

import csv
import html
import io
import json
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from marketsim.domain import Candle, Fill, SimError, decimal_str
from marketsim.evaluator.ledger import AgentRecorder, EquityPoint
from marketsim.evaluator.metrics import METRIC_NAMES, MetricsConfig, compute_metrics

TRADE_LOG = "trade_log.ndjson"
EQUITY_CSV = "equity.csv"
CANDLES_CSV = "candles.csv"
RUN_JSON = "run.json"
REPORT_JSON = "report.json"
REPORT_HTML = "report.html"
TRADES_CSV = "trades.csv"
AUDIT_LOG = "audit.ndjson"


def canonical_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n").encode("utf-8")


# -- trade log -------------------------------------------------------------


def trade_log_entry(seq: int, fill: Fill, action: Optional[str], explanation: str = "") -> dict:
    d = fill.to_dict()
    d["seq"] = seq
    d["action"] = action
    d["explanation"] = explanation
    return d


def trade_log_bytes(entries: Iterable[dict]) -> bytes:
    return b"".join(
        json.dumps(e, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8") + b"\n"
        for e in entries)


def read_trade_log(path) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- equity ------------------------------------------------------------------


def equity_csv(recorders: Dict[str, AgentRecorder]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["agent_id", "sim_time", "portfolio_value"])
    for aid, rec in recorders.items():
        for p in rec.equity:
            w.writerow([aid, p.sim_time, decimal_str(p.portfolio_value)])
    return buf.getvalue()


def trades_csv(recorders: Dict[str, AgentRecorder]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["agent_id", "direction", "qty", "entry_price", "exit_price", "open_time", "close_time",
            "realized_pnl", "open"]
    w.writerow(cols)
    for aid, rec in recorders.items():
        for t in rec.ledger.trades:
            d = t.to_dict()
            w.writerow([aid] + ["" if d[c] is None else d[c] for c in cols[1:]])
    return buf.getvalue()


# -- report ------------------------------------------------------------------


def build_report(meta: dict, recorders: Dict[str, AgentRecorder], config: Optional[MetricsConfig] = None) -> dict:
    """Report document: run metadata plus one metric block per agent, in roster order."""
    agents = {}
    for aid, rec in recorders.items():
        agents[aid] = {
            "initial_cash": decimal_str(rec.initial_cash),
            "metrics": compute_metrics(rec.ledger, rec.equity, config),
            "strategy": meta.get("strategies", {}).get(aid),
        }
    return {
        "run": {k: v for k, v in meta.items() if k != "strategies"},
        "metric_names": list(METRIC_NAMES),
        "agent_order": list(recorders),
        "agents": agents,
    }


@dataclass
class LoadedRun:
    meta: dict
    candles: List[Candle]
    recorders: Dict[str, AgentRecorder] = field(default_factory=dict)
    fills: List[dict] = field(default_factory=list)


def write_run(outdir: Path, meta: dict, candles: Sequence[Candle], recorders: Dict[str, AgentRecorder],
              log_entries: Sequence[dict], config: Optional[MetricsConfig] = None) -> dict:
    """Write every run artifact into ``outdir`` (which must exist) and return the report."""
    from marketsim.data import write_ohlcv_csv

    outdir = Path(outdir)
    (outdir / RUN_JSON).write_bytes(canonical_bytes(meta))
    (outdir / TRADE_LOG).write_bytes(trade_log_bytes(log_entries))
    (outdir / EQUITY_CSV).write_text(equity_csv(recorders), encoding="utf-8")
    (outdir / TRADES_CSV).write_text(trades_csv(recorders), encoding="utf-8")
    write_ohlcv_csv(candles, outdir / CANDLES_CSV)
    report = build_report(meta, recorders, config)
    (outdir / REPORT_JSON).write_bytes(canonical_bytes(report))
    (outdir / REPORT_HTML).write_text(render_html(report, candles, recorders), encoding="utf-8")
    return report


def load_run(rundir) -> LoadedRun:
    """Rebuild ledgers and equity curves from a finished run directory."""
    from marketsim.data import load_ohlcv_csv

    rundir = Path(rundir)
    if not (rundir / RUN_JSON).exists():
        raise SimError(f"{rundir} is not a run directory (no {RUN_JSON})", code="MISSING_FILE")
    meta = json.loads((rundir / RUN_JSON).read_text(encoding="utf-8"))
    candles = load_ohlcv_csv(rundir / CANDLES_CSV, timeframe=meta.get("timeframe"),
                             instrument=meta.get("instrument", "")).candles
    recorders = {a["agent_id"]: AgentRecorder(a["agent_id"], a["initial_cash"], meta.get("start_time", 0))
                 for a in meta["agents"]}
    fills = read_trade_log(rundir / TRADE_LOG)
    for e in fills:
        if e.get("agent_id") in recorders:
            recorders[e["agent_id"]].record_fill(Fill.from_dict(e), e.get("action"), None, e.get("explanation", ""))
    with open(rundir / EQUITY_CSV, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in recorders.values():
        r.equity = []
    for row in rows:
        recorders[row["agent_id"]].equity.append(EquityPoint(int(row["sim_time"]), Decimal(row["portfolio_value"])))
    return LoadedRun(meta, candles, recorders, fills)


def metrics_config(meta: dict) -> MetricsConfig:
    m = meta.get("metrics") or {}
    return MetricsConfig(float(m.get("risk_free_rate", 0.0)), float(m.get("periods_per_year", 252.0)))


def regenerate(rundir, fmt: str) -> Path:
    """Rewrite report.json or report.html of a run directory from its artifacts."""
    run = load_run(rundir)
    report = build_report(run.meta, run.recorders, metrics_config(run.meta))
    rundir = Path(rundir)
    if fmt == "json":
        path = rundir / REPORT_JSON
        path.write_bytes(canonical_bytes(report))
    elif fmt == "html":
        path = rundir / REPORT_HTML
        path.write_text(render_html(report, run.candles, run.recorders), encoding="utf-8")
    else:
        raise SimError(f"unknown report format {fmt!r}", code="BAD_FORMAT")
    return path


# -- HTML --------------------------------------------------------------------

_W, _PRICE_H, _VOL_H, _EQ_H, _PAD = 960, 320, 80, 160, 40


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4f}" if abs(v) < 10 else f"{v:,.2f}"
    return str(v)


def _scale(lo: float, hi: float, top: float, height: float):
    span = (hi - lo) or 1.0
    return lambda v: top + height * (hi - float(v)) / span


def _bar_index(candles: Sequence[Candle], t: int) -> int:
    lo, hi = 0, len(candles) - 1
    while lo < hi:  # last bar with bar_start <= t
        mid = (lo + hi + 1) // 2
        if candles[mid].bar_start <= t:
            lo = mid
        else:
            hi = mid - 1
    return lo


def _chart(candles: Sequence[Candle], recorders: Dict[str, AgentRecorder], order: List[str]) -> str:
    n = len(candles)
    step = (_W - 2 * _PAD) / max(n, 1)
    x = lambda i: _PAD + step * (i + 0.5)  # noqa: E731
    lo = min(c.low for c in candles)
    hi = max(c.high for c in candles)
    y = _scale(lo, hi, _PAD, _PRICE_H)
    vmax = max(c.volume for c in candles) or 1.0
    vtop = _PAD + _PRICE_H + 10
    body_w = max(step * 0.6, 0.5)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{vtop + _VOL_H + _PAD}" '
             f'class="chart"><g class="candles">']
    for i, c in enumerate(candles):
        color = "#2a9d5c" if c.close >= c.open else "#d1495b"
        top, bot = y(max(c.open, c.close)), y(min(c.open, c.close))
        parts.append(
            f'<g><title>{html.escape(f"t={c.bar_start} O={c.open} H={c.high} L={c.low} C={c.close} V={c.volume}")}'
            f'</title><line x1="{x(i):.2f}" x2="{x(i):.2f}" y1="{y(c.high):.2f}" y2="{y(c.low):.2f}" '
            f'stroke="{color}"/><rect x="{x(i) - body_w / 2:.2f}" y="{top:.2f}" width="{body_w:.2f}" '
            f'height="{max(bot - top, 0.5):.2f}" fill="{color}"/></g>')
    parts.append('</g><g class="volume">')
    for i, c in enumerate(candles):
        h = _VOL_H * c.volume / vmax
        parts.append(f'<rect x="{x(i) - body_w / 2:.2f}" y="{vtop + _VOL_H - h:.2f}" width="{body_w:.2f}" '
                     f'height="{h:.2f}" fill="#8899aa"/>')
    parts.append("</g>")
    for k, aid in enumerate(order):
        hidden = "" if k == 0 else ' style="display:none"'
        parts.append(f'<g class="markers" data-agent="{html.escape(aid)}"{hidden}>')
        for f in recorders[aid].ledger.fills:
            i = _bar_index(candles, f.exec_time)
            buy = f.side.value == "buy"
            glyph, color = ("▲", "#1b6ca8") if buy else ("▼", "#e07a1f")
            label = f"{(f.action or f.side.value).upper()} {f.qty} @ {decimal_str(f.price)}"
            if f.explanation:
                label += f": {f.explanation}"
            parts.append(f'<text class="marker {"buy" if buy else "sell"}" x="{x(i):.2f}" '
                         f'y="{y(float(f.price)) + (12 if buy else -4):.2f}" text-anchor="middle" fill="{color}" '
                         f'font-size="11"><title>{html.escape(label)}</title>{glyph}</text>')
        parts.append("</g>")
    parts.append("</svg>")
    return "".join(parts)


def _equity_chart(recorders: Dict[str, AgentRecorder], order: List[str]) -> str:
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_EQ_H + 2 * _PAD}" class="equity">']
    for k, aid in enumerate(order):
        pts = recorders[aid].equity
        if not pts:
            continue
        vals = [float(p.portfolio_value) for p in pts]
        t0, t1 = pts[0].sim_time, pts[-1].sim_time
        y = _scale(min(vals), max(vals), _PAD, _EQ_H)
        span = (t1 - t0) or 1
        coords = " ".join(f"{_PAD + (_W - 2 * _PAD) * (p.sim_time - t0) / span:.2f},{y(v):.2f}"
                          for p, v in zip(pts, vals))
        hidden = "" if k == 0 else ' style="display:none"'
        parts.append(f'<g class="curve" data-agent="{html.escape(aid)}"{hidden}><polyline fill="none" '
                     f'stroke="#1b6ca8" stroke-width="1.5" points="{coords}"/>'
                     f'<text x="{_PAD}" y="{_PAD - 8}" font-size="12">{html.escape(aid)}: '
                     f'{vals[0]:,.2f} to {vals[-1]:,.2f}</text></g>')
    parts.append("</svg>")
    return "".join(parts)


_SCRIPT = """
function show(id){for(const g of document.querySelectorAll('[data-agent]')){
g.style.display = g.getAttribute('data-agent') === id ? '' : 'none';}}
"""


def render_html(report: dict, candles: Sequence[Candle], recorders: Dict[str, AgentRecorder]) -> str:
    """One self-contained page: candles with trade markers, volume, equity and the metric table."""
    order = report["agent_order"]
    names = report["metric_names"] + sorted({k for a in report["agents"].values() for k in a["metrics"]}
                                            - set(report["metric_names"]))
    run = report["run"]
    title = f"{run.get('instrument', '')} {run.get('mode', '')} run"
    out = [f"<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>{html.escape(title)}</title>",
           "<style>body{font-family:sans-serif;margin:20px}table{border-collapse:collapse;font-size:12px}"
           "td,th{border:1px solid #ccc;padding:2px 6px;text-align:right}th:first-child,td:first-child"
           "{text-align:left}.empty{color:#777;font-style:italic}</style>",
           f"<script>{_SCRIPT}</script></head><body><h1>{html.escape(title)}</h1>"]
    if order:
        opts = "".join(f'<option value="{html.escape(a)}">{html.escape(a)}</option>' for a in order)
        out.append(f'<p>Agent: <select onchange="show(this.value)">{opts}</select></p>')
    if candles:
        out.append(_chart(candles, recorders, order))
    else:
        out.append('<p class="empty">no candles</p>')
    if not any(recorders[a].ledger.fills for a in order):
        out.append('<p class="empty">no trades</p>')
    out.append(_equity_chart(recorders, order))
    out.append("<h2>Metrics</h2><table><tr><th>agent</th>")
    out.append("".join(f"<th>{html.escape(n)}</th>" for n in names) + "</tr>")
    for aid in order:
        m = report["agents"][aid]["metrics"]
        out.append(f"<tr><td>{html.escape(aid)}</td>" + "".join(f"<td>{_fmt(m.get(n))}</td>" for n in names)
                   + "</tr>")
    out.append("</table></body></html>\n")
    return "".join(out)

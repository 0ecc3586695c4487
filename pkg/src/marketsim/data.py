"""Offline data adapters: provider files in, canonical records out.

All timestamps are epoch milliseconds UTC. Loaders are pure functions of the
file contents; everything is loaded before the simulation starts.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

from marketsim.domain import Candle, SimError, SimTime, parse_time
from marketsim.matching.replay import BookEvent, EventKind

log = logging.getLogger(__name__)

PathLike = Union[str, Path]
OHLCV_HEADER = ["timestamp_ms", "open", "high", "low", "close", "volume"]
EVENT_HEADER = ["time_ms", "kind", "order_id", "side", "price", "qty"]


def _open(path: PathLike):
    try:
        return open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise SimError(f"no such file: {path}", code="MISSING_FILE") from None


def _parse_err(msg: str, line: int) -> SimError:
    return SimError(msg, code="PARSE_ERROR", line=line)


# -- OHLCV -------------------------------------------------------------------


@dataclass
class OhlcvSeries:
    candles: List[Candle]
    timeframe: int
    warnings: List[str] = field(default_factory=list)
    gaps: List[Tuple[SimTime, SimTime]] = field(default_factory=list)  # (last bar before, first bar after)

    def __len__(self) -> int:
        return len(self.candles)

    def __iter__(self) -> Iterator[Candle]:
        return iter(self.candles)

    def __getitem__(self, i):
        return self.candles[i]


def load_ohlcv_csv(path: PathLike, timeframe: Optional[int] = None, instrument: str = "") -> OhlcvSeries:
    """Read ``timestamp_ms,open,high,low,close,volume`` rows into validated candles.

    Rows out of time order are sorted (with a warning). When ``timeframe`` is
    not given it is taken as the smallest spacing between bars.
    """
    rows: List[Tuple[int, int, float, float, float, float, float]] = []
    with _open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != OHLCV_HEADER:
            raise _parse_err(f"header must be {','.join(OHLCV_HEADER)}, got {header}", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 6:
                raise _parse_err(f"expected 6 columns, got {len(row)}", line)
            try:
                ts = int(row[0])
                o, h, l, c, v = (float(x) for x in row[1:])
            except ValueError as exc:
                raise _parse_err(str(exc), line) from None
            rows.append((ts, line, o, h, l, c, v))
    warnings: List[str] = []
    if any(a[0] > b[0] for a, b in zip(rows, rows[1:])):
        warnings.append(f"{path}: rows were not in time order and have been sorted")
        rows.sort(key=lambda r: r[0])
    for a, b in zip(rows, rows[1:]):
        if a[0] == b[0]:
            raise SimError(f"duplicate timestamp {a[0]}", code="INVALID_BAR", line=b[1])
    if timeframe is None:
        diffs = [b[0] - a[0] for a, b in zip(rows, rows[1:])]
        timeframe = min(diffs) if diffs else 60_000
    candles = []
    for ts, line, o, h, l, c, v in rows:
        candle = Candle(instrument, o, h, l, c, v, ts, timeframe)
        problems = candle.problems()
        if problems:
            raise SimError("; ".join(problems), code="INVALID_BAR", line=line)
        candles.append(candle)
    gaps = [(a.bar_start, b.bar_start) for a, b in zip(candles, candles[1:]) if b.bar_start - a.bar_start > timeframe]
    for w in warnings:
        log.warning(w)
    return OhlcvSeries(candles, timeframe, warnings, gaps)


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_ohlcv_csv(candles: Sequence[Candle], path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OHLCV_HEADER)
        for c in candles:
            w.writerow([c.bar_start, _num(c.open), _num(c.high), _num(c.low), _num(c.close), _num(c.volume)])


# -- order events ----------------------------------------------------------


@dataclass
class EventLoad:
    events: List[BookEvent]
    skipped: Counter = field(default_factory=Counter)  # unmapped type code -> count
    warnings: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[BookEvent]:
        return iter(self.events)


def _native_events(path: PathLike) -> EventLoad:
    out = EventLoad([])
    with _open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != EVENT_HEADER:
            raise _parse_err(f"header must be {','.join(EVENT_HEADER)}", 1)
        for row in reader:
            if not row:
                continue
            try:
                t, kind, oid, side, price, qty = row
                out.events.append(BookEvent(int(t), EventKind(kind), int(oid), side, Decimal(price), int(qty)))
            except (ValueError, InvalidOperation) as exc:
                raise _parse_err(str(exc) or "bad row", reader.line_num) from None
    return out


# LOBSTER message types; 5 (hidden execution), 6 (cross) and 7 (halt) have no book effect here
_LOBSTER_KINDS = {1: EventKind.ADD, 2: EventKind.CANCEL, 3: EventKind.CANCEL, 4: EventKind.EXECUTE}


def _lobster_events(path: PathLike, date_ms: SimTime) -> EventLoad:
    out = EventLoad([])
    with _open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            cols = raw.split(",")
            if len(cols) < 6:
                raise _parse_err(f"expected 6 columns, got {len(cols)}", line_no)
            try:
                secs = Decimal(cols[0])
                etype, oid, size, price, direction = (int(c) for c in cols[1:6])
            except (ValueError, InvalidOperation) as exc:
                raise _parse_err(str(exc) or "bad number", line_no) from None
            kind = _LOBSTER_KINDS.get(etype)
            if kind is None:
                out.skipped[etype] += 1
                continue
            if direction not in (1, -1):
                raise _parse_err(f"direction must be 1 or -1, got {direction}", line_no)
            t = date_ms + int(secs * 1000)
            qty = size if etype != 3 else 0  # a deletion removes whatever remains
            side = "buy" if direction == 1 else "sell"
            out.events.append(BookEvent(t, kind, oid, side, Decimal(price) / 10_000, qty))
    if out.skipped:
        out.warnings.append(f"skipped LOBSTER types {dict(sorted(out.skipped.items()))}")
    return out


def load_order_events(path: PathLike, dialect: str = "native", date: Union[str, int, None] = None) -> EventLoad:
    """Order-book events in the native CSV dialect or LOBSTER message format.

    LOBSTER times are seconds after midnight; ``date`` (ISO date or epoch ms)
    gives the midnight they count from.
    """
    if dialect == "native":
        return _native_events(path)
    if dialect == "lobster":
        return _lobster_events(path, parse_time(date) if date is not None else 0)
    raise SimError(f"unknown event dialect {dialect!r}", code="UNKNOWN_DIALECT")


def write_order_events(events: Sequence[BookEvent], path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_HEADER)
        for ev in events:
            w.writerow(ev.as_row())


# -- news and fundamentals -------------------------------------------------


@dataclass(frozen=True)
class CanonicalNewsItem:
    published_at: SimTime
    symbols: Tuple[str, ...]
    headline: str
    summary: str = ""
    source: str = ""
    url: Optional[str] = None

    def to_dict(self) -> dict:
        return {"published_at": self.published_at, "symbols": list(self.symbols), "headline": self.headline,
                "summary": self.summary, "source": self.source, "url": self.url}


@dataclass(frozen=True)
class CanonicalFundamentals:
    as_of: SimTime
    symbol: str
    ratios: Dict[str, float] = field(default_factory=dict)
    events: Tuple[dict, ...] = ()  # splits, dividends, earnings dates: {"type": ..., ...}
    extras: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"as_of": self.as_of, "symbol": self.symbol, "ratios": dict(self.ratios),
                "events": list(self.events), "extras": dict(self.extras)}


def _jsonl(path: PathLike) -> Iterator[Tuple[int, dict]]:
    with _open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except ValueError as exc:
                raise _parse_err(f"invalid JSON: {exc}", line_no) from None
            if not isinstance(obj, dict):
                raise _parse_err("each line must be a JSON object", line_no)
            yield line_no, obj


def _time_field(obj: dict, key: str, line: int) -> SimTime:
    if obj.get(key) is None:
        raise _parse_err(f"missing {key}", line)
    try:
        return parse_time(obj[key])
    except (ValueError, TypeError) as exc:
        raise _parse_err(f"bad {key}: {exc}", line) from None


def load_news_jsonl(path: PathLike) -> List[CanonicalNewsItem]:
    items = []
    for line, obj in _jsonl(path):
        t = _time_field(obj, "published_at", line)
        syms = obj.get("symbols", obj.get("symbol", []))
        if isinstance(syms, str):
            syms = [syms]
        items.append(CanonicalNewsItem(t, tuple(syms), str(obj.get("headline", "")), str(obj.get("summary", "")),
                                       str(obj.get("source", "")), obj.get("url")))
    items.sort(key=lambda n: n.published_at)
    return items


_FUND_KNOWN = {"as_of", "symbol", "ratios", "events"}


def load_fundamentals_jsonl(path: PathLike) -> List[CanonicalFundamentals]:
    out = []
    for line, obj in _jsonl(path):
        t = _time_field(obj, "as_of", line)
        if not obj.get("symbol"):
            raise _parse_err("missing symbol", line)
        extras = {k: v for k, v in obj.items() if k not in _FUND_KNOWN}
        out.append(CanonicalFundamentals(t, obj["symbol"], dict(obj.get("ratios", {})),
                                         tuple(obj.get("events", ())), extras))
    out.sort(key=lambda f: f.as_of)
    return out


class ExternalStore:
    """Time-indexed external data with symbol lookup; never answers past ``now``."""

    KINDS = ("news", "fundamentals", "events")

    def __init__(self, news: Sequence[CanonicalNewsItem] = (), fundamentals: Sequence[CanonicalFundamentals] = ()):
        self.news = sorted(news, key=lambda n: n.published_at)
        self._news_t = [n.published_at for n in self.news]
        self.fundamentals = sorted(fundamentals, key=lambda f: f.as_of)
        self._fund_t = [f.as_of for f in self.fundamentals]

    def query(self, symbol: str, kind: str, start: SimTime, end: SimTime, now: SimTime) -> List[dict]:
        if kind not in self.KINDS:
            raise SimError(f"unknown data kind {kind!r}", code="UNKNOWN_KIND")
        if end > now:
            raise SimError(f"window end {end} is after the current time {now}", code="FUTURE_WINDOW")
        if kind == "news":
            lo, hi = bisect.bisect_left(self._news_t, start), bisect.bisect_right(self._news_t, end)
            return [n.to_dict() for n in self.news[lo:hi] if symbol in n.symbols]
        lo, hi = bisect.bisect_left(self._fund_t, start), bisect.bisect_right(self._fund_t, end)
        rows = [f for f in self.fundamentals[lo:hi] if f.symbol == symbol]
        if kind == "fundamentals":
            return [f.to_dict() for f in rows]
        return [dict(e, as_of=f.as_of, symbol=f.symbol) for f in rows for e in f.events]

    def news_between(self, symbol: str, after: SimTime, upto: SimTime) -> List[dict]:
        """Items with after < published_at <= upto (for pushing as time advances)."""
        lo, hi = bisect.bisect_right(self._news_t, after), bisect.bisect_right(self._news_t, upto)
        return [n.to_dict() for n in self.news[lo:hi] if symbol in n.symbols]


# -- adapter registry ------------------------------------------------------


@dataclass(frozen=True)
class AdapterDescriptor:
    name: str
    kind: str  # ohlcv | events | news | fundamentals
    input_format: str
    loader: Callable[..., object]
    description: str = ""


_ADAPTERS: Dict[str, AdapterDescriptor] = {}


def register_adapter(desc: AdapterDescriptor) -> AdapterDescriptor:
    if desc.name in _ADAPTERS:
        raise SimError(f"adapter {desc.name!r} already registered", code="DUPLICATE_PROVIDER")
    _ADAPTERS[desc.name] = desc
    return desc


def unregister_adapter(name: str) -> None:
    _ADAPTERS.pop(name, None)


def get_adapter(name: str) -> AdapterDescriptor:
    try:
        return _ADAPTERS[name]
    except KeyError:
        raise SimError(f"unknown data adapter {name!r}; known: {sorted(_ADAPTERS)}", code="UNKNOWN_PROVIDER") from None


def adapter_names() -> List[str]:
    return sorted(_ADAPTERS)


def load_with(name: str, path: PathLike, **kw):
    return get_adapter(name).loader(path, **kw)


register_adapter(AdapterDescriptor("csv_ohlcv", "ohlcv", "csv", load_ohlcv_csv, "timestamp_ms,open,high,low,close,volume"))
register_adapter(AdapterDescriptor("native_events", "events", "csv",
                                   lambda p, **kw: load_order_events(p, "native", **kw), "time_ms,kind,order_id,side,price,qty"))
register_adapter(AdapterDescriptor("lobster", "events", "csv",
                                   lambda p, **kw: load_order_events(p, "lobster", **kw), "LOBSTER message file"))
register_adapter(AdapterDescriptor("news_jsonl", "news", "jsonl", load_news_jsonl, "one news object per line"))
register_adapter(AdapterDescriptor("fundamentals_jsonl", "fundamentals", "jsonl", load_fundamentals_jsonl,
                                   "one fundamentals snapshot per line"))

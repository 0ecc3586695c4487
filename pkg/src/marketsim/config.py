"""Run configuration: one TOML file describes data, mode, session, agents and outputs.

Validation happens before any work starts. Unknown keys are errors and the
seed is mandatory. ``RunConfig.to_dict`` emits exactly the keys that were
given (plus defaults), so load -> dump -> load is a fixed point.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import tomli
import tomli_w

from marketsim.agents.strategies import make_strategy, strategy_names
from marketsim.candles import Calendar, CalendarKind
from marketsim.data import get_adapter
from marketsim.domain import Instrument, SimError, SimTime, parse_duration, parse_time
from marketsim.indicators import FRAME_KEYS, IndicatorConfig
from marketsim.matching.latency import LatencyModel

MODES = ("candle_level", "order_level")
TRANSPORTS = ("inprocess", "tcp")
STREAM_KINDS = {"bars": "ohlcv", "events": "events", "news": "news", "fundamentals": "fundamentals"}


class ConfigError(SimError):
    """Invalid configuration. ``key`` is the dotted path of the offending entry when known."""

    code = "CONFIG_ERROR"

    def __init__(self, message: str = "", *, key: Optional[str] = None, code: Optional[str] = None,
                 line: Optional[int] = None):
        super().__init__(message, code=code, line=line)
        self.detail = message
        self.key = key


def _fail(msg: str, key: Optional[str] = None) -> ConfigError:
    return ConfigError(msg, key=key)


def _join(where: str, key: str) -> str:
    return key if where == "config" else f"{where}.{key}"


def _check_keys(where: str, table: dict, allowed, required=()) -> None:
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise _fail(f"{where}: unknown key(s) {extra}; allowed: {sorted(allowed)}", _join(where, extra[0]))
    missing = [k for k in required if k not in table]
    if missing:
        raise _fail(f"{where}: missing required key(s) {missing}", None if where == "config" else where)


def _typed(where: str, value, kinds, what: str):
    bool_ok = bool in (kinds if isinstance(kinds, tuple) else (kinds,))
    if (isinstance(value, bool) and not bool_ok) or not isinstance(value, kinds):
        raise _fail(f"{where} must be {what}, got {value!r}", where)
    return value


@dataclass
class DataSource:
    adapter: str
    path: str
    date: Optional[str] = None  # midnight for LOBSTER seconds-after-midnight times

    def to_dict(self) -> dict:
        d = {"adapter": self.adapter, "path": self.path}
        if self.date is not None:
            d["date"] = self.date
        return d


@dataclass
class SessionConfig:
    start: Optional[Union[str, int]] = None
    end: Optional[Union[str, int]] = None
    action_interval: Optional[Union[str, int]] = None
    calendar: str = "per_bar"
    open: str = "00:00"
    close: str = "24:00"
    decision_timeout: float = 30.0  # seconds an agent may take per tick

    @property
    def start_ms(self) -> Optional[SimTime]:
        return None if self.start is None else parse_time(self.start)

    @property
    def end_ms(self) -> Optional[SimTime]:
        return None if self.end is None else parse_time(self.end)

    @property
    def interval_ms(self) -> Optional[int]:
        return None if self.action_interval is None else parse_duration(self.action_interval)

    def calendar_obj(self, bar_ms: int) -> Calendar:
        return Calendar(CalendarKind(self.calendar), _minutes(self.open), _minutes(self.close), bar_ms=bar_ms)

    def to_dict(self) -> dict:
        d: Dict[str, Any] = {"calendar": self.calendar, "decision_timeout": self.decision_timeout}
        for k in ("start", "end", "action_interval"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        if self.calendar == "daily":
            d["open"], d["close"] = self.open, self.close
        return d


def _minutes(hhmm: str) -> int:
    m = re.fullmatch(r"(\d{1,2}):(\d{2})", hhmm)
    if not m or int(m.group(2)) >= 60 or int(m.group(1)) * 60 + int(m.group(2)) > 24 * 60:
        raise _fail(f"session time must be HH:MM, got {hhmm!r}")
    return int(m.group(1)) * 60 + int(m.group(2))


@dataclass
class AgentSpec:
    """One roster entry; ``count`` > 1 expands into numbered agents."""

    strategy: str
    initial_cash: str = "100000"
    id: Optional[str] = None
    count: int = 1
    params: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        d: Dict[str, Any] = {"strategy": self.strategy, "initial_cash": self.initial_cash}
        if self.id is not None:
            d["id"] = self.id
        if self.count != 1:
            d["count"] = self.count
        if self.params:
            d["params"] = dict(self.params)
        if self.seed is not None:
            d["seed"] = self.seed
        return d


@dataclass(frozen=True)
class AgentEntry:
    """A concrete agent after roster expansion."""

    agent_id: str
    agent_no: int
    strategy: str
    params: Dict[str, Any]
    initial_cash: str
    seed: int


@dataclass
class RunConfig:
    seed: int
    mode: str
    instrument: Instrument
    data: Dict[str, DataSource]
    agents: List[AgentSpec]
    session: SessionConfig = field(default_factory=SessionConfig)
    latency: LatencyModel = field(default_factory=LatencyModel)
    indicators: Optional[List[str]] = None  # None = all built-ins
    indicator_params: IndicatorConfig = field(default_factory=IndicatorConfig)
    risk_free_rate: float = 0.0
    periods_per_year: float = 252.0
    transport: str = "inprocess"
    processes: bool = False
    output_dir: Optional[str] = None
    base_dir: Path = field(default=Path("."), compare=False)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def roster(self) -> List[AgentEntry]:
        out: List[AgentEntry] = []
        seen = set()
        for spec in self.agents:
            base = spec.id or spec.strategy
            for i in range(spec.count):
                aid = base if spec.count == 1 else f"{base}-{i + 1:03d}"
                if aid in seen:
                    raise _fail(f"duplicate agent id {aid!r}")
                seen.add(aid)
                seed = spec.seed + i if spec.seed is not None else derive_seed(self.seed, aid)
                out.append(AgentEntry(aid, len(out) + 1, spec.strategy, dict(spec.params), spec.initial_cash, seed))
        return out

    def to_dict(self) -> dict:
        ins = self.instrument
        d: Dict[str, Any] = {
            "seed": self.seed,
            "mode": self.mode,
            "instrument": {"symbol": ins.symbol, "tick_size": str(ins.tick_size), "lot_size": ins.lot_size,
                           "asset_class": ins.asset_class.value},
            "data": {k: v.to_dict() for k, v in self.data.items()},
            "session": self.session.to_dict(),
            "latency": {"mode": self.latency.mode, "base_ms": self.latency.base_ms,
                        "jitter_ms": self.latency.jitter_ms},
            "indicators": dict(self.indicator_params.to_dict()),
            "metrics": {"risk_free_rate": self.risk_free_rate, "periods_per_year": self.periods_per_year},
            "transport": {"kind": self.transport, "processes": self.processes},
            "agents": [a.to_dict() for a in self.agents],
        }
        if self.indicators is not None:
            d["indicators"]["enabled"] = list(self.indicators)
        if self.output_dir is not None:
            d["output_dir"] = self.output_dir
        return d

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())


def derive_seed(run_seed: int, agent_id: str) -> int:
    """Per-agent seed that depends only on the run seed and the agent id."""
    digest = hashlib.sha256(f"{run_seed}/{agent_id}".encode()).digest()
    return int.from_bytes(digest[:6], "big")


# -- parsing -----------------------------------------------------------------

_TOP = {"seed", "mode", "instrument", "data", "session", "latency", "indicators", "metrics", "transport",
        "agents", "output_dir"}


def parse_config(doc: dict, base_dir: Union[str, Path] = ".") -> RunConfig:
    _check_keys("config", doc, _TOP, ("seed", "mode", "instrument", "data", "agents"))
    seed = _typed("seed", doc["seed"], int, "an integer")
    mode = doc["mode"]
    if mode not in MODES:
        raise _fail(f"mode must be one of {MODES}, got {mode!r}", "mode")
    instrument = _parse_instrument(doc["instrument"])
    data = _parse_data(doc["data"], mode)
    session = _parse_session(doc.get("session", {}), mode)
    latency = _parse_latency(doc.get("latency", {}), seed)
    enabled, ind = _parse_indicators(doc.get("indicators", {}))
    metrics = doc.get("metrics", {})
    _check_keys("metrics", metrics, ("risk_free_rate", "periods_per_year"))
    rf = float(_typed("metrics.risk_free_rate", metrics.get("risk_free_rate", 0.0), (int, float), "a number"))
    ppy = float(_typed("metrics.periods_per_year", metrics.get("periods_per_year", 252.0), (int, float), "a number"))
    if ppy <= 0:
        raise _fail("metrics.periods_per_year must be positive")
    transport = doc.get("transport", {})
    _check_keys("transport", transport, ("kind", "processes"))
    kind = transport.get("kind", "inprocess")
    if kind not in TRANSPORTS:
        raise _fail(f"transport.kind must be one of {TRANSPORTS}, got {kind!r}", "transport.kind")
    processes = _typed("transport.processes", transport.get("processes", False), bool, "true or false")
    if processes and kind != "tcp":
        raise _fail("transport.processes requires transport.kind = \"tcp\"")
    agents = _parse_agents(doc["agents"])
    out = doc.get("output_dir")
    if out is not None:
        _typed("output_dir", out, str, "a string")
    cfg = RunConfig(seed, mode, instrument, data, agents, session, latency, enabled, ind, rf, ppy, kind, processes,
                    out, Path(base_dir))
    cfg.roster()  # duplicate ids are a config error
    return cfg


def _parse_instrument(t) -> Instrument:
    if isinstance(t, str):
        t = {"symbol": t}
    _typed("instrument", t, dict, "a table or a symbol string")
    _check_keys("instrument", t, ("symbol", "tick_size", "lot_size", "asset_class"), ("symbol",))
    try:
        return Instrument(t["symbol"], t.get("asset_class", "equity"), str(t.get("tick_size", "0.01")),
                          int(t.get("lot_size", 1)))
    except (ValueError, TypeError, ArithmeticError) as exc:
        raise _fail(f"instrument: {exc}", "instrument") from None


def _parse_data(t, mode: str) -> Dict[str, DataSource]:
    _typed("data", t, dict, "a table")
    _check_keys("data", t, STREAM_KINDS)
    need = "bars" if mode == "candle_level" else "events"
    if need not in t:
        raise _fail(f"data.{need} is required in {mode} mode")
    out = {}
    for name, src in t.items():
        where = f"data.{name}"
        _typed(where, src, dict, "a table")
        _check_keys(where, src, ("adapter", "path", "date"), ("adapter", "path"))
        try:
            desc = get_adapter(src["adapter"])
        except SimError as exc:
            raise _fail(f"{where}: {exc}", f"{where}.adapter") from None
        if desc.kind != STREAM_KINDS[name]:
            raise _fail(f"{where}: adapter {desc.name!r} reads {desc.kind}, not {STREAM_KINDS[name]}",
                        f"{where}.adapter")
        date = src.get("date")
        if date is not None:
            date = str(date)
        out[name] = DataSource(src["adapter"], _typed(f"{where}.path", src["path"], str, "a string"), date)
    return out


def _parse_session(t, mode: str) -> SessionConfig:
    _typed("session", t, dict, "a table")
    _check_keys("session", t, ("start", "end", "action_interval", "calendar", "open", "close", "decision_timeout"))
    s = SessionConfig(**t)
    try:
        s.start_ms, s.end_ms, s.interval_ms
    except (ValueError, TypeError) as exc:
        raise _fail(f"session: {exc}") from None
    if s.calendar not in {c.value for c in CalendarKind}:
        raise _fail(f"session.calendar must be one of {[c.value for c in CalendarKind]}, got {s.calendar!r}",
                    "session.calendar")
    _minutes(s.open), _minutes(s.close)
    if mode == "order_level" and not s.interval_ms:
        raise _fail("session.action_interval is required in order_level mode", "session")
    if s.interval_ms == 0:
        raise _fail("session.action_interval must be positive", "session.action_interval")
    if s.start_ms is not None and s.end_ms is not None and s.end_ms <= s.start_ms:
        raise _fail("session.end must be after session.start")
    if not isinstance(s.decision_timeout, (int, float)) or s.decision_timeout <= 0:
        raise _fail("session.decision_timeout must be a positive number of seconds")
    return s


def _parse_latency(t, seed: int) -> LatencyModel:
    _typed("latency", t, dict, "a table")
    _check_keys("latency", t, ("mode", "base_ms", "jitter_ms"))
    try:
        return LatencyModel(t.get("mode", "fixed"), int(t.get("base_ms", 0)), int(t.get("jitter_ms", 0)), seed)
    except (ValueError, TypeError) as exc:
        raise _fail(f"latency: {exc}") from None


_IND_KEYS = set(IndicatorConfig().to_dict())


def _parse_indicators(t) -> Tuple[Optional[List[str]], IndicatorConfig]:
    _typed("indicators", t, dict, "a table")
    _check_keys("indicators", t, _IND_KEYS | {"enabled"})
    enabled = t.get("enabled")
    if enabled is not None:
        from marketsim.indicators import _CUSTOM

        bad = [k for k in enabled if k not in FRAME_KEYS and k not in _CUSTOM]
        if bad:
            raise _fail(f"indicators.enabled: unknown indicator(s) {bad}", "indicators.enabled")
        enabled = list(enabled)
    params = {k: v for k, v in t.items() if k != "enabled"}
    try:
        return enabled, IndicatorConfig(**params)
    except SimError as exc:
        raise _fail(f"indicators: {exc}") from None
    except TypeError as exc:
        raise _fail(f"indicators: {exc}") from None


def _parse_agents(t) -> List[AgentSpec]:
    _typed("agents", t, list, "an array of tables")
    if not t:
        raise _fail("agents: at least one agent is required")
    known = strategy_names()
    out = []
    for i, a in enumerate(t):
        where = f"agents[{i}]"
        _typed(where, a, dict, "a table")
        _check_keys(where, a, ("strategy", "initial_cash", "id", "count", "params", "seed"), ("strategy",))
        if a["strategy"] not in known:
            raise _fail(f"{where}.strategy: unknown strategy {a['strategy']!r}; known: {known}", f"{where}.strategy")
        count = _typed(f"{where}.count", a.get("count", 1), int, "an integer")
        if count < 1:
            raise _fail(f"{where}.count must be >= 1", f"{where}.count")
        cash = str(_typed(f"{where}.initial_cash", a.get("initial_cash", "100000"), (str, int, float), "a number"))
        try:
            if float(cash) < 0:
                raise ValueError
        except ValueError:
            raise _fail(f"{where}.initial_cash must be a non-negative number, got {cash!r}",
                        f"{where}.initial_cash") from None
        params = _typed(f"{where}.params", a.get("params", {}), dict, "a table")
        try:
            make_strategy(a["strategy"], dict(params), 0)
        except (TypeError, ValueError, SimError) as exc:
            raise _fail(f"{where}.params: {exc}", f"{where}.params") from None
        seed = a.get("seed")
        if seed is not None:
            _typed(f"{where}.seed", seed, int, "an integer")
        aid = a.get("id")
        if aid is not None and not re.fullmatch(r"[A-Za-z0-9_.\-]+", str(aid)):
            raise _fail(f"{where}.id must be letters, digits, '_', '.' or '-', got {aid!r}")
        out.append(AgentSpec(a["strategy"], cash, aid, count, dict(params), seed))
    return out


def _syntax_line(exc: tomli.TOMLDecodeError) -> Optional[int]:
    m = re.search(r"line (\d+)", str(exc))
    return int(m.group(1)) if m else None


def loads_config(text: str, base_dir: Union[str, Path] = ".") -> RunConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", line=_syntax_line(exc)) from None
    try:
        return parse_config(doc, base_dir)
    except ConfigError as exc:
        if exc.line is None and exc.key:
            raise ConfigError(exc.detail, key=exc.key, line=locate_key(text, exc.key)) from None
        raise


def locate_key(text: str, key: str) -> Optional[int]:
    """Line number of a dotted key such as ``session.calendar`` or ``agents[2].strategy``."""
    parts = re.findall(r"([A-Za-z_][A-Za-z0-9_]*)(?:\[(\d+)\])?", key)
    lines = text.splitlines()
    header_re = re.compile(r"\s*(\[\[?)\s*([A-Za-z0-9_.\s]+?)\s*\]\]?\s*(#.*)?$")
    tables: List[Tuple[int, str, bool]] = []  # (line index, dotted name, is array element)
    for i, line in enumerate(lines):
        m = header_re.match(line)
        if m:
            tables.append((i, re.sub(r"\s+", "", m.group(2)), m.group(1) == "[["))

    def body(start: int) -> range:
        nxt = [t[0] for t in tables if t[0] > start]
        return range(start + 1, nxt[0] if nxt else len(lines))

    def find_assign(rng, name: str) -> Optional[int]:
        for i in rng:
            if re.match(rf"\s*{re.escape(name)}\s*=", lines[i]):
                return i + 1
        return None

    names = [p[0] for p in parts]
    top = range(0, tables[0][0] if tables else len(lines))
    # try the longest table prefix that exists, then look for the remaining key inside it
    for cut in range(len(parts), 0, -1):
        prefix = ".".join(names[:cut])
        idx = int(parts[cut - 1][1]) if parts[cut - 1][1] else None
        hits = [t for t in tables if t[1] == prefix]
        if idx is not None:
            hits = [t for t in hits if t[2]]
            hits = hits[idx:idx + 1]
        if hits:
            start = hits[0][0]
            if cut == len(parts):
                return start + 1
            found = find_assign(body(start), names[cut])
            return found if found is not None else start + 1
    found = find_assign(top, names[0])
    if found is not None:
        return found
    for i, line in enumerate(lines):
        if re.search(rf"\b{re.escape(names[-1])}\s*=", line):
            return i + 1
    return None


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"no such config file: {path}", code="MISSING_CONFIG") from None
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return loads_config(text, path.parent)

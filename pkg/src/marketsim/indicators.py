"""Technical indicators, as batch functions and as a streaming engine.

Batch functions raise ``SimError(code="WARMUP")`` when the input is too short.
The streaming :class:`IndicatorEngine` reports ``None`` for anything still
warming up and produces frames equal to batch recomputation at every step.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple

from marketsim.domain import Candle, SimError, SimTime


def _warmup(need: int, have: int) -> SimError:
    return SimError(f"need {need} values, have {have}", code="WARMUP")


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def sma(closes: Sequence[float], n: int) -> float:
    """Mean of the last ``n`` values."""
    if len(closes) < n:
        raise _warmup(n, len(closes))
    return _mean(list(closes)[len(closes) - n:])


def ema(closes: Sequence[float], n: int) -> List[Optional[float]]:
    """EMA series, ``None`` before index n-1; seeded with the SMA of the first n."""
    if len(closes) < n:
        raise _warmup(n, len(closes))
    out: List[Optional[float]] = [None] * len(closes)
    e = _mean(closes[:n])
    out[n - 1] = e
    alpha = 2.0 / (n + 1)
    for i in range(n, len(closes)):
        e = _ema_step(e, closes[i], alpha)
        out[i] = e
    return out


def _ema_step(prev: float, x: float, alpha: float) -> float:
    return alpha * x + (1.0 - alpha) * prev


def _rsi_value(avg_gain: float, avg_loss: float) -> float:
    if avg_loss == 0:
        return 100.0
    if avg_gain == 0:
        return 0.0
    rs = avg_gain / avg_loss
    return 100.0 - 100.0 / (1.0 + rs)


def rsi_series(closes: Sequence[float], n: int) -> List[Optional[float]]:
    """Wilder RSI at every index, ``None`` for the first n closes."""
    if len(closes) < n + 1:
        raise _warmup(n + 1, len(closes))
    out: List[Optional[float]] = [None] * len(closes)
    diffs = [closes[i] - closes[i - 1] for i in range(1, len(closes))]
    g = _mean([max(d, 0.0) for d in diffs[:n]])
    l = _mean([max(-d, 0.0) for d in diffs[:n]])
    out[n] = _rsi_value(g, l)
    for i in range(n, len(diffs)):
        g, l = _wilder(g, l, diffs[i], n)
        out[i + 1] = _rsi_value(g, l)
    return out


def _wilder(g: float, l: float, d: float, n: int) -> Tuple[float, float]:
    return (g * (n - 1) + max(d, 0.0)) / n, (l * (n - 1) + max(-d, 0.0)) / n


def rsi(closes: Sequence[float], n: int) -> float:
    return rsi_series(closes, n)[-1]


def true_range(candle: Candle, prev_close: Optional[float] = None) -> float:
    h, l = candle.high, candle.low
    if prev_close is None:
        return h - l
    return max(h - l, abs(h - prev_close), abs(l - prev_close))


def true_ranges(candles: Sequence[Candle]) -> List[float]:
    return [true_range(c, candles[i - 1].close if i else None) for i, c in enumerate(candles)]


def atr(candles: Sequence[Candle], n: int) -> float:
    """Simple mean of the last n true ranges (first bar's TR is H-L)."""
    if len(candles) < n:
        raise _warmup(n, len(candles))
    return _mean(true_ranges(candles)[-n:])


def macd_series(closes: Sequence[float], fast: int = 12, slow: int = 26,
                signal: int = 9) -> List[Optional[Tuple[float, Optional[float], Optional[float]]]]:
    if fast >= slow:
        raise SimError("macd fast window must be below slow", code="BAD_WINDOWS")
    if len(closes) < slow:
        raise _warmup(slow, len(closes))
    ef, es = ema(closes, fast), ema(closes, slow)
    out: List = [None] * len(closes)
    line_vals: List[float] = []
    sig = None
    alpha = 2.0 / (signal + 1)
    for i in range(slow - 1, len(closes)):
        line = ef[i] - es[i]
        line_vals.append(line)
        if len(line_vals) == signal:
            sig = _mean(line_vals)
        elif len(line_vals) > signal:
            sig = _ema_step(sig, line, alpha)
        out[i] = (line, sig, None if sig is None else line - sig)
    return out


def macd(closes: Sequence[float], fast: int = 12, slow: int = 26, signal: int = 9) -> Tuple[float, float, float]:
    """(line, signal line, histogram) at the last close."""
    need = slow + signal - 1
    if len(closes) < need:
        raise _warmup(need, len(closes))
    return macd_series(closes, fast, slow, signal)[-1]


def bollinger(closes: Sequence[float], n: int = 20, k: float = 2.0) -> Tuple[float, float, float]:
    """(mid, upper, lower) with population standard deviation."""
    if len(closes) < n:
        raise _warmup(n, len(closes))
    window = list(closes)[len(closes) - n:]
    mid = _mean(window)
    sd = math.sqrt(math.fsum((x - mid) ** 2 for x in window) / n)
    return mid, mid + k * sd, mid - k * sd


def vwap(trades: Sequence[Tuple[float, float]]) -> float:
    """Volume-weighted price of (price, volume) pairs."""
    vol = math.fsum(v for _, v in trades)
    if vol <= 0:
        raise SimError("zero volume", code="NO_VOLUME")
    return math.fsum(p * v for p, v in trades) / vol


def typical_price(c: Candle) -> float:
    return (c.high + c.low + c.close) / 3.0


def vwap_bars(candles: Sequence[Candle]) -> float:
    return vwap([(typical_price(c), c.volume) for c in candles])


def order_book_imbalance(bids: Sequence[Tuple[object, float]], asks: Sequence[Tuple[object, float]],
                         depth: Optional[int] = None) -> float:
    """(Qbid - Qask) / (Qbid + Qask) over the top ``depth`` levels of each ladder."""
    qb = sum(q for _, q in bids[:depth])
    qa = sum(q for _, q in asks[:depth])
    if qb + qa == 0:
        return 0.0
    return (qb - qa) / (qb + qa)


def _swings(values: Sequence[float], w: int, lower: bool) -> List[int]:
    idx = []
    for i in range(w, len(values) - w):
        v = values[i]
        others = [values[j] for j in range(i - w, i + w + 1) if j != i]
        if all(v < o for o in others) if lower else all(v > o for o in others):
            idx.append(i)
    return idx


def _dedup_recent_first(levels: Sequence[float], tick: float, limit: Optional[int] = None) -> List[float]:
    out: List[float] = []
    for lv in levels:
        if limit is not None and len(out) >= limit:
            break
        if all(abs(lv - kept) > tick + 1e-9 for kept in out):
            out.append(lv)
    return out


def support_resistance(candles: Sequence[Candle], w: int, tick: float = 0.01) -> Tuple[List[float], List[float]]:
    """Swing lows and highs over a centered window of 2w+1 bars.

    Levels come back most-recent-first; a level within one tick of a more
    recent one is dropped.
    """
    if len(candles) < 2 * w + 1:
        raise _warmup(2 * w + 1, len(candles))
    lows = [c.low for c in candles]
    highs = [c.high for c in candles]
    sup = [lows[i] for i in reversed(_swings(lows, w, True))]
    res = [highs[i] for i in reversed(_swings(highs, w, False))]
    return _dedup_recent_first(sup, tick), _dedup_recent_first(res, tick)


# -- configuration and frames -------------------------------------------------


@dataclass
class IndicatorConfig:
    sma_n: int = 20
    ema_n: int = 20
    rsi_n: int = 14
    atr_n: int = 14
    macd: Tuple[int, int, int] = (12, 26, 9)
    bollinger: Tuple[int, float] = (20, 2.0)
    imbalance_depth: int = 5
    swing_window: int = 3
    max_levels: int = 5
    tick: float = 0.01

    def __post_init__(self) -> None:
        self.macd = tuple(self.macd)
        self.bollinger = tuple(self.bollinger)
        windows = [self.sma_n, self.ema_n, self.rsi_n, self.atr_n, *self.macd, self.bollinger[0],
                   self.imbalance_depth, self.swing_window, self.max_levels]
        if any(int(x) != x or x < 1 for x in windows):
            raise SimError(f"indicator windows must be integers >= 1: {windows}", code="BAD_WINDOWS")
        if self.macd[0] >= self.macd[1]:
            raise SimError("macd fast window must be below slow", code="BAD_WINDOWS")

    def to_dict(self) -> dict:
        return {"sma_n": self.sma_n, "ema_n": self.ema_n, "rsi_n": self.rsi_n, "atr_n": self.atr_n,
                "macd": list(self.macd), "bollinger": list(self.bollinger),
                "imbalance_depth": self.imbalance_depth, "swing_window": self.swing_window,
                "max_levels": self.max_levels, "tick": self.tick}


FRAME_KEYS = ("sma", "ema", "rsi", "macd_line", "macd_signal", "macd_hist", "tr", "atr",
              "bb_mid", "bb_upper", "bb_lower", "vwap", "imbalance", "support_levels", "resistance_levels")


@dataclass(frozen=True)
class IndicatorFrame:
    """Indicator values at the end of one bar. ``None`` means warming up or undefined."""

    bar_start: SimTime
    values: Dict[str, object] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values.get(key)

    def to_dict(self) -> dict:
        return {"bar_start": self.bar_start, "values": dict(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "IndicatorFrame":
        return cls(int(d["bar_start"]), dict(d.get("values", {})))


# custom indicators: name -> factory(config) returning an object with update(candle, book) -> value
_CUSTOM: Dict[str, Callable[[IndicatorConfig], object]] = {}


def register_indicator(name: str, factory: Callable[[IndicatorConfig], object]) -> None:
    if name in FRAME_KEYS or name in _CUSTOM:
        raise SimError(f"indicator {name!r} already registered", code="DUPLICATE_INDICATOR")
    _CUSTOM[name] = factory


def unregister_indicator(name: str) -> None:
    _CUSTOM.pop(name, None)


class IndicatorEngine:
    """Incremental per-instrument indicator state.

    Each call to :meth:`update` folds one finished bar in and returns the
    frame for it. Windows are kept as bounded deques so the cost per bar does
    not grow with the length of the run.
    """

    def __init__(self, config: Optional[IndicatorConfig] = None, enabled: Optional[Sequence[str]] = None):
        self.config = cfg = config or IndicatorConfig()
        self.enabled = set(enabled) if enabled is not None else None
        fast, slow, sig = cfg.macd
        keep = max(cfg.sma_n, cfg.bollinger[0])
        self._closes: Deque[float] = deque(maxlen=keep)
        self._trs: Deque[float] = deque(maxlen=cfg.atr_n)
        self._count = 0
        self._prev_close: Optional[float] = None
        self._ema: Optional[float] = None
        self._ema_seed: List[float] = []
        self._fast: Optional[float] = None
        self._slow: Optional[float] = None
        self._fast_seed: List[float] = []
        self._slow_seed: List[float] = []
        self._sig: Optional[float] = None
        self._sig_seed: List[float] = []
        self._rsi_diffs: List[float] = []
        self._avg_gain: Optional[float] = None
        self._avg_loss: Optional[float] = None
        self._vwap_pv: List[float] = []
        self._vwap_v: List[float] = []
        w = cfg.swing_window
        self._recent: Deque[Candle] = deque(maxlen=2 * w + 1)
        # raw swing levels, oldest first
        self._supports: List[float] = []
        self._resistances: List[float] = []
        self._custom = {name: factory(cfg) for name, factory in _CUSTOM.items()}

    def _want(self, key: str) -> bool:
        return self.enabled is None or key in self.enabled

    @staticmethod
    def _seeded_ema(state: Optional[float], seed: List[float], x: float, n: int) -> Tuple[Optional[float], List[float]]:
        if state is None:
            seed.append(x)
            if len(seed) == n:
                return _mean(seed), []
            return None, seed
        return _ema_step(state, x, 2.0 / (n + 1)), seed

    def reset_session(self) -> None:
        """Start a new VWAP accumulation (called at session open)."""
        self._vwap_pv.clear()
        self._vwap_v.clear()

    def update(self, candle: Candle, book=None) -> IndicatorFrame:
        cfg = self.config
        x = float(candle.close)
        self._count += 1
        self._closes.append(x)
        vals: Dict[str, object] = {}

        # moving averages and bands
        vals["sma"] = _mean(list(self._closes)[-cfg.sma_n:]) if self._count >= cfg.sma_n else None
        self._ema, self._ema_seed = self._seeded_ema(self._ema, self._ema_seed, x, cfg.ema_n)
        vals["ema"] = self._ema
        n, k = cfg.bollinger
        if self._count >= n:
            vals["bb_mid"], vals["bb_upper"], vals["bb_lower"] = bollinger(list(self._closes), n, k)
        else:
            vals["bb_mid"] = vals["bb_upper"] = vals["bb_lower"] = None

        # rsi
        if self._prev_close is not None:
            d = x - self._prev_close
            if self._avg_gain is None:
                self._rsi_diffs.append(d)
                if len(self._rsi_diffs) == cfg.rsi_n:
                    self._avg_gain = _mean([max(v, 0.0) for v in self._rsi_diffs])
                    self._avg_loss = _mean([max(-v, 0.0) for v in self._rsi_diffs])
                    self._rsi_diffs = []
            else:
                self._avg_gain, self._avg_loss = _wilder(self._avg_gain, self._avg_loss, d, cfg.rsi_n)
        vals["rsi"] = None if self._avg_gain is None else _rsi_value(self._avg_gain, self._avg_loss)

        # macd
        fast, slow, sig = cfg.macd
        self._fast, self._fast_seed = self._seeded_ema(self._fast, self._fast_seed, x, fast)
        self._slow, self._slow_seed = self._seeded_ema(self._slow, self._slow_seed, x, slow)
        line = hist = None
        if self._slow is not None:
            line = self._fast - self._slow
            self._sig, self._sig_seed = self._seeded_ema(self._sig, self._sig_seed, line, sig)
            if self._sig is not None:
                hist = line - self._sig
        vals["macd_line"], vals["macd_signal"], vals["macd_hist"] = line, self._sig, hist

        # ranges
        tr = true_range(candle, self._prev_close)
        self._trs.append(tr)
        vals["tr"] = tr
        vals["atr"] = _mean(self._trs) if self._count >= cfg.atr_n else None
        self._prev_close = x

        # vwap since session open
        self._vwap_pv.append(typical_price(candle) * candle.volume)
        self._vwap_v.append(float(candle.volume))
        vol = math.fsum(self._vwap_v)
        vals["vwap"] = math.fsum(self._vwap_pv) / vol if vol > 0 else None

        # book imbalance, order-level mode only
        vals["imbalance"] = None
        if book is not None:
            vals["imbalance"] = order_book_imbalance(book.bids, book.asks, cfg.imbalance_depth)

        # swing levels: the bar w bars back is confirmed once w more have printed
        self._recent.append(candle)
        w = cfg.swing_window
        if len(self._recent) == 2 * w + 1:
            mid = self._recent[w]
            lows = [c.low for c in self._recent]
            highs = [c.high for c in self._recent]
            if all(mid.low < v for i, v in enumerate(lows) if i != w):
                self._supports.append(mid.low)
            if all(mid.high > v for i, v in enumerate(highs) if i != w):
                self._resistances.append(mid.high)
            vals["support_levels"] = _dedup_recent_first(self._supports[::-1], cfg.tick, cfg.max_levels)
            vals["resistance_levels"] = _dedup_recent_first(self._resistances[::-1], cfg.tick, cfg.max_levels)
        else:
            vals["support_levels"] = vals["resistance_levels"] = None

        for name, ind in self._custom.items():
            vals[name] = ind.update(candle, book)

        if self.enabled is not None:
            vals = {key: v for key, v in vals.items() if key in self.enabled}
        return IndicatorFrame(candle.bar_start, vals)


def batch_frame(candles: Sequence[Candle], config: Optional[IndicatorConfig] = None) -> Dict[str, object]:
    """Recompute every built-in value for the last bar from scratch (book-free)."""
    cfg = config or IndicatorConfig()
    closes = [float(c.close) for c in candles]

    def attempt(fn, *a):
        try:
            return fn(*a)
        except SimError:
            return None

    out: Dict[str, object] = {"sma": attempt(sma, closes, cfg.sma_n)}
    e = attempt(ema, closes, cfg.ema_n)
    out["ema"] = e[-1] if e else None
    out["rsi"] = attempt(rsi, closes, cfg.rsi_n)
    m = attempt(macd_series, closes, *cfg.macd)
    out["macd_line"], out["macd_signal"], out["macd_hist"] = m[-1] if m else (None, None, None)
    out["tr"] = true_range(candles[-1], candles[-2].close if len(candles) > 1 else None)
    out["atr"] = attempt(atr, candles, cfg.atr_n)
    b = attempt(bollinger, closes, *cfg.bollinger)
    out["bb_mid"], out["bb_upper"], out["bb_lower"] = b if b else (None, None, None)
    out["vwap"] = attempt(vwap_bars, candles)
    out["imbalance"] = None
    sr = attempt(support_resistance, candles, cfg.swing_window, cfg.tick)
    if sr:
        out["support_levels"] = sr[0][:cfg.max_levels]
        out["resistance_levels"] = sr[1][:cfg.max_levels]
    else:
        out["support_levels"] = out["resistance_levels"] = None
    return out

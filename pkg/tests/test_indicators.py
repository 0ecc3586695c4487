import random

import pytest
from hypothesis import given, settings, strategies as st

from marketsim import indicators as ind
from marketsim.domain import Candle, SimError
from marketsim.indicators import IndicatorConfig, IndicatorEngine

from oracles import ema_recurrence, population_std


def candle(h, l, c, o=None, v=100, t=0):
    o = c if o is None else o
    return Candle("X", o, max(h, o, c), min(l, o, c), c, v, t, 60_000)


def random_candles(rng, n, start=100.0):
    out, px = [], start
    for i in range(n):
        o = px
        c = max(1.0, round(o + rng.uniform(-2, 2), 2))
        h = round(max(o, c) + rng.uniform(0, 1), 2)
        l = round(max(0.5, min(o, c) - rng.uniform(0, 1)), 2)
        out.append(Candle("X", o, h, l, c, rng.randint(0, 500), i * 60_000, 60_000))
        px = c
    return out


class TestSMA:
    def test_ramp(self) -> None:
        assert ind.sma([1, 2, 3, 4, 5], 5) == 3

    def test_constant(self) -> None:
        assert ind.sma([7.5] * 9, 4) == 7.5

    def test_hand_value(self) -> None:
        assert ind.sma([10, 12, 9, 11], 4) == 10.5

    def test_warmup(self) -> None:
        with pytest.raises(SimError) as e:
            ind.sma([1, 2], 3)
        assert e.value.code == "WARMUP"


class TestEMA:
    def test_constant_fixed_point(self) -> None:
        assert ind.ema([4.0] * 10, 3)[2:] == [4.0] * 8

    def test_n1_identity(self) -> None:
        xs = [3.0, 1.0, 4.0, 1.0, 5.0]
        assert ind.ema(xs, 1) == xs

    def test_against_recurrence(self) -> None:
        xs = list(range(1, 11))
        got = ind.ema(xs, 3)
        want = ema_recurrence(xs, 3)
        assert got[:2] == [None, None]
        assert got[2:] == pytest.approx(want[2:], rel=1e-12)

    @given(st.lists(st.floats(1, 1000), min_size=5, max_size=60), st.integers(1, 5))
    def test_recurrence_random(self, xs, n) -> None:
        assert ind.ema(xs, n)[n - 1:] == pytest.approx(ema_recurrence(xs, n)[n - 1:], rel=1e-9)


class TestRSI:
    def test_rising(self) -> None:
        assert ind.rsi(list(range(1, 30)), 14) == 100

    def test_falling(self) -> None:
        assert ind.rsi(list(range(30, 1, -1)), 14) == 0

    def test_alternating(self) -> None:
        xs = [10 + (i % 2) for i in range(15)]
        assert ind.rsi(xs, 14) == pytest.approx(50)

    def test_warmup(self) -> None:
        with pytest.raises(SimError):
            ind.rsi([1] * 14, 14)

    @given(st.lists(st.floats(1, 1000), min_size=16, max_size=80))
    def test_bounds(self, xs) -> None:
        for v in ind.rsi_series(xs, 14)[14:]:
            assert 0 <= v <= 100


class TestRanges:
    def test_tr_plain(self) -> None:
        assert ind.true_range(candle(12, 9, 10), 11) == 3

    def test_tr_gap(self) -> None:
        assert ind.true_range(candle(12, 11, 11.5), 8) == 4

    def test_tr_degenerate(self) -> None:
        assert ind.true_range(candle(5, 5, 5), 5) == 0

    def test_atr_values(self) -> None:
        # TRs: first bar H-L=3, then gap to 4, then flat 0
        bars = [candle(12, 9, 10), candle(14, 13, 13.5), candle(13.5, 13.5, 13.5)]
        assert ind.true_ranges(bars) == [3, 4, 0]
        assert ind.atr(bars, 3) == pytest.approx(7 / 3)
        assert ind.atr(bars, 1) == 0

    def test_atr_constant_tr(self) -> None:
        bars = [candle(11, 9, 10) for _ in range(5)]
        assert ind.atr(bars, 5) == 2


class TestMACD:
    def test_constant(self) -> None:
        line, sig, hist = ind.macd([50.0] * 40)
        assert line == 0 and hist == 0

    def test_ramp_positive(self) -> None:
        line, _, _ = ind.macd([float(i) for i in range(60)])
        assert line > 0

    def test_histogram_identity(self) -> None:
        rng = random.Random(3)
        xs = [100 + rng.gauss(0, 3) for _ in range(80)]
        for v in ind.macd_series(xs)[33:]:
            assert v[2] == pytest.approx(v[0] - v[1])

    def test_fast_slow_order(self) -> None:
        with pytest.raises(SimError):
            IndicatorConfig(macd=(26, 12, 9))


class TestBollinger:
    def test_constant(self) -> None:
        assert ind.bollinger([3.0] * 20) == (3.0, 3.0, 3.0)

    def test_hand_value(self) -> None:
        assert ind.bollinger([9, 11], 2, 2) == (10, 12, 8)

    @given(st.lists(st.floats(1, 1000), min_size=20, max_size=40))
    def test_symmetry_and_sigma(self, xs) -> None:
        mid, up, lo = ind.bollinger(xs, 20, 2)
        assert up - mid == pytest.approx(mid - lo)
        assert lo <= mid <= up
        assert (up - mid) / 2 == pytest.approx(population_std(xs[-20:]), rel=1e-9, abs=1e-9)


class TestVWAPAndImbalance:
    def test_single(self) -> None:
        assert ind.vwap([(10, 5)]) == 10

    def test_weighted(self) -> None:
        assert ind.vwap([(10, 1), (20, 3)]) == 17.5

    def test_no_volume(self) -> None:
        with pytest.raises(SimError) as e:
            ind.vwap([(10, 0)])
        assert e.value.code == "NO_VOLUME"

    def test_imbalance(self) -> None:
        assert ind.order_book_imbalance([(1, 5)], [(2, 5)]) == 0
        assert ind.order_book_imbalance([(1, 10)], []) == 1
        assert ind.order_book_imbalance([(1, 4), (0.9, 2)], [(2, 2)]) == 0.5
        assert ind.order_book_imbalance([], []) == 0

    def test_imbalance_depth(self) -> None:
        assert ind.order_book_imbalance([(1, 1), (0.9, 100)], [(2, 1)], depth=1) == 0


class TestSupportResistance:
    def test_v_shape(self) -> None:
        bars = [candle(l + 1, l, l + 0.5) for l in (5, 4, 3, 4, 5)]
        sup, res = ind.support_resistance(bars, 2, tick=0.01)
        assert sup == [3] and res == []

    def test_monotone(self) -> None:
        bars = [candle(l + 1, l, l + 0.5) for l in range(10)]
        assert ind.support_resistance(bars, 2) == ([], [])

    def test_dedup_one_tick(self) -> None:
        lows = [5, 4, 3, 4, 5, 4, 3.01, 4, 5]
        bars = [candle(l + 2, l, l + 1) for l in lows]
        sup, _ = ind.support_resistance(bars, 1, tick=0.01)
        assert sup == [3.01]

    def test_warmup(self) -> None:
        with pytest.raises(SimError):
            ind.support_resistance([candle(2, 1, 1.5)] * 4, 2)


def _close(a, b):
    if a is None or b is None:
        return a is b
    if isinstance(a, list):
        return len(a) == len(b) and all(_close(x, y) for x, y in zip(a, b))
    return a == pytest.approx(b, rel=1e-9, abs=1e-9)


class TestStreaming:
    def test_stream_equals_batch(self) -> None:
        rng = random.Random(11)
        cfg = IndicatorConfig(sma_n=5, ema_n=4, rsi_n=6, atr_n=3, macd=(3, 7, 4), bollinger=(6, 2.0),
                              swing_window=2, max_levels=3)
        for trial in range(5):
            bars = random_candles(rng, 120)
            eng = IndicatorEngine(cfg)
            for i, bar in enumerate(bars):
                frame = eng.update(bar)
                want = ind.batch_frame(bars[: i + 1], cfg)
                for key, val in want.items():
                    assert _close(frame[key], val), (trial, i, key, frame[key], val)

    def test_warmup_markers_then_values(self) -> None:
        eng = IndicatorEngine(IndicatorConfig(sma_n=3))
        frames = [eng.update(candle(11, 9, 10, t=i)) for i in range(3)]
        assert frames[0]["sma"] is None and frames[1]["sma"] is None
        assert frames[2]["sma"] == 10

    def test_vwap_session_reset(self) -> None:
        eng = IndicatorEngine()
        eng.update(candle(10, 10, 10, v=1))
        assert eng.update(candle(20, 20, 20, v=3))["vwap"] == 17.5
        eng.reset_session()
        assert eng.update(candle(30, 30, 30, v=2))["vwap"] == 30

    def test_vwap_zero_volume_is_none(self) -> None:
        eng = IndicatorEngine()
        assert eng.update(candle(10, 10, 10, v=0))["vwap"] is None

    def test_enabled_subset(self) -> None:
        eng = IndicatorEngine(enabled=["sma", "rsi"])
        assert set(eng.update(candle(2, 1, 1.5)).values) == {"sma", "rsi"}

    def test_translation(self) -> None:
        rng = random.Random(5)
        bars = random_candles(rng, 60, start=50)
        shifted = [Candle("X", b.open + 100, b.high + 100, b.low + 100, b.close + 100, b.volume,
                          b.bar_start, b.timeframe) for b in bars]
        a, b = IndicatorEngine(), IndicatorEngine()
        for x, y in zip(bars, shifted):
            fa, fb = a.update(x), b.update(y)
        for key in ("sma", "ema", "bb_mid", "bb_upper", "bb_lower"):
            assert fb[key] == pytest.approx(fa[key] + 100)
        assert fb["rsi"] == pytest.approx(fa["rsi"], abs=1e-6)
        assert fb["atr"] == pytest.approx(fa["atr"])

    @settings(max_examples=40)
    @given(st.integers(0, 10_000))
    def test_bounds_random(self, seed) -> None:
        bars = random_candles(random.Random(seed), 80)
        eng = IndicatorEngine(IndicatorConfig(rsi_n=5, bollinger=(5, 2.0), atr_n=4))
        for b in bars:
            f = eng.update(b)
            if f["rsi"] is not None:
                assert 0 <= f["rsi"] <= 100
            if f["bb_mid"] is not None:
                assert f["bb_lower"] <= f["bb_mid"] <= f["bb_upper"]
            assert f["tr"] >= 0
            if f["atr"] is not None:
                assert f["atr"] >= 0

    def test_custom_registration(self) -> None:
        class LastVolume:
            def __init__(self, cfg) -> None:
                pass

            def update(self, candle, book):
                return candle.volume

        ind.register_indicator("last_volume", LastVolume)
        try:
            with pytest.raises(SimError) as e:
                ind.register_indicator("last_volume", LastVolume)
            assert e.value.code == "DUPLICATE_INDICATOR"
            assert IndicatorEngine().update(candle(2, 1, 1.5, v=42))["last_volume"] == 42
        finally:
            ind.unregister_indicator("last_volume")

import io
import math
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from policytrader.market_data import (
    BarAccumulator,
    IngestionError,
    ThresholdState,
    Trade,
    format_timestamp,
    iter_bars,
    load_ticks,
    sample_stream,
    update_threshold,
    write_ticks,
)

T0 = datetime(2022, 1, 3, tzinfo=timezone.utc)


def trade(p, v, minutes=0):
    return Trade(T0 + timedelta(minutes=minutes), p, v)


# -- threshold ----------------------------------------------------------------

def test_threshold_constant_ring():
    state = ThresholdState(tgt=5)
    for _ in range(90):
        update_threshold(state, 1_000_000)
    assert state.current == 200_000


def test_threshold_two_days():
    state = ThresholdState(tgt=2)
    update_threshold(state, 100)
    update_threshold(state, 300)
    assert state.current == 100


def test_threshold_evicts_oldest_after_90_days():
    state = ThresholdState(tgt=1)
    update_threshold(state, 9_000)
    for _ in range(90):
        update_threshold(state, 90)
    assert len(state.daily_dollar_volumes) == 90
    assert state.current == pytest.approx(90)


def test_threshold_rejects_negative_and_bad_tgt():
    with pytest.raises(ValueError):
        update_threshold(ThresholdState(), -1)
    with pytest.raises(ValueError):
        ThresholdState(tgt=0)


def test_threshold_ignores_all_zero_history():
    state = ThresholdState(tgt=5, current=123.0)
    update_threshold(state, 0.0)
    assert state.current == 123.0


# -- accumulation ------------------------------------------------------------------

def test_accumulate_two_trades():
    acc = BarAccumulator(ThresholdState(current=100))
    assert acc.accumulate(trade(10, 4)) is None
    assert acc.chi == 40
    bar = acc.accumulate(trade(10, 7, 1))
    assert (bar.open, bar.high, bar.low, bar.close) == (10, 10, 10, 10)
    assert bar.volume == 11 and bar.dollar_volume == 110
    assert acc.chi == 0


def test_accumulate_single_trade_bar():
    acc = BarAccumulator(ThresholdState(current=100))
    bar = acc.accumulate(trade(25, 5))
    assert (bar.open, bar.high, bar.low, bar.close) == (25, 25, 25, 25)


def test_accumulate_ohlc_trace():
    acc = BarAccumulator(ThresholdState(current=100))
    assert acc.accumulate(trade(10, 6)) is None
    assert acc.accumulate(trade(12, 2, 1)) is None
    bar = acc.accumulate(trade(9, 3, 2))
    assert (bar.open, bar.high, bar.low, bar.close) == (10, 12, 9, 9)
    assert bar.dollar_volume == 111
    assert bar.start_ts == T0 and bar.end_ts == T0 + timedelta(minutes=2)


def test_breach_is_strict():
    acc = BarAccumulator(ThresholdState(current=100))
    assert acc.accumulate(trade(10, 10)) is None  # exactly 100 does not breach
    assert acc.accumulate(trade(1, 1, 1)) is not None


# -- streams -------------------------------------------------------------------------

def test_empty_stream():
    assert sample_stream([]) == []


def test_warm_day_gives_five_bars():
    day_volume = 5_000_000.0
    per_day = 100
    trades = []
    for d in range(3):
        for k in range(per_day):
            ts = T0 + timedelta(days=d, minutes=10 * k)
            trades.append(Trade(ts, 50.0, day_volume / per_day / 50.0))
    bars = sample_stream(trades, tgt=5, initial_threshold=day_volume / 5)
    third_day = [b for b in bars if b.end_ts >= T0 + timedelta(days=2)]
    assert all(b.threshold == pytest.approx(day_volume / 5) for b in third_day)
    assert len(third_day) in (4, 5, 6)


def test_missing_days_count_as_zero():
    # day 0 trades 1000; days 1 and 2 are empty; the bar on day 3 sees mean 1000/3
    trades = [trade(1.0, 1000.0), Trade(T0 + timedelta(days=3), 1.0, 1000.0)]
    (bar,) = sample_stream(trades, tgt=1, initial_threshold=1e9)
    assert bar.threshold == pytest.approx(1000 / 3)


def _stream(draws):
    out, ts = [], T0
    for minutes, p, v in draws:
        ts = ts + timedelta(minutes=minutes)
        out.append(Trade(ts, p, v))
    return out


streams = st.lists(
    st.tuples(st.integers(0, 600), st.floats(1.0, 200.0), st.floats(0.1, 500.0)),
    min_size=0,
    max_size=300,
).map(_stream)


@settings(max_examples=60, deadline=None)
@given(streams)
def test_every_bar_strictly_exceeds_threshold(trades):
    for bar in sample_stream(trades, tgt=5, initial_threshold=2_000.0):
        assert bar.dollar_volume > bar.threshold
        assert bar.low <= min(bar.open, bar.close) and bar.high >= max(bar.open, bar.close)
        assert bar.start_ts <= bar.end_ts


def _final_threshold(trades, tgt=5, initial=2_000.0):
    """Threshold in force after the last trade, replayed independently."""
    state = ThresholdState(tgt=tgt, current=initial)
    day, total = None, 0.0
    for t in trades:
        d = t.timestamp.date()
        if day is not None and d != day:
            update_threshold(state, total)
            for _ in range(min((d - day).days - 1, 90)):
                update_threshold(state, 0.0)
            total = 0.0
        day = d
        total += t.price * t.volume
    return state.current


@settings(max_examples=60, deadline=None)
@given(streams)
def test_conservation_minus_residual(trades):
    bars = sample_stream(trades, tgt=5, initial_threshold=2_000.0)
    total = math.fsum(t.price * t.volume for t in trades)
    residual = total - math.fsum(b.dollar_volume for b in bars)
    tol = 1e-9 * max(total, 1.0)
    assert residual >= -tol
    assert residual <= _final_threshold(trades) + tol


@settings(max_examples=40, deadline=None)
@given(streams)
def test_bars_partition_the_stream(trades):
    bars = sample_stream(trades, tgt=5, initial_threshold=2_000.0)
    # consecutive bars consume consecutive runs of trades, leaving a short tail
    i = 0
    for bar in bars:
        first, chi, vol = trades[i], 0.0, 0.0
        while chi < bar.dollar_volume * (1 - 1e-12):
            chi += trades[i].price * trades[i].volume
            vol += trades[i].volume
            i += 1
        assert first.timestamp == bar.start_ts and trades[i - 1].timestamp == bar.end_ts
        assert chi == pytest.approx(bar.dollar_volume) and vol == pytest.approx(bar.volume)
        assert bar.close == trades[i - 1].price and bar.open == first.price
    assert math.fsum(t.price * t.volume for t in trades[i:]) <= _final_threshold(trades) * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(streams, st.data())
def test_truncation_invariance(trades, data):
    bars = sample_stream(trades, tgt=5, initial_threshold=2_000.0)
    if not bars:
        return
    k = data.draw(st.integers(0, len(bars) - 1))
    # cut right after the breaching trade of bar k
    idx = max(i for i, t in enumerate(trades) if t.timestamp == bars[k].end_ts)
    cut = trades[: idx + 1]
    prefix = sample_stream(cut, tgt=5, initial_threshold=2_000.0)
    assert prefix[: k + 1] == bars[: k + 1]


def test_threshold_adapts_to_doubled_volume():
    trades = []
    for d in range(200):
        daily = 1_000_000.0 if d < 100 else 2_000_000.0
        for k in range(48):
            trades.append(Trade(T0 + timedelta(days=d, minutes=30 * k), 10.0, daily / 48 / 10.0))
    bars = sample_stream(trades, tgt=5, initial_threshold=200_000.0)
    late = [b for b in bars if b.start_ts >= T0 + timedelta(days=100 + 90)]
    assert late and all(b.threshold == pytest.approx(400_000.0) for b in late)


# -- CSV -----------------------------------------------------------------------------

def test_csv_round_trip():
    trades = [trade(10.5, 3.0), trade(11.25, 0.5, 1), trade(11.0, 2.0, 1)]
    buf = io.StringIO()
    write_ticks(trades, buf)
    assert load_ticks(io.StringIO(buf.getvalue())) == trades
    assert load_ticks(io.BytesIO(buf.getvalue().encode())) == trades


def test_csv_path(tmp_path):
    path = tmp_path / "ticks.csv"
    path.write_text("timestamp,price,volume\n2022-01-03T00:00:00Z,1.5,2\n", encoding="utf-8")
    (t,) = load_ticks(str(path))
    assert t.price == 1.5 and format_timestamp(t.timestamp) == "2022-01-03T00:00:00.000000+00:00"


@pytest.mark.parametrize(
    "body, line",
    [
        ("2022-01-03T00:00:00Z,1,1\n2022-01-03T00:00:01Z,-1,1\n", 3),
        ("2022-01-03T00:00:00Z,1,0\n", 2),
        ("2022-01-03T00:00:05Z,1,1\n2022-01-03T00:00:01Z,1,1\n", 3),
        ("2022-01-03T00:00:00Z,1\n", 2),
        ("not-a-time,1,1\n", 2),
        ("2022-01-03T00:00:00,1,1\n", 2),
    ],
)
def test_csv_errors_name_the_line(body, line):
    with pytest.raises(IngestionError) as err:
        load_ticks(io.StringIO("timestamp,price,volume\n" + body))
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_csv_bad_header():
    with pytest.raises(IngestionError) as err:
        load_ticks(io.StringIO("time,p,v\n"))
    assert err.value.line == 1


def test_trade_validation():
    with pytest.raises(ValueError):
        Trade(T0, 0.0, 1.0)
    with pytest.raises(ValueError):
        Trade(T0, 1.0, float("nan"))

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from policytrader.market_data import Bar

T0 = datetime(2021, 3, 1, tzinfo=timezone.utc)


def bars_from_prices(prices, spread=0.001, hours=4.8):
    """Bars with close = price and a symmetric high/low band."""
    out = []
    for i, p in enumerate(prices):
        p = float(p)
        ts = T0 + timedelta(hours=hours * i)
        out.append(Bar(p, p * (1 + spread), p * (1 - spread), p, 1.0, p, ts, ts))
    return out


def random_prices(rng, n, vol=0.01, start=100.0):
    return start * np.exp(np.cumsum(rng.normal(0.0, vol, n)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

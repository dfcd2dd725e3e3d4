import numpy as np
import pytest

from portfolio_drl.market_data import MarketDataset

_ACCEPTANCE = []


def make_dataset(closes, symbols=None, start="2020-01-01"):
    """Dataset whose bars are flat (open = high = low = close)."""
    closes = np.asarray(closes, dtype=float)
    if closes.ndim == 1:
        closes = closes[:, None]
    symbols = symbols or [f"S{i}" for i in range(closes.shape[1])]
    calendar = np.busday_offset(np.datetime64(start, "D"), np.arange(len(closes)), roll="forward")
    return MarketDataset(tuple(symbols), calendar, closes, closes, closes, closes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance():
    """Record a pass/fail line for the acceptance summary."""

    def record(number, title, passed, detail=""):
        _ACCEPTANCE.append((number, title, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}  {detail}")

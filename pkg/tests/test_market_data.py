import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portfolio_drl.errors import DatasetError, ParseError, SpecError, ValidationError, WindowError
from portfolio_drl.market_data import (
    AssetSpec,
    build_price_tensor,
    load_csv,
    relative_price_vector,
    sample_episode_window,
    synthetic_market,
    write_csv,
)

from conftest import make_dataset

HEADER = "date,symbol,open,high,low,close\n"


def write(tmp_path, body, name="prices.csv"):
    p = tmp_path / name
    p.write_text(HEADER + body)
    return p


def test_load_two_symbols_three_days(tmp_path):
    rows = "".join(
        f"2024-01-0{d},{s},10,11,9,10.5\n" for d in (2, 3, 4) for s in ("AAA", "BBB")
    )
    ds = load_csv(write(tmp_path, rows), ["AAA", "BBB"])
    assert ds.n_days == 3
    assert ds.symbols == ("AAA", "BBB")
    assert ds.dropped_days == 0
    assert ds.close.shape == (3, 2)


def test_load_drops_day_with_missing_symbol(tmp_path, caplog):
    rows = (
        "2024-01-02,AAA,10,11,9,10\n2024-01-02,BBB,5,6,4,5\n"
        "2024-01-03,AAA,10,11,9,10\n"
        "2024-01-04,AAA,10,11,9,10\n2024-01-04,BBB,5,6,4,5\n"
    )
    ds = load_csv(write(tmp_path, rows), ["AAA", "BBB"])
    assert ds.n_days == 2
    assert ds.dropped_days == 1
    assert [str(d) for d in ds.calendar] == ["2024-01-02", "2024-01-04"]
    assert "dropped 1 day" in caplog.text


def test_zero_close_names_row(tmp_path):
    rows = "2024-01-02,AAA,10,11,9,10\n2024-01-03,AAA,10,11,9,0\n"
    with pytest.raises(ValidationError, match=r"prices\.csv:3"):
        load_csv(write(tmp_path, rows), ["AAA"])


def test_malformed_row_reports_line(tmp_path):
    rows = "2024-01-02,AAA,10,11,9,10\n2024-01-03,AAA,ten,11,9,10\n"
    with pytest.raises(ParseError, match=r":3:"):
        load_csv(write(tmp_path, rows), ["AAA"])
    with pytest.raises(ParseError, match=r":2:"):
        load_csv(write(tmp_path, "2024-01-02,AAA,10\n", "short.csv"), ["AAA"])


def test_no_shared_days_is_dataset_error(tmp_path):
    rows = "2024-01-02,AAA,10,11,9,10\n2024-01-03,BBB,10,11,9,10\n"
    with pytest.raises(DatasetError):
        load_csv(write(tmp_path, rows), ["AAA", "BBB"])


def test_csv_round_trip_is_lossless(tmp_path):
    ds = synthetic_market([AssetSpec("A", 0.001, 0.02), AssetSpec("B", -0.0005, 0.01)], 30, rng_seed=4)
    write_csv(ds, tmp_path / "x.csv")
    back = load_csv(tmp_path / "x.csv")
    assert back.symbols == ds.symbols
    np.testing.assert_array_equal(back.calendar, ds.calendar)
    for f in ("open", "high", "low", "close"):
        np.testing.assert_array_equal(getattr(back, f), getattr(ds, f))


def test_dataset_is_read_only():
    ds = make_dataset([1.0, 2.0])
    with pytest.raises(ValueError):
        ds.close[0, 0] = 5.0


@pytest.mark.parametrize(
    "prev, cur, expected",
    [
        ([10, 10], [10, 20], [1, 1.0, 2.0]),
        ([7, 3, 5], [7, 3, 5], [1, 1, 1, 1]),
        ([8], [10], [1, 1.25]),
    ],
)
def test_relative_price_vector(prev, cur, expected):
    ds = make_dataset([prev, cur])
    np.testing.assert_allclose(relative_price_vector(ds, 1), expected, rtol=0, atol=1e-15)


def test_relative_price_needs_previous_day():
    with pytest.raises(IndexError):
        relative_price_vector(make_dataset([1.0, 2.0]), 0)


@given(st.lists(st.floats(0.01, 1e4), min_size=6, max_size=6), st.integers(1, 2))
def test_relative_price_times_previous_close_is_current(prices, t):
    ds = make_dataset(np.array(prices).reshape(3, 2))
    y = relative_price_vector(ds, t)
    np.testing.assert_allclose(y[1:] * ds.close[t - 1], ds.close[t], rtol=1e-12)
    assert y[0] == 1.0


def test_price_tensor_single_asset_window():
    ds = make_dataset([10.0, 11.0, 10.0])
    x = build_price_tensor(ds, 2, 3)
    assert x.shape == (4, 1, 3)
    np.testing.assert_allclose(x.data[3, 0], [1.0, 1.1, 1.0], rtol=1e-15)


def test_price_tensor_constant_series():
    c = 7.0
    calendar = np.arange(4).astype("datetime64[D]")
    from portfolio_drl.market_data import MarketDataset

    ds = MarketDataset(("A", "B"), calendar, np.full((4, 2), 6.5), np.full((4, 2), 8.0), np.full((4, 2), 6.0),
                       np.full((4, 2), c))
    x = build_price_tensor(ds, 3, 4).data
    np.testing.assert_array_equal(x[3], np.ones((2, 4)))
    np.testing.assert_allclose(x[0], 6.5 / c)
    np.testing.assert_allclose(x[1], 6.0 / c)   # low
    np.testing.assert_allclose(x[2], 8.0 / c)   # high


def test_price_tensor_window_of_one():
    ds = synthetic_market([AssetSpec("A", 0.01, 0.1), AssetSpec("B")], 5, rng_seed=1)
    x = build_price_tensor(ds, 4, 1)
    assert x.shape == (4, 2, 1)
    np.testing.assert_array_equal(x.data[3], np.ones((2, 1)))


def test_price_tensor_needs_history():
    ds = make_dataset(np.ones(5))
    with pytest.raises(WindowError):
        build_price_tensor(ds, 2, 4)


@settings(max_examples=50)
@given(st.integers(0, 10_000), st.integers(1, 20))
def test_price_tensor_invariants(seed, n):
    ds = synthetic_market([AssetSpec("A", 0.0, 0.03), AssetSpec("B", 0.001, 0.05)], 40, rng_seed=seed)
    x = build_price_tensor(ds, 39, n).data
    assert np.all(x[3, :, -1] == 1.0)
    assert np.all(np.isfinite(x)) and np.all(x > 0)


def test_sample_window_unique_when_exact():
    n, length = 5, 10
    ds = make_dataset(np.ones(length + n - 1))
    ranges = {tuple(sample_episode_window(ds, length, s, n)) for s in range(20)}
    assert ranges == {tuple(range(n - 1, n - 1 + length))}


def test_sample_window_deterministic():
    ds = make_dataset(np.ones(500))
    assert sample_episode_window(ds, 128, 9, 50) == sample_episode_window(ds, 128, 9, 50)


def test_sample_window_covers_every_start():
    n, length, days = 10, 20, 120
    ds = make_dataset(np.ones(days))
    admissible = set(range(n - 1, days - length + 1))
    seen = {sample_episode_window(ds, length, seed, n).start for seed in range(10_000)}
    assert seen == admissible


def test_sample_window_too_short():
    with pytest.raises(WindowError):
        sample_episode_window(make_dataset(np.ones(20)), 15, 0, 10)


def test_synthetic_flat_market_is_constant():
    ds = synthetic_market([AssetSpec("A", 0.0, 0.0, 50.0)], 30, rng_seed=3)
    for f in ("open", "high", "low", "close"):
        np.testing.assert_array_equal(getattr(ds, f), 50.0)


def test_synthetic_pure_drift_is_exponential():
    ds = synthetic_market([AssetSpec("A", 0.001, 0.0)], 100, rng_seed=0)
    t = np.arange(100)
    np.testing.assert_allclose(ds.close[:, 0], 100.0 * np.exp(0.001 * t), rtol=1e-13)


def test_synthetic_is_deterministic_and_consistent():
    spec = [AssetSpec("A", 0.0005, 0.02), AssetSpec("B", -0.001, 0.04)]
    a = synthetic_market(spec, 200, rng_seed=11)
    b = synthetic_market(spec, 200, rng_seed=11)
    for f in ("open", "high", "low", "close"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    assert np.all(a.low <= np.minimum(a.open, a.close))
    assert np.all(a.high >= np.maximum(a.open, a.close))


def test_synthetic_rejects_negative_volatility():
    with pytest.raises(SpecError):
        synthetic_market([AssetSpec("A", 0.0, -0.1)], 10)

"""OHLC market data: loading, alignment, windowing and synthetic generation.

Prices are held as ``(days, assets)`` float64 arrays sharing one calendar.
The observation handed to the agent is a ``(4, m, n)`` tensor with the
feature order open, low, high, close, every entry divided by the close
of the anchor day.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DatasetError, ParseError, SpecError, ValidationError, WindowError

log = logging.getLogger(__name__)

FEATURES = ("open", "low", "high", "close")
CSV_COLUMNS = ("date", "symbol", "open", "high", "low", "close")
DEFAULT_WINDOW = 50


@dataclass(frozen=True)
class OhlcBar:
    date: dt.date
    open: float
    low: float
    high: float
    close: float

    def __post_init__(self):
        _check_bar(self.open, self.high, self.low, self.close, where=str(self.date))


def _check_bar(o, h, lo, c, where):
    prices = (o, h, lo, c)
    if not all(np.isfinite(p) and p > 0 for p in prices):
        raise ValidationError(f"{where}: prices must be finite and > 0, got {prices}")
    if lo > min(o, c) or h < max(o, c):
        raise ValidationError(f"{where}: inconsistent bar (open={o}, high={h}, low={lo}, close={c})")


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MarketDataset:
    """Time-aligned OHLC panel for ``m`` symbols.

    ``open``/``high``/``low``/``close`` are read-only ``(T, m)`` arrays;
    ``calendar`` is a strictly increasing ``datetime64[D]`` array of length T.
    """

    symbols: tuple
    calendar: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    dropped_days: int = 0
    # Absolute index of row 0 in the dataset this one was sliced from.
    offset: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        cal = np.array(self.calendar, dtype="datetime64[D]")
        cal.setflags(write=False)
        object.__setattr__(self, "calendar", cal)
        for name in ("open", "high", "low", "close"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        shape = (len(cal), len(self.symbols))
        for name in ("open", "high", "low", "close"):
            if getattr(self, name).shape != shape:
                raise DatasetError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if len(cal) == 0 or not self.symbols:
            raise DatasetError("dataset is empty")
        if len(cal) > 1 and not np.all(np.diff(cal) > np.timedelta64(0, "D")):
            raise DatasetError("calendar must be strictly increasing")
        stacked = np.stack([self.open, self.high, self.low, self.close])
        if not np.all(np.isfinite(stacked)) or np.any(stacked <= 0):
            raise ValidationError("all prices must be finite and > 0")
        if np.any(self.low > np.minimum(self.open, self.close)) or np.any(
            self.high < np.maximum(self.open, self.close)
        ):
            raise ValidationError("low/high inconsistent with open/close")

    @property
    def n_days(self) -> int:
        return len(self.calendar)

    @property
    def n_assets(self) -> int:
        return len(self.symbols)

    def feature(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def bars(self, symbol) -> list[OhlcBar]:
        j = self.symbols.index(symbol)
        return [
            OhlcBar(d.item(), float(self.open[i, j]), float(self.low[i, j]), float(self.high[i, j]),
                    float(self.close[i, j]))
            for i, d in enumerate(self.calendar)
        ]

    def slice(self, start: int, stop: int) -> "MarketDataset":
        """Range-guarded view holding only days ``[start, stop)``."""
        if not 0 <= start < stop <= self.n_days:
            raise WindowError(f"slice [{start}, {stop}) outside 0..{self.n_days}")
        return MarketDataset(
            self.symbols, self.calendar[start:stop], self.open[start:stop], self.high[start:stop],
            self.low[start:stop], self.close[start:stop], offset=self.offset + start,
        )

    def index_of(self, date) -> int:
        d = np.datetime64(date, "D")
        i = int(np.searchsorted(self.calendar, d))
        if i >= self.n_days or self.calendar[i] != d:
            raise DatasetError(f"{date} is not a trading day in the dataset")
        return i

    def date_range(self, first, last) -> tuple[int, int]:
        """Indices ``(i, j)`` of the first/last trading days inside ``[first, last]``."""
        lo = int(np.searchsorted(self.calendar, np.datetime64(first, "D"), side="left"))
        hi = int(np.searchsorted(self.calendar, np.datetime64(last, "D"), side="right")) - 1
        if hi < lo:
            raise DatasetError(f"no trading days between {first} and {last}")
        return lo, hi


@dataclass(frozen=True, eq=False)
class PriceTensor:
    """Normalized OHLC window, shape ``(4, m, n)``, anchored at calendar index ``anchor_day``."""

    data: np.ndarray
    anchor_day: int

    @property
    def shape(self):
        return self.data.shape


def load_csv(path, symbols: Sequence[str] | None = None) -> MarketDataset:
    """Read a long-format CSV (date,symbol,open,high,low,close) into an aligned dataset.

    Days on which any requested symbol has no row are dropped, never filled.
    """
    path = Path(path)
    rows: dict[str, dict[dt.date, tuple]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"{path}:1: missing columns {missing}")
        col = {c: header.index(c) for c in CSV_COLUMNS}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not x.strip() for x in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            sym = rec[col["symbol"]].strip()
            if symbols is not None and sym not in symbols:
                continue
            try:
                day = dt.date.fromisoformat(rec[col["date"]].strip())
                o, h, lo, c = (float(rec[col[k]]) for k in ("open", "high", "low", "close"))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            _check_bar(o, h, lo, c, where=f"{path}:{lineno}")
            per_sym = rows.setdefault(sym, {})
            if day in per_sym:
                raise ParseError(f"{path}:{lineno}: duplicate row for {sym} on {day}")
            per_sym[day] = (o, h, lo, c)

    wanted = list(symbols) if symbols is not None else list(rows)
    absent = [s for s in wanted if s not in rows]
    if absent:
        raise DatasetError(f"{path}: no rows for symbols {absent}")
    all_days = set().union(*(rows[s].keys() for s in wanted))
    shared = sorted(set.intersection(*(set(rows[s]) for s in wanted)))
    if not shared:
        raise DatasetError(f"{path}: symbols share no trading days")
    dropped = len(all_days) - len(shared)
    if dropped:
        log.warning("dropped %d day(s) with missing symbols from %s", dropped, path)
    arr = np.array([[rows[s][d] for s in wanted] for d in shared])  # (T, m, 4)
    return MarketDataset(
        tuple(wanted), np.array(shared, dtype="datetime64[D]"),
        open=arr[..., 0], high=arr[..., 1], low=arr[..., 2], close=arr[..., 3],
        dropped_days=dropped,
    )


def write_csv(dataset: MarketDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i, day in enumerate(dataset.calendar):
            for j, sym in enumerate(dataset.symbols):
                w.writerow([str(day), sym, repr(float(dataset.open[i, j])), repr(float(dataset.high[i, j])),
                            repr(float(dataset.low[i, j])), repr(float(dataset.close[i, j]))])


def relative_price_vector(dataset: MarketDataset, t: int) -> np.ndarray:
    """Day-over-day close ratios with a leading 1 for cash, length m+1."""
    if not 1 <= t < dataset.n_days:
        raise WindowError(f"relative price needs 1 <= t < {dataset.n_days}, got t={t}")
    return np.concatenate(([1.0], dataset.close[t] / dataset.close[t - 1]))


def build_price_tensor(dataset: MarketDataset, t: int, n: int = DEFAULT_WINDOW) -> PriceTensor:
    if n < 1:
        raise WindowError(f"window length must be >= 1, got {n}")
    if not n - 1 <= t < dataset.n_days:
        raise WindowError(f"price tensor at t={t} needs {n - 1} days of history within {dataset.n_days} days")
    anchor = dataset.close[t]
    lo = t - n + 1
    data = np.stack([getattr(dataset, f)[lo : t + 1].T / anchor[:, None] for f in FEATURES])
    # exact ones in the anchor column of the close slab
    data[3, :, -1] = 1.0
    return PriceTensor(data, t)


def first_decision_day(n: int) -> int:
    """Earliest calendar index with a full tensor window and a defined relative price."""
    return max(n - 1, 1)


def sample_episode_window(dataset: MarketDataset, length: int, rng_seed, n: int = DEFAULT_WINDOW) -> range:
    """Uniformly pick ``length`` consecutive decision days with ``n - 1`` days of history.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    lo = first_decision_day(n)
    hi = dataset.n_days - length  # last admissible start
    if length < 1 or hi < lo:
        raise WindowError(
            f"dataset of {dataset.n_days} days cannot hold {length} steps with window {n}"
        )
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    start = int(rng.integers(lo, hi + 1))
    return range(start, start + length)


@dataclass(frozen=True)
class AssetSpec:
    symbol: str
    drift: float = 0.0
    volatility: float = 0.0
    start_price: float = 100.0


def synthetic_market(
    spec: Iterable[AssetSpec],
    days: int,
    rng_seed: int = 0,
    start_date: str = "2010-01-04",
) -> MarketDataset:
    """Geometric random walk closes with OHLC bars built around them.

    With zero volatility ``close_t = start_price * exp(drift * t)`` exactly and
    each bar opens at the previous close.
    """
    spec = list(spec)
    if not spec:
        raise SpecError("at least one asset required")
    if days < 2:
        raise SpecError(f"days must be >= 2, got {days}")
    drift = np.array([a.drift for a in spec], dtype=float)
    vol = np.array([a.volatility for a in spec], dtype=float)
    p0 = np.array([a.start_price for a in spec], dtype=float)
    if not np.all(np.isfinite(drift)) or not np.all(np.isfinite(vol)):
        raise SpecError("drift and volatility must be finite")
    if np.any(vol < 0):
        raise SpecError(f"volatility must be >= 0, got {vol.tolist()}")
    if np.any(p0 <= 0):
        raise SpecError("start_price must be > 0")

    rng = np.random.default_rng(rng_seed)
    m = len(spec)
    shocks = rng.standard_normal((days, m))
    wick = np.abs(rng.standard_normal((2, days, m)))
    t = np.arange(days)[:, None]
    noise = np.cumsum(shocks, axis=0) - shocks[0]  # zero at t = 0
    close = p0 * np.exp(drift * t + vol * noise)
    open_ = np.vstack([close[:1], close[:-1]])
    high = np.maximum(open_, close) * np.exp(0.5 * vol * wick[0])
    low = np.minimum(open_, close) * np.exp(-0.5 * vol * wick[1])
    start = np.datetime64(start_date, "D")
    calendar = np.busday_offset(start, np.arange(days), roll="forward")
    return MarketDataset(tuple(a.symbol for a in spec), calendar, open_, high, low, close)

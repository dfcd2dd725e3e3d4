"""Risk/return statistics of a backtest value curve.

All statistics work on daily log returns and population deviations.
Sharpe/Sortino with a vanishing deviation are ``None`` (written ``NA`` in
CSV output) unless the excess return is also 0, which reports 0. Calmar
is ``None`` whenever there is no drawdown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import MetricsError

NA = "NA"
COLUMNS = ("E(R)", "Std(R)", "Sharpe", "Sortino", "MDD", "Calmar", "%of+Ret", "AveP/AveL")


@dataclass(frozen=True)
class ValueCurve:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1 or np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise MetricsError("value curve must be a 1-D array of positive finite values")
        object.__setattr__(self, "values", v)

    @property
    def log_returns(self) -> np.ndarray:
        v = self.values
        return np.log(v[1:] / v[:-1])

    @classmethod
    def from_log_returns(cls, log_returns, start: float = 1.0) -> "ValueCurve":
        g = np.asarray(log_returns, dtype=float)
        return cls(start * np.exp(np.concatenate(([0.0], np.cumsum(g)))))


@dataclass(frozen=True)
class MetricsReport:
    ann_return: float
    ann_vol: float
    sharpe: float | None
    sortino: float | None
    mdd: float
    calmar: float | None
    pct_positive: float
    avg_pl_ratio: float | None

    def row(self) -> list[str]:
        return [NA if v is None else repr(float(v)) for v in (getattr(self, f.name) for f in fields(self))]

    @classmethod
    def from_row(cls, row) -> "MetricsReport":
        vals = [None if s == NA else float(s) for s in row]
        return cls(*vals)


def _ratio(num: float, den: float) -> float | None:
    if den > 0:
        return num / den
    return 0.0 if num == 0 else None


def _check(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise MetricsError(f"need at least 2 returns, got {g.size}")
    return g


def _pop_std(g) -> float:
    sd = float(g.std())
    # a constant series read back from a value curve keeps rounding residue
    # around 1e-13 relative (1e-16 absolute); treat that as an exact zero
    return 0.0 if sd <= 1e-9 * np.abs(g).max() + 1e-13 else sd


def annualize(log_returns, freq: int = 252) -> tuple[float, float]:
    g = _check(log_returns)
    return float(freq * g.mean()), math.sqrt(freq) * _pop_std(g)


def downside_deviation(log_returns, freq: int = 252) -> float:
    g = _check(log_returns)
    return float(math.sqrt(freq) * math.sqrt(np.mean(np.minimum(g, 0.0) ** 2)))


def sharpe_sortino(log_returns, freq: int = 252, risk_free: float = 0.0) -> tuple[float | None, float | None]:
    """Annualized Sharpe and Sortino; ``risk_free`` is an annual rate."""
    er, sd = annualize(log_returns, freq)
    excess = er - risk_free
    return _ratio(excess, sd), _ratio(excess, downside_deviation(log_returns, freq))


def max_drawdown(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise MetricsError("drawdown needs at least 2 values")
    peak = np.maximum.accumulate(v)
    return float(np.max((peak - v) / peak))


def max_drawdown_calmar(curve: ValueCurve, ann_return: float) -> tuple[float, float | None]:
    mdd = max_drawdown(curve.values)
    return mdd, (ann_return / mdd if mdd > 0 else None)


def win_loss_stats(log_returns) -> tuple[float, float | None]:
    g = np.asarray(log_returns, dtype=float)
    if g.size == 0:
        raise MetricsError("no returns")
    wins, losses = g[g > 0], g[g < 0]
    pct = wins.size / g.size
    if wins.size == 0 or losses.size == 0:
        return pct, None
    return pct, float(wins.mean() / abs(losses.mean()))


def compute_metrics(curve: ValueCurve, freq: int = 252, risk_free: float = 0.0) -> MetricsReport:
    g = curve.log_returns
    er, sd = annualize(g, freq)
    sharpe, sortino = sharpe_sortino(g, freq, risk_free)
    mdd, calmar = max_drawdown_calmar(curve, er)
    pct, pl = win_loss_stats(g)
    return MetricsReport(er, sd, sharpe, sortino, mdd, calmar, pct, pl)

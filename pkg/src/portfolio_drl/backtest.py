"""Run any daily target-weight rule through the trading environment."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .env import EnvConfig, reset, step
from .market_data import MarketDataset, build_price_tensor, relative_price_vector
from .metrics import MetricsReport, ValueCurve, compute_metrics
from .network import NetworkSpec, ParameterSet
from .ppo import greedy_weights


@dataclass
class BacktestResult:
    name: str
    days: np.ndarray          # calendar indices of the decision days
    dates: np.ndarray         # their dates
    symbols: tuple
    values: np.ndarray        # rho_0 = 1 followed by one value per day
    weights: np.ndarray       # (days, m + 1) post-trade weights, cash first
    costs: np.ndarray
    log_returns: np.ndarray

    @property
    def curve(self) -> ValueCurve:
        return ValueCurve(self.values)

    def metrics(self, freq: int = 252, risk_free: float = 0.0) -> MetricsReport:
        return compute_metrics(self.curve, freq, risk_free)


def run_backtest(dataset: MarketDataset, env_config: EnvConfig, days: range,
                 target_fn: Callable[[int], np.ndarray], name: str = "strategy") -> BacktestResult:
    """Trade at every close in ``days`` using ``target_fn(day) -> weights (m+1,)``."""
    cfg = replace(env_config, episode_steps=len(days))
    state, _ = reset(dataset, days, cfg)
    weights, costs, rets = [], [], []
    for t in days:
        target = target_fn(t)
        state, res = step(state, target, relative_price_vector(dataset, t), cfg)
        weights.append(state.weights)
        costs.append(res.cost)
        rets.append(res.log_return)
    day_idx = np.arange(days.start, days.stop)
    return BacktestResult(name, day_idx, dataset.calendar[day_idx], dataset.symbols, np.array(state.values),
                          np.array(weights), np.array(costs), np.array(rets))


def policy_backtest(dataset: MarketDataset, params: ParameterSet, spec: NetworkSpec, env_config: EnvConfig,
                    days: range, name: str = "DRL") -> BacktestResult:
    """Greedy (mean-logit) policy rolled over ``days``."""
    return run_backtest(
        dataset, env_config, days,
        lambda t: greedy_weights(build_price_tensor(dataset, t, env_config.window), params, spec), name,
    )


# ---- CSV round trips -----------------------------------------------------------

def write_value_curve(result: BacktestResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "value", "log_return"])
        w.writerow(["start", repr(float(result.values[0])), ""])
        for d, v, g in zip(result.dates, result.values[1:], result.log_returns):
            w.writerow([str(d), repr(float(v)), repr(float(g))])


def read_value_curve(path) -> tuple[list, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    values = np.array([float(r["value"]) for r in rows])
    rets = np.array([float(r["log_return"]) for r in rows[1:]])
    return [r["date"] for r in rows[1:]], values, rets


def write_weights_costs(result: BacktestResult, path) -> None:
    """Long format: one row per (date, symbol); the daily cost repeats on each row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "symbol", "weight", "cost"])
        names = ("CASH",) + tuple(result.symbols)
        for d, ws, c in zip(result.dates, result.weights, result.costs):
            for sym, wt in zip(names, ws):
                w.writerow([str(d), sym, repr(float(wt)), repr(float(c))])


def read_weights_costs(path) -> tuple[list, tuple, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    dates = list(dict.fromkeys(r["date"] for r in rows))
    symbols = tuple(dict.fromkeys(r["symbol"] for r in rows))
    weights = np.array([float(r["weight"]) for r in rows]).reshape(len(dates), len(symbols))
    costs = np.array([float(r["cost"]) for r in rows]).reshape(len(dates), len(symbols))[:, 0]
    return dates, symbols, weights, costs

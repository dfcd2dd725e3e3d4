"""Portfolio trading MDP.

Weights are length ``m + 1`` vectors with cash first. A step moves prices
from day ``t-1`` to ``t`` under the previous weights, then rebalances the
drifted weights to the new target at the day-``t`` close::

    drifted = (y * w_prev) / (y . w_prev)
    cost    = mu * sum_{i>=1} |drifted_i - target_i|
    value  *= (1 - cost) * exp(log(y) . w_prev)

The reward is the annualized Sharpe ratio of the episode's log-return ledger
so far, divided by the episode length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ActionError, NumericError, StateError, WindowError
from .market_data import (
    DEFAULT_WINDOW,
    MarketDataset,
    PriceTensor,
    build_price_tensor,
    first_decision_day,
    relative_price_vector,
)

SIMPLEX_TOL = 1e-9
ACTION_TOL = 1e-6


@dataclass(frozen=True)
class EnvConfig:
    cost_rate: float = 0.0025
    freq: int = 252
    # per-step (daily) rate, compared against daily log returns
    risk_free: float = 0.0
    episode_steps: int = 128
    window: int = DEFAULT_WINDOW
    asset_count: int | None = None

    def __post_init__(self):
        if not 0 <= self.cost_rate < 1:
            raise ValueError(f"cost_rate must lie in [0, 1), got {self.cost_rate}")
        if self.freq <= 0:
            raise ValueError(f"freq must be > 0, got {self.freq}")
        if self.episode_steps < 2:
            raise ValueError(f"episode_steps must be >= 2, got {self.episode_steps}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")


@dataclass(frozen=True)
class PortfolioState:
    value: float
    weights: np.ndarray
    drifted: np.ndarray
    step_index: int
    return_ledger: tuple
    episode_steps: int
    # rho_0 .. rho_t, kept for ledger/value consistency checks
    values: tuple = field(default=(1.0,))

    @property
    def done(self) -> bool:
        return self.step_index >= self.episode_steps


@dataclass(frozen=True)
class StepResult:
    # None once the episode is done
    observation: PriceTensor | None
    reward: float
    cost: float
    log_return: float
    done: bool


def cash_only(m: int) -> np.ndarray:
    w = np.zeros(m + 1)
    w[0] = 1.0
    return w


def initial_state(m: int, episode_steps: int) -> PortfolioState:
    w = cash_only(m)
    return PortfolioState(1.0, w, w.copy(), 0, (), episode_steps)


def check_simplex(w, tol: float = SIMPLEX_TOL) -> bool:
    w = np.asarray(w, dtype=float)
    return bool(np.all(np.isfinite(w)) and abs(w.sum() - 1.0) <= tol and w.min() >= -1e-12)


def _as_action(action, m: int) -> np.ndarray:
    a = np.asarray(action, dtype=float)
    if a.shape != (m + 1,):
        raise ActionError(f"action must have shape ({m + 1},), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ActionError("action contains non-finite entries")
    if a.min() < -ACTION_TOL or abs(a.sum() - 1.0) > ACTION_TOL:
        raise ActionError(f"action is off the simplex (sum={a.sum():.3g}, min={a.min():.3g})")
    a = np.clip(a, 0.0, None)
    # leave exact simplex points alone so a no-trade action costs exactly zero
    if abs(a.sum() - 1.0) <= 8 * np.finfo(float).eps * len(a):
        return a
    return a / a.sum()


def drifted_weights(prev, y) -> np.ndarray:
    prev = np.asarray(prev, dtype=float)
    grown = np.asarray(y, dtype=float) * prev
    return grown / grown.sum()


def transaction_cost(drifted, target, cost_rate: float) -> float:
    """Cost rate for moving ``drifted`` to ``target``; cash (index 0) is free."""
    d = np.asarray(drifted, dtype=float)
    w = np.asarray(target, dtype=float)
    return float(cost_rate * np.abs(d[1:] - w[1:]).sum())


def average_sharpe_reward(ledger, config: EnvConfig) -> float:
    g = np.asarray(ledger, dtype=float)
    if g.size == 0:
        raise StateError("reward needs a non-empty return ledger")
    excess = g - config.risk_free
    mean = excess.mean()
    std = excess.std()  # population deviation
    # constant ledgers leave rounding-level residue in std; treat as zero
    if std <= 64 * np.finfo(float).eps * max(np.abs(excess).max(), 1e-300):
        return 0.0
    return float(math.sqrt(config.freq) * mean / (config.episode_steps * std))


def action_from_logits(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NumericError("logits must be finite")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def step(state: PortfolioState, action, y, config: EnvConfig) -> tuple[PortfolioState, StepResult]:
    """Advance one trading day. ``observation`` in the result is left as None;
    :class:`PortfolioEnv` fills it in."""
    if state.done:
        raise StateError(f"episode finished after {state.episode_steps} steps")
    m = len(state.weights) - 1
    target = _as_action(action, m)
    y = np.asarray(y, dtype=float)
    if y.shape != (m + 1,) or y[0] != 1.0 or np.any(y <= 0):
        raise ActionError(f"relative price vector must be positive with leading 1, got {y}")
    drifted = drifted_weights(state.weights, y)
    cost = transaction_cost(drifted, target, config.cost_rate)
    gamma = math.log1p(-cost) + float(np.log(y) @ state.weights)
    value = state.value * math.exp(gamma)
    ledger = state.return_ledger + (gamma,)
    new = replace(
        state,
        value=value,
        weights=target,
        drifted=drifted,
        step_index=state.step_index + 1,
        return_ledger=ledger,
        values=state.values + (value,),
    )
    reward = average_sharpe_reward(ledger, config)
    return new, StepResult(None, reward, cost, gamma, new.done)


def reset(dataset: MarketDataset, window_range: range, config: EnvConfig) -> tuple[PortfolioState, PriceTensor]:
    """Cash-only start at the first decision day of ``window_range``."""
    _check_range(dataset, window_range, config)
    state = initial_state(dataset.n_assets, len(window_range))
    return state, build_price_tensor(dataset, window_range.start, config.window)


def _check_range(dataset, window_range, config):
    if len(window_range) < config.episode_steps:
        raise WindowError(f"range of {len(window_range)} days is shorter than {config.episode_steps} steps")
    if window_range.start < first_decision_day(config.window) or window_range.stop > dataset.n_days:
        raise WindowError(
            f"range [{window_range.start}, {window_range.stop}) lacks history for window {config.window}"
            f" within {dataset.n_days} days"
        )


class PortfolioEnv:
    """Steps the MDP over consecutive calendar days of a dataset.

    Decision ``k`` (0-based) happens at the close of day ``start + k`` after
    observing that day's tensor; prices then move by the relative vector of
    that same day for the weights held since the previous close.
    """

    def __init__(self, dataset: MarketDataset, config: EnvConfig):
        self.dataset = dataset
        self.config = config
        self.state: PortfolioState | None = None
        self.window_range: range | None = None

    def reset(self, window_range: range) -> PriceTensor:
        if len(window_range) != self.config.episode_steps:
            window_range = range(window_range.start, window_range.start + self.config.episode_steps)
        self.state, obs = reset(self.dataset, window_range, self.config)
        self.window_range = window_range
        return obs

    @property
    def day(self) -> int:
        return self.window_range.start + self.state.step_index

    def step(self, action) -> StepResult:
        if self.state is None:
            raise StateError("call reset() before step()")
        y = relative_price_vector(self.dataset, self.day)
        self.state, res = step(self.state, action, y, self.config)
        obs = None if res.done else build_price_tensor(self.dataset, self.day, self.config.window)
        return replace(res, observation=obs)

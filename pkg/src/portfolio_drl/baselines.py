"""Rolling-window benchmark allocators.

Each model maps a trailing-window estimate of daily log-return moments to
fully invested, long-only risky weights (no cash). Models:

* ``EqualWeight``
* ``MV`` with ``MinRisk`` (minimum variance) or ``Sharpe`` (max Sharpe),
  both solved by projected gradient on the simplex
* ``RP`` equal risk contribution by cyclical coordinate descent
* ``HRP`` hierarchical risk parity
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import linkage, to_tree
from scipy.spatial.distance import squareform

from .backtest import BacktestResult, run_backtest
from .env import EnvConfig
from .errors import SpecError, WindowError
from .market_data import MarketDataset

MODELS = ("EqualWeight", "MV", "RP", "HRP")
OBJECTIVES = ("MinRisk", "Sharpe")
KKT_TOL = 1e-8
RC_TOL = 1e-8


@dataclass(frozen=True)
class CovarianceEstimate:
    mean: np.ndarray
    cov: np.ndarray
    window_days: int

    @property
    def n_assets(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class Allocation:
    weights: np.ndarray  # risky weights, sum 1
    flags: tuple = ()

    def with_cash(self) -> np.ndarray:
        return np.concatenate(([0.0], self.weights))


@dataclass(frozen=True)
class BaselineSpec:
    model: str
    objective: str | None = None
    window_days: int = 252

    def __post_init__(self):
        if self.model not in MODELS:
            raise SpecError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if (self.model == "MV") != (self.objective is not None):
            raise SpecError("an objective is required for MV and only for MV")
        if self.objective is not None and self.objective not in OBJECTIVES:
            raise SpecError(f"unknown objective {self.objective!r}")
        if self.window_days < 2:
            raise SpecError("window_days must be >= 2")

    @property
    def name(self) -> str:
        parts = [self.model] + ([self.objective] if self.objective else [])
        if self.window_days == 1008:
            parts.append("4yr")
        elif self.window_days != 252:
            parts.append(f"{self.window_days}d")
        return "-".join(parts)

    @classmethod
    def parse(cls, name: str) -> "BaselineSpec":
        """Inverse of :attr:`name`, e.g. ``"MV-Sharpe-4yr"`` or ``"HRP"``."""
        parts = name.split("-")
        model, rest = parts[0], parts[1:]
        objective = rest.pop(0) if rest and rest[0] in OBJECTIVES else None
        window = 252
        if rest:
            tag = rest.pop(0)
            if tag == "4yr":
                window = 1008
            elif tag.endswith("d") and tag[:-1].isdigit():
                window = int(tag[:-1])
            else:
                raise SpecError(f"cannot parse baseline name {name!r}")
        if rest:
            raise SpecError(f"cannot parse baseline name {name!r}")
        return cls(model, objective, window)


def log_returns(dataset: MarketDataset) -> np.ndarray:
    """Row ``s`` holds the return from day ``s - 1`` to ``s``; row 0 is NaN."""
    r = np.full(dataset.close.shape, np.nan)
    r[1:] = np.diff(np.log(dataset.close), axis=0)
    return r


def estimate_moments(dataset: MarketDataset, t: int, window_days: int) -> CovarianceEstimate:
    """Mean and covariance of the ``window_days`` daily log returns dated ``t - window_days .. t - 1``.

    Nothing dated ``t`` or later is read.
    """
    if t - window_days < 1 or t > dataset.n_days:
        raise WindowError(f"estimate at t={t} needs {window_days} prior returns")
    closes = dataset.close[t - window_days - 1:t]
    r = np.diff(np.log(closes), axis=0)
    mean = r.mean(axis=0)
    centered = r - mean
    cov = centered.T @ centered / len(r)
    return CovarianceEstimate(mean, (cov + cov.T) / 2, window_days)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum w = 1}`` (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def _equal(m):
    return np.full(m, 1.0 / m)


def min_variance(cov, tol: float = KKT_TOL, max_iter: int = 200_000) -> Allocation:
    """argmin w' cov w on the simplex, projected gradient from equal weights."""
    cov = np.asarray(cov, dtype=float)
    m = len(cov)
    scale = np.linalg.eigvalsh(cov)[-1]
    if scale <= 0:
        return Allocation(_equal(m), ("zero-covariance",))
    q = cov / scale  # largest eigenvalue 1, so step 0.5 = 1/L for grad 2 q w
    w = _equal(m)
    for _ in range(max_iter):
        w_next = project_simplex(w - 0.5 * (2 * q @ w))
        if np.linalg.norm(w_next - w) / 0.5 <= tol:
            return Allocation(w_next)
        w = w_next
    return Allocation(w, ("max-iter",))


def _sharpe(w, mu, cov):
    var = w @ cov @ w
    return (mu @ w) / np.sqrt(var)


def max_sharpe(mu, cov, tol: float = KKT_TOL, max_iter: int = 50_000) -> Allocation:
    """Maximize mu'w / sqrt(w' cov w) on the simplex by projected gradient ascent
    with backtracking."""
    mu = np.asarray(mu, dtype=float)
    cov = np.asarray(cov, dtype=float)
    m = len(mu)
    scale = np.linalg.eigvalsh(cov)[-1]
    if scale <= 0:
        return Allocation(_equal(m), ("zero-covariance",))
    ridge = 1e-12 * scale
    cov = cov + ridge * np.eye(m)
    # scale-free problem: unit top eigenvalue, unit largest |mu|
    q = cov / scale
    mu_scale = np.abs(mu).max()
    if mu_scale == 0:
        return min_variance(cov, tol)
    a = mu / mu_scale
    w = _equal(m)
    f = _sharpe(w, a, q)
    step = 1.0
    for _ in range(max_iter):
        sd = np.sqrt(w @ q @ w)
        grad = a / sd - (a @ w) * (q @ w) / sd ** 3
        while True:
            cand = project_simplex(w + step * grad)
            fc = _sharpe(cand, a, q)
            if fc >= f + 1e-4 * grad @ (cand - w) or step < 1e-14:
                break
            step *= 0.5
        mapping = np.linalg.norm(project_simplex(w + grad) - w)
        stalled = fc <= f + 8 * np.finfo(float).eps * abs(f)
        w, f = cand, fc
        if mapping <= tol * max(1.0, np.linalg.norm(grad)):
            return Allocation(w)
        if stalled and mapping <= 1e3 * tol:
            # objective changes are below rounding, so the line search has collapsed
            return Allocation(w)
        step = min(step * 2.0, 1e6)
    return Allocation(w, ("max-iter",))


def mv_optimize(est: CovarianceEstimate, objective: str) -> Allocation:
    if objective == "MinRisk":
        return min_variance(est.cov)
    if objective == "Sharpe":
        return max_sharpe(est.mean, est.cov)
    raise SpecError(f"unknown objective {objective!r}")


def risk_contributions(w, cov) -> np.ndarray:
    return w * (cov @ w)


def risk_parity(est_or_cov, tol: float = RC_TOL, max_iter: int = 10_000) -> Allocation:
    """Equal risk contribution weights by cyclical coordinate descent.

    Each sweep solves ``cov_ii w_i^2 + c_i w_i - sigma(w)/m = 0`` for every
    coordinate in turn. Assets with zero variance are left out.
    """
    cov = np.asarray(getattr(est_or_cov, "cov", est_or_cov), dtype=float)
    m = len(cov)
    var = np.diag(cov)
    live = var > 0
    flags = ()
    if not live.any():
        return Allocation(_equal(m), ("zero-covariance",))
    if not live.all():
        flags = ("zero-variance-excluded",)
    c = cov[np.ix_(live, live)] / var[live].max()
    k = int(live.sum())
    x = 1.0 / np.sqrt(np.diag(c))
    x /= x.sum()
    budget = 1.0 / k
    converged = False
    for _ in range(max_iter):
        for i in range(k):
            sigma = np.sqrt(x @ c @ x)
            ci = c[i] @ x - c[i, i] * x[i]
            x[i] = (-ci + np.sqrt(ci * ci + 4 * c[i, i] * budget * sigma)) / (2 * c[i, i])
        rc = risk_contributions(x, c)
        rc = rc / rc.sum()
        if rc.max() - rc.min() < tol:
            converged = True
            break
    if not converged:
        flags += ("max-iter",)
    w = np.zeros(m)
    w[live] = x / x.sum()
    return Allocation(w, flags)


def _ivp(cov):
    iv = 1.0 / np.diag(cov)
    return iv / iv.sum()


def _cluster_var(cov, items):
    sub = cov[np.ix_(items, items)]
    w = _ivp(sub)
    return float(w @ sub @ w)


def hrp_order(corr, variances) -> list[int]:
    """Quasi-diagonal leaf order of the single-linkage tree on sqrt((1 - rho) / 2).

    At each merge the smaller child comes first (ties: lower cluster
    variance first), which makes the order independent of input labelling.
    """
    m = len(corr)
    if m == 1:
        return [0]
    dist = np.sqrt(np.clip(0.5 * (1.0 - corr), 0.0, None))
    np.fill_diagonal(dist, 0.0)
    root = to_tree(linkage(squareform(dist, checks=False), method="single"))
    cov_diag = np.diag(variances)

    def walk(node):
        if node.is_leaf():
            return [node.id]
        left, right = walk(node.get_left()), walk(node.get_right())
        kl = (len(left), _cluster_var(cov_diag, left))
        kr = (len(right), _cluster_var(cov_diag, right))
        return left + right if kl <= kr else right + left

    return walk(root)


def hrp(est_or_cov) -> Allocation:
    cov = np.asarray(getattr(est_or_cov, "cov", est_or_cov), dtype=float)
    m = len(cov)
    var = np.diag(cov).copy()
    flags = ()
    if np.all(var <= 0):
        return Allocation(_equal(m), ("zero-covariance",))
    sd = np.sqrt(np.clip(var, 0.0, None))
    dead = sd == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(sd, sd)
    if dead.any():
        flags = ("constant-asset-correlation-zeroed",)
        corr[dead, :] = 0.0
        corr[:, dead] = 0.0
        # a riskless asset still needs a finite inverse variance
        var[dead] = 1e-12 * var.max()
        cov = cov.copy()
        cov[np.diag_indices(m)] = var
    np.fill_diagonal(corr, 1.0)
    corr = np.clip(corr, -1.0, 1.0)
    order = hrp_order(corr, var)

    w = np.ones(m)
    clusters = [order]
    while clusters:
        clusters = [c[j:k] for c in clusters for j, k in ((0, len(c) // 2), (len(c) // 2, len(c))) if len(c) > 1]
        for a, b in zip(clusters[::2], clusters[1::2]):
            va, vb = _cluster_var(cov, a), _cluster_var(cov, b)
            alpha = 1.0 - va / (va + vb)
            w[a] *= alpha
            w[b] *= 1.0 - alpha
    return Allocation(w / w.sum(), flags)


def allocate(spec: BaselineSpec, dataset: MarketDataset, t: int) -> Allocation:
    if spec.model == "EqualWeight":
        return Allocation(_equal(dataset.n_assets))
    est = estimate_moments(dataset, t, spec.window_days)
    if spec.model == "MV":
        return mv_optimize(est, spec.objective)
    if spec.model == "RP":
        return risk_parity(est)
    return hrp(est)


@dataclass
class BaselineBacktest:
    result: BacktestResult
    flags: dict = field(default_factory=dict)


def rolling_rebalance_backtest(dataset: MarketDataset, spec: BaselineSpec, env_config: EnvConfig,
                               days: range) -> BaselineBacktest:
    """Re-estimate on the trailing window and rebalance at every close in ``days``."""
    if spec.model != "EqualWeight" and days.start - spec.window_days < 1:
        raise WindowError(f"{spec.name} needs {spec.window_days} returns before day {days.start}")
    flags = {}

    def target(t):
        alloc = allocate(spec, dataset, t)
        if alloc.flags:
            flags[t] = alloc.flags
        return alloc.with_cash()

    return BaselineBacktest(run_backtest(dataset, env_config, days, target, spec.name), flags)

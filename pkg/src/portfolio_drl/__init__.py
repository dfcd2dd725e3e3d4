"""Portfolio rebalancing with PPO on an average-Sharpe reward, with
rolling-window benchmark optimizers and a backtest harness."""

from .env import EnvConfig, PortfolioEnv, action_from_logits, average_sharpe_reward
from .market_data import AssetSpec, MarketDataset, load_csv, synthetic_market
from .metrics import MetricsReport, ValueCurve, compute_metrics
from .network import NetworkSpec, actor_critic_forward, init_params
from .ppo import PpoConfig, PpoTrainer, train

__version__ = "0.1.0"

__all__ = [
    "AssetSpec", "EnvConfig", "MarketDataset", "MetricsReport", "NetworkSpec", "PortfolioEnv", "PpoConfig",
    "PpoTrainer", "ValueCurve", "action_from_logits", "actor_critic_forward", "average_sharpe_reward",
    "compute_metrics", "init_params", "load_csv", "synthetic_market", "train",
]

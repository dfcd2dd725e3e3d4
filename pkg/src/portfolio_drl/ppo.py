"""PPO with a clipped surrogate, GAE and a clipped value loss.

The policy is a diagonal Gaussian over the actor's pre-softmax logits with a
learned, state-independent log standard deviation. The environment turns a
sampled logit vector into portfolio weights with a softmax.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .env import EnvConfig, PortfolioEnv, action_from_logits
from .errors import ShapeError, StateError
from .market_data import MarketDataset, sample_episode_window
from .network import NetworkSpec, ParameterSet, actor_critic_forward, init_params

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class PpoConfig:
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    value_clip: float = 0.2
    epochs_per_update: int = 4
    minibatch_size: int = 64
    learning_rate: float = 3e-4
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_steps: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.discount <= 1:
            raise ValueError(f"discount must lie in (0, 1], got {self.discount}")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.clip_eps <= 0:
            raise ValueError(f"clip_eps must be > 0, got {self.clip_eps}")
        if self.epochs_per_update < 1 or self.minibatch_size < 1 or self.total_steps < 1:
            raise ValueError("epochs_per_update, minibatch_size and total_steps must be >= 1")


def clamp_log_std(log_std):
    return np.clip(np.asarray(log_std, dtype=float), LOG_STD_MIN, LOG_STD_MAX)


def gaussian_log_prob(x, mean, log_std) -> np.ndarray:
    """Diagonal Gaussian log density, summed over the last axis."""
    log_std = clamp_log_std(log_std)
    z = (np.asarray(x) - np.asarray(mean)) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - z.shape[-1] * HALF_LOG_2PI


def sample_action(logits, log_std, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    mean = np.asarray(logits, dtype=float)
    sigma = np.exp(clamp_log_std(log_std))
    raw = mean + sigma * rng.standard_normal(mean.shape)
    return raw, float(gaussian_log_prob(raw, mean, log_std))


def compute_gae(rewards, values, dones, discount: float, lam: float, last_value: float = 0.0):
    """Generalized advantage estimates and bootstrapped returns.

    ``values[t]`` estimates state t; ``last_value`` is the value of the state
    after the final record (ignored when that record is terminal).
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    if not r.shape == v.shape == d.shape or r.ndim != 1:
        raise ShapeError(f"rewards/values/dones must be equal-length vectors: {r.shape}, {v.shape}, {d.shape}")
    adv = np.zeros_like(r)
    next_value, next_adv = last_value, 0.0
    for t in range(len(r) - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + discount * next_value * live - v[t]
        next_adv = delta + discount * lam * live * next_adv
        adv[t] = next_adv
        next_value = v[t]
    return adv, adv + v


def ppo_clip_loss(log_prob_new, log_prob_old, advantage, clip_eps: float) -> ad.Tensor:
    """Batch mean of ``-min(r A, clip(r, 1-eps, 1+eps) A)`` with ``r = exp(new - old)``."""
    ratio = ad.exp(ad.sub(log_prob_new, log_prob_old))
    adv = np.asarray(advantage, dtype=float)
    surrogate = ad.minimum(ad.mul(ratio, adv), ad.mul(ad.clip(ratio, 1 - clip_eps, 1 + clip_eps), adv))
    return ad.mul(ad.mean(surrogate), -1.0)


def value_loss_clipped(v_new, v_old, returns, clip: float) -> ad.Tensor:
    v_new = ad.tensor(v_new)
    v_old = np.asarray(v_old, dtype=float)
    ret = np.asarray(returns, dtype=float)
    unclipped = ad.square(ad.sub(v_new, ret))
    if math.isinf(clip):
        return ad.mean(unclipped)
    v_clipped = ad.add(v_old, ad.clip(ad.sub(v_new, v_old), -clip, clip))
    return ad.mean(ad.maximum(unclipped, ad.square(ad.sub(v_clipped, ret))))


def log_prob_tensor(raw_actions, mean: ad.Tensor, log_std: ad.Tensor) -> ad.Tensor:
    ls = ad.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    z = ad.mul(ad.sub(raw_actions, mean), ad.exp(ad.mul(ls, -1.0)))
    dim = mean.shape[-1]
    return ad.sub(ad.mul(ad.sum(ad.square(z), axis=1), -0.5), ad.add(ad.sum(ls), dim * HALF_LOG_2PI))


def entropy_tensor(log_std: ad.Tensor) -> ad.Tensor:
    ls = ad.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    return ad.add(ad.sum(ls), ls.shape[0] * (0.5 + HALF_LOG_2PI))


class TrajectoryBuffer:
    """One rollout's records, all produced by a single parameter version."""

    def __init__(self, capacity: int, policy_version: int):
        self.capacity = capacity
        self.policy_version = policy_version
        self.observations, self.raw_actions = [], []
        self.log_probs, self.rewards, self.values, self.dones = [], [], [], []
        self.advantages = None
        self.returns = None

    def __len__(self):
        return len(self.rewards)

    def add(self, observation, raw_action, log_prob, reward, value, done, policy_version):
        if policy_version != self.policy_version:
            raise StateError(f"record from policy v{policy_version} in buffer for v{self.policy_version}")
        if len(self) >= self.capacity:
            raise StateError("trajectory buffer is full")
        self.observations.append(np.asarray(observation, dtype=float))
        self.raw_actions.append(np.asarray(raw_action, dtype=float))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))

    def finish(self, discount, lam, last_value=0.0):
        self.advantages, self.returns = compute_gae(self.rewards, self.values, self.dones, discount, lam, last_value)

    def arrays(self):
        if self.advantages is None:
            raise StateError("advantages must be computed before updating")
        return (np.stack(self.observations), np.stack(self.raw_actions), np.array(self.log_probs),
                np.array(self.values), self.advantages, self.returns)


@dataclass(frozen=True)
class EpisodeRecord:
    episode_index: int
    mean_reward: float
    steps: int


@dataclass
class TrainResult:
    params: ParameterSet
    history: list = field(default_factory=list)
    policy_version: int = 0

    def rewards(self) -> np.ndarray:
        return np.array([h.mean_reward for h in self.history])


def greedy_weights(obs, params: ParameterSet, spec: NetworkSpec) -> np.ndarray:
    """Deterministic action: softmax of the policy mean."""
    with ad.no_grad():
        logits, _ = actor_critic_forward(obs, params, spec)
    return action_from_logits(logits.data)


class PpoTrainer:
    def __init__(self, dataset: MarketDataset, env_config: EnvConfig, net_spec: NetworkSpec,
                 ppo_config: PpoConfig, params: ParameterSet | None = None):
        if net_spec.asset_count != dataset.n_assets or net_spec.window != env_config.window:
            raise ShapeError(
                f"network expects {net_spec.asset_count} assets / window {net_spec.window}, "
                f"data has {dataset.n_assets} assets / window {env_config.window}"
            )
        if ppo_config.total_steps < env_config.episode_steps:
            raise ValueError("total_steps must be >= episode_steps")
        self.dataset = dataset
        self.env_config = env_config
        self.spec = net_spec
        self.config = ppo_config
        self.params = params if params is not None else init_params(net_spec, ppo_config.seed)
        self.optimizer = ad.Adam(list(self.params), lr=ppo_config.learning_rate,
                                 max_grad_norm=ppo_config.max_grad_norm)
        self.rng = np.random.default_rng(ppo_config.seed)
        self.env = PortfolioEnv(dataset, env_config)
        self.version = 0
        self.steps = 0
        self.history: list[EpisodeRecord] = []

    def collect(self) -> TrajectoryBuffer:
        cfg = self.env_config
        window = sample_episode_window(self.dataset, cfg.episode_steps, self.rng, cfg.window)
        obs = self.env.reset(window)
        buf = TrajectoryBuffer(cfg.episode_steps, self.version)
        log_std = self.params["policy.log_std"].data
        while True:
            with ad.no_grad():
                logits, value = actor_critic_forward(obs, self.params, self.spec)
            raw, logp = sample_action(logits.data, log_std, self.rng)
            res = self.env.step(action_from_logits(raw))
            buf.add(obs.data, raw, logp, res.reward, value.item(), res.done, self.version)
            if res.done:
                break
            obs = res.observation
        buf.finish(self.config.discount, self.config.gae_lambda)
        return buf

    def update(self, buf: TrajectoryBuffer) -> dict:
        if buf.policy_version != self.version:
            raise StateError(f"buffer from policy v{buf.policy_version}, current is v{self.version}")
        cfg = self.config
        obs, raw, old_logp, old_v, adv, ret = buf.arrays()
        n = len(buf)
        stats = {"policy_loss": 0.0, "value_loss": 0.0, "updates": 0}
        for _ in range(cfg.epochs_per_update):
            order = self.rng.permutation(n)
            for lo in range(0, n, cfg.minibatch_size):
                idx = order[lo:lo + cfg.minibatch_size]
                a = adv[idx]
                if len(idx) > 1:
                    a = (a - a.mean()) / (a.std() + 1e-8)
                logits, values = actor_critic_forward(obs[idx], self.params, self.spec)
                log_std = self.params["policy.log_std"]
                new_logp = log_prob_tensor(raw[idx], logits, log_std)
                pl = ppo_clip_loss(new_logp, old_logp[idx], a, cfg.clip_eps)
                vl = value_loss_clipped(values, old_v[idx], ret[idx], cfg.value_clip)
                loss = ad.add(pl, ad.mul(vl, cfg.value_coef))
                if cfg.entropy_coef:
                    loss = ad.sub(loss, ad.mul(entropy_tensor(log_std), cfg.entropy_coef))
                self.optimizer.zero_grad()
                loss.backward()
                self.optimizer.step()
                stats["policy_loss"] += pl.item()
                stats["value_loss"] += vl.item()
                stats["updates"] += 1
        self.version += 1
        return stats

    def run(self, progress_every: int = 0) -> TrainResult:
        while self.steps < self.config.total_steps:
            buf = self.collect()
            self.steps += len(buf)
            self.history.append(EpisodeRecord(len(self.history), float(np.mean(buf.rewards)), self.steps))
            self.update(buf)
            if progress_every and len(self.history) % progress_every == 0:
                log.info("episode %d steps %d mean reward %.5f", len(self.history), self.steps,
                         self.history[-1].mean_reward)
        return TrainResult(self.params, list(self.history), self.version)


def train(dataset: MarketDataset, env_config: EnvConfig, net_spec: NetworkSpec, ppo_config: PpoConfig,
          progress_every: int = 0) -> TrainResult:
    return PpoTrainer(dataset, env_config, net_spec, ppo_config).run(progress_every)


def write_reward_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode_index", "mean_reward", "steps"])
        for h in history:
            w.writerow([h.episode_index, repr(h.mean_reward), h.steps])


def read_reward_history(path) -> list[EpisodeRecord]:
    with open(path, newline="") as fh:
        return [EpisodeRecord(int(r["episode_index"]), float(r["mean_reward"]), int(r["steps"]))
                for r in csv.DictReader(fh)]

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portfolio_drl import autodiff as ad
from portfolio_drl.env import EnvConfig
from portfolio_drl.errors import ShapeError, StateError
from portfolio_drl.market_data import AssetSpec, synthetic_market
from portfolio_drl.network import NetworkSpec
from portfolio_drl.ppo import (
    LOG_STD_MIN,
    PpoConfig,
    PpoTrainer,
    TrajectoryBuffer,
    compute_gae,
    gaussian_log_prob,
    log_prob_tensor,
    ppo_clip_loss,
    read_reward_history,
    sample_action,
    train,
    value_loss_clipped,
    write_reward_history,
)

TINY_NET = dict(conv_channels=((4, 2), (2, 2), (2, 2), (2, 2), (2, 2)), fc_widths=(4, 4))


def reward_to_go_minus_value(rewards, values):
    out = []
    for t in range(len(rewards)):
        out.append(math.fsum(rewards[t:]) - values[t])
    return np.array(out)


# ---- sampling ------------------------------------------------------------------

def test_gaussian_log_prob_examples():
    assert gaussian_log_prob([0.0], [0.0], [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), rel=1e-15)
    x, mu, ls = np.array([0.3, -1.0]), np.array([0.1, 0.5]), np.array([-0.2, 0.4])
    ref = sum(-0.5 * ((xi - mi) / math.exp(li)) ** 2 - li - 0.5 * math.log(2 * math.pi)
              for xi, mi, li in zip(x, mu, ls))
    assert gaussian_log_prob(x, mu, ls) == pytest.approx(ref, rel=1e-14)


def test_sample_action_seeded_and_clamped():
    mean = np.array([0.5, -0.2, 0.0])
    a1 = sample_action(mean, np.zeros(3), np.random.default_rng(4))
    a2 = sample_action(mean, np.zeros(3), np.random.default_rng(4))
    np.testing.assert_array_equal(a1[0], a2[0])
    assert a1[1] == a2[1]
    raw, logp = sample_action(mean, np.full(3, -50.0), np.random.default_rng(0))
    assert np.abs(raw - mean).max() < 1e-1 * math.exp(LOG_STD_MIN) * 50
    assert math.isfinite(logp) and logp > 10


def test_log_prob_tensor_matches_numpy():
    rng = np.random.default_rng(0)
    mean, raw, ls = rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=3) * 0.3
    lp = log_prob_tensor(raw, ad.Tensor(mean), ad.Tensor(ls))
    np.testing.assert_allclose(lp.data, gaussian_log_prob(raw, mean, ls), rtol=1e-13)


# ---- GAE -----------------------------------------------------------------------

def test_gae_examples():
    adv, ret = compute_gae([1, 1], [0, 0], [0, 1], 1.0, 1.0)
    np.testing.assert_array_equal(adv, [2, 1])
    np.testing.assert_array_equal(ret, [2, 1])
    adv, _ = compute_gae(np.zeros(4), np.zeros(4), [0, 0, 0, 1], 0.9, 0.9)
    assert np.all(adv == 0)
    r, v = np.array([0.5, -1.0, 2.0]), np.array([0.1, 0.3, -0.2])
    adv, _ = compute_gae(r, v, [0, 0, 1], 0.9, 0.0)
    np.testing.assert_allclose(adv, [0.5 + 0.9 * 0.3 - 0.1, -1.0 - 0.9 * 0.2 - 0.3, 2.0 + 0.2], rtol=1e-15)


def test_gae_length_mismatch():
    with pytest.raises(ShapeError):
        compute_gae([1, 2], [0], [0, 1], 0.9, 0.9)


def test_gae_bootstrap_only_when_not_terminal():
    adv, _ = compute_gae([0.0], [0.0], [0], 0.5, 1.0, last_value=4.0)
    assert adv[0] == 2.0
    adv, _ = compute_gae([0.0], [0.0], [1], 0.5, 1.0, last_value=4.0)
    assert adv[0] == 0.0


def test_gae_unit_discount_equals_reward_to_go(rng):
    for _ in range(50):
        n = int(rng.integers(1, 40))
        r, v = rng.normal(size=n), rng.normal(size=n)
        adv, ret = compute_gae(r, v, np.r_[np.zeros(n - 1), 1], 1.0, 1.0)
        np.testing.assert_allclose(adv, reward_to_go_minus_value(r, v), rtol=0, atol=1e-12)


# ---- losses ------------------------------------------------------------------

def _clip_term(ratio, adv, eps):
    return ppo_clip_loss(ad.Tensor([math.log(ratio)]), np.zeros(1), [adv], eps).item()


def test_clip_loss_examples():
    assert _clip_term(1.0, 0.7, 0.2) == pytest.approx(-0.7, rel=1e-15)
    assert _clip_term(1.5, 1.0, 0.2) == pytest.approx(-1.2, rel=1e-14)
    assert _clip_term(0.5, -1.0, 0.2) == pytest.approx(0.8, rel=1e-14)


@settings(max_examples=300)
@given(st.floats(-3, 3), st.floats(-10, 10), st.floats(0.01, 0.5))
def test_clip_loss_bound(log_ratio, adv, eps):
    term = ppo_clip_loss(ad.Tensor([log_ratio]), np.zeros(1), [adv], eps).item()
    if adv > 0:
        assert abs(term) <= (1 + eps) * abs(adv) * (1 + 1e-12)
    else:
        # negative advantages are pessimistic: the loss is at least (1 - eps)|A|
        assert term >= (1 - eps) * abs(adv) * (1 - 1e-12)


def test_clip_loss_gradient_vanishes_when_clipped():
    new = ad.Tensor([math.log(1.5)], requires_grad=True)
    ppo_clip_loss(new, np.zeros(1), [1.0], 0.2).backward()
    assert new.grad[0] == 0.0


def test_value_loss_examples():
    assert value_loss_clipped(ad.Tensor([1.0]), [1.0], [1.0], 0.2).item() == 0.0
    assert value_loss_clipped(ad.Tensor([2.0]), [0.0], [1.0], 0.2).item() == pytest.approx(1.0)
    v = ad.Tensor([3.0, 0.0])
    assert value_loss_clipped(v, [0.0, 0.0], [1.0, 1.0], math.inf).item() == pytest.approx(2.5)
    assert value_loss_clipped(ad.Tensor([0.1]), [0.0], [1.0], 0.05).item() == pytest.approx(0.95 ** 2)


# ---- buffer ------------------------------------------------------------------

def test_buffer_version_and_capacity():
    buf = TrajectoryBuffer(2, policy_version=3)
    with pytest.raises(StateError):
        buf.add(np.zeros(2), np.zeros(2), 0.0, 0.0, 0.0, False, policy_version=2)
    buf.add(np.zeros(2), np.zeros(2), 0.0, 1.0, 0.0, False, 3)
    with pytest.raises(StateError):
        buf.arrays()
    buf.add(np.zeros(2), np.zeros(2), 0.0, 1.0, 0.0, True, 3)
    with pytest.raises(StateError):
        buf.add(np.zeros(2), np.zeros(2), 0.0, 1.0, 0.0, True, 3)
    buf.finish(1.0, 1.0)
    np.testing.assert_array_equal(buf.arrays()[4], [2.0, 1.0])


def test_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(discount=0.0)
    with pytest.raises(ValueError):
        PpoConfig(clip_eps=0.0)


# ---- training loop -----------------------------------------------------------

def _setup(steps=8, total=8, seed=0):
    ds = synthetic_market([AssetSpec("A", 0.001), AssetSpec("B", 0.0, 0.01)], 60, rng_seed=1)
    env = EnvConfig(window=4, episode_steps=steps)
    spec = NetworkSpec(2, window=4, **TINY_NET)
    ppo = PpoConfig(total_steps=total, minibatch_size=4, epochs_per_update=2, seed=seed)
    return ds, env, spec, ppo


def test_minimal_run_is_one_cycle():
    ds, env, spec, ppo = _setup()
    before = None
    trainer = PpoTrainer(ds, env, spec, ppo)
    before = trainer.params.flat()
    result = trainer.run()
    assert len(result.history) == 1 and result.policy_version == 1
    assert result.history[0].steps == 8
    assert not np.array_equal(before, result.params.flat())


def test_stale_buffer_rejected():
    ds, env, spec, ppo = _setup(total=16)
    trainer = PpoTrainer(ds, env, spec, ppo)
    buf = trainer.collect()
    trainer.update(buf)
    with pytest.raises(StateError):
        trainer.update(buf)


def test_training_is_deterministic(tmp_path):
    runs = []
    for k in range(2):
        ds, env, spec, ppo = _setup(total=24, seed=11)
        res = train(ds, env, spec, ppo)
        write_reward_history(res.history, tmp_path / f"r{k}.csv")
        runs.append(res)
    assert (tmp_path / "r0.csv").read_bytes() == (tmp_path / "r1.csv").read_bytes()
    np.testing.assert_array_equal(runs[0].params.flat(), runs[1].params.flat())
    assert read_reward_history(tmp_path / "r0.csv") == runs[0].history
    ds, env, spec, ppo = _setup(total=24, seed=12)
    assert not np.array_equal(train(ds, env, spec, ppo).params.flat(), runs[0].params.flat())


def test_trainer_rejects_mismatched_network():
    ds, env, _, ppo = _setup()
    with pytest.raises(ShapeError):
        PpoTrainer(ds, env, NetworkSpec(3, window=4, **TINY_NET), ppo)

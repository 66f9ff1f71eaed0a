import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hintrl.environment import TaskConfig, observe, reset
from hintrl.errors import ConfigError
from hintrl.hints import NEUTRAL_HINT, EnhancedObservation, Hint, Subgoal
from hintrl.rl import (
    BASE_DIM, VIEW_DIM, Adam, PolicyNet, PPOConfig, RolloutBuffer, act, compute_gae, entropy,
    feature_dim, featurize, load_checkpoint, mission_features, ppo_loss_and_grad, ppo_update,
    save_checkpoint,
)

from helpers import discounted_mc_advantages

HINT_OFF = VIEW_DIM
SUBGOAL_OFF = VIEW_DIM + 8
AVAIL = VIEW_DIM + 16


def _obs(seed=0, task="GoToObj"):
    s, m = reset(task, seed)
    return observe(s, m)


def test_feature_dimension():
    assert feature_dim() == BASE_DIM == 980 + 8 + 8 + 1 + 7 == 1004
    assert feature_dim(text=True) > 1004
    assert featurize(EnhancedObservation(_obs(), NEUTRAL_HINT, 0)).shape == (1004,)


def test_neutral_hint_encoding():
    v = featurize(EnhancedObservation(_obs(), NEUTRAL_HINT, 0))
    assert v[HINT_OFF + 7] == 1 and v[HINT_OFF:HINT_OFF + 7].sum() == 0
    assert v[SUBGOAL_OFF + 7] == 1 and v[AVAIL] == 0
    scheduled_neutral = featurize(EnhancedObservation(_obs(), NEUTRAL_HINT, 1))
    assert np.array_equal(v, scheduled_neutral)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 500), action=st.integers(0, 6), sub=st.sampled_from(list(Subgoal)[:7]),
       task=st.sampled_from(["GoToObj", "OpenDoor", "PickupLoc"]))
def test_feature_groups_are_one_hot_and_local(seed, action, sub, task):
    obs = _obs(seed, task)
    base = featurize(EnhancedObservation(obs, NEUTRAL_HINT, 0))
    hinted = featurize(EnhancedObservation(obs, Hint(action, sub), 1))
    assert set(np.unique(hinted)) <= {0.0, 1.0}
    cells = hinted[:VIEW_DIM].reshape(49, 20)
    assert (cells[:, :11].sum(1) == 1).all() and (cells[:, 11:17].sum(1) == 1).all()
    assert (cells[:, 17:].sum(1) == 1).all()
    assert hinted[HINT_OFF:HINT_OFF + 8].sum() == 1 and hinted[SUBGOAL_OFF:SUBGOAL_OFF + 8].sum() == 1
    assert hinted[AVAIL + 1:].sum() == 1
    changed = np.flatnonzero(base != hinted)
    assert changed.min() >= HINT_OFF and changed.max() <= AVAIL


def test_mission_features_fixed_vocabulary():
    a = mission_features("pick up the red key in the top-left corner")
    b = mission_features("go to the blue ball")
    assert a.shape == b.shape and a.sum() > 0 and b.sum() > 0
    assert mission_features("gibberish words") .sum() == 0


# --------------------------------------------------------------------------- #
# GAE
# --------------------------------------------------------------------------- #

def _random_rollout(rng, n):
    rewards = rng.random(n) * (rng.random(n) < 0.2)
    values = rng.normal(size=n)
    dones = (rng.random(n) < 0.1).astype(float)
    return rewards, values, dones, float(rng.normal())


def test_gae_lambda_one_matches_monte_carlo():
    rng = np.random.default_rng(0)
    for _ in range(100):
        r, v, d, last = _random_rollout(rng, int(rng.integers(1, 60)))
        adv, ret = compute_gae(r, v, d, 0.99, 1.0, last)
        np.testing.assert_allclose(adv, discounted_mc_advantages(r, v, d, 0.99, last), rtol=0, atol=1e-9)
        np.testing.assert_allclose(ret, adv + v)


def test_gae_lambda_zero_is_td_residual():
    rng = np.random.default_rng(1)
    for _ in range(100):
        r, v, d, last = _random_rollout(rng, 40)
        adv, _ = compute_gae(r, v, d, 0.9, 0.0, last)
        nxt = np.append(v[1:], last)
        assert np.array_equal(adv, r + 0.9 * nxt * (1 - d) - v)


def test_gae_terminal_step():
    adv, _ = compute_gae([1.0], [0.0], [1.0], 0.99, 0.95, 123.0)
    assert adv[0] == 1.0


def test_gae_vectorised_over_workers():
    rng = np.random.default_rng(2)
    r, v, d = rng.random((30, 3)), rng.normal(size=(30, 3)), (rng.random((30, 3)) < .1).astype(float)
    last = rng.normal(size=3)
    adv, _ = compute_gae(r, v, d, 0.99, 0.95, last)
    for w in range(3):
        single, _ = compute_gae(r[:, w], v[:, w], d[:, w], 0.99, 0.95, last[w])
        np.testing.assert_allclose(adv[:, w], single, atol=1e-12)


def test_gae_rejects_ragged_input():
    with pytest.raises(ValueError):
        compute_gae([1, 2], [1], [0, 0], 0.9, 0.9, 0)


# --------------------------------------------------------------------------- #
# Gradients
# --------------------------------------------------------------------------- #

GRAD_FLOOR = 1e-8


def _batch(rng, net, n=24):
    x = (rng.random((n, net.in_dim)) < 0.3).astype(np.float64)
    logits, _, _ = net.forward(x)
    actions = rng.integers(0, 7, n)
    logp = np.log(np.exp(logits - logits.max(1, keepdims=True)) /
                  np.exp(logits - logits.max(1, keepdims=True)).sum(1, keepdims=True))
    old = logp[np.arange(n), actions] + rng.normal(0, 0.3, n)
    return x, actions, old, rng.normal(size=n), rng.normal(size=n)


def max_relative_error(net, batch, h=1e-6, coefs=(0.2, 0.5, 0.01)):
    clip, vc, ec = coefs
    _, grads, _ = ppo_loss_and_grad(net, *batch, clip, vc, ec)
    worst = 0.0
    for name, p in net.params.items():
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + h
            lp, _, _ = ppo_loss_and_grad(net, *batch, clip, vc, ec)
            p[i] = orig - h
            lm, _, _ = ppo_loss_and_grad(net, *batch, clip, vc, ec)
            p[i] = orig
            num = (lp - lm) / (2 * h)
            ana = grads[name][i]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), GRAD_FLOOR))
    return worst


def test_gradient_check_small_network():
    rng = np.random.default_rng(0)
    for b in range(5):
        net = PolicyNet(12, (16, 16), seed=b, dtype="float64")
        assert max_relative_error(net, _batch(rng, net)) < 1e-4


def test_clipped_samples_have_zero_policy_gradient():
    net = PolicyNet(10, (16, 16), seed=3, dtype="float64")
    rng = np.random.default_rng(3)
    x, actions, _, _, ret = _batch(rng, net, 16)
    logits, _, _ = net.forward(x)
    logp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
    old = logp[np.arange(16), actions] - 1.0  # ratio = e > 1 + clip
    adv = np.abs(rng.normal(size=16)) + 0.1
    _, grads, stats = ppo_loss_and_grad(net, x, actions, old, adv, ret, 0.2, 0.0, 0.0)
    assert stats["clip_fraction"] == 1.0
    assert all(np.abs(g).max() == 0 for g in grads.values())


def test_small_step_along_negative_gradient_descends():
    net = PolicyNet(12, (16, 16), seed=4, dtype="float64")
    batch = _batch(np.random.default_rng(4), net)
    loss, grads, _ = ppo_loss_and_grad(net, *batch, 0.2, 0.5, 0.01)
    for k in net.params:
        net.params[k] -= 1e-4 * grads[k]
    new_loss, _, _ = ppo_loss_and_grad(net, *batch, 0.2, 0.5, 0.01)
    assert new_loss < loss


def test_uniform_logits_entropy():
    assert entropy(np.zeros((1, 7)))[0] == pytest.approx(math.log(7))


def _fixed_policy(probs):
    net = PolicyNet(4, (16, 16), seed=0, dtype="float64")
    net.params["Wpi"][:] = 0
    net.params["bpi"][:] = np.log(probs)
    return net


def test_greedy_is_argmax():
    probs = np.array([.05, .1, .4, .2, .1, .1, .05])
    a, logp, _ = act(_fixed_policy(probs), np.zeros(4), greedy=True)
    assert a == 2 and logp == pytest.approx(math.log(.4))


def test_sampling_frequencies():
    probs = np.array([.05, .1, .4, .2, .1, .1, .05])
    n = 20_000
    actions, logp, _ = act(_fixed_policy(probs), np.zeros((n, 4)), np.random.default_rng(0))
    freq = np.bincount(actions, minlength=7) / n
    assert np.all(np.abs(freq - probs) < 3 * np.sqrt(probs * (1 - probs) / n))
    np.testing.assert_allclose(logp, np.log(probs[actions]))


def test_ppo_update_improves_advantaged_action():
    cfg = PPOConfig(horizon=16, workers=4, minibatch=32, epochs=4, lr=1e-2, entropy_coef=0.0)
    net = PolicyNet(6, (16, 16), seed=0, dtype="float64")
    buf = RolloutBuffer(16, 4, 6, dtype="float64")
    rng = np.random.default_rng(0)
    x = np.ones((4, 6))
    for _ in range(16):
        a, lp, v = act(net, x, rng)
        buf.add(x, a, lp, v, (a == 3).astype(float), np.ones(4))
    before = act(net, x[:1], greedy=True)[1]
    buf.finish(np.zeros(4), cfg.gamma, cfg.lam)
    stats = ppo_update(net, buf, cfg, Adam(net.params, cfg.lr), rng)
    logits, _, _ = net.forward(x[:1])
    assert logits[0].argmax() == 3 and np.isfinite(stats["loss"])
    assert not buf.full and before is not None


def test_ppo_config_validation():
    with pytest.raises(ConfigError):
        PPOConfig(gamma=1.5)
    with pytest.raises(ConfigError):
        PPOConfig(clip=0)


def test_checkpoint_roundtrip_and_dimension_check(tmp_path):
    net = PolicyNet(1004, (32, 32), seed=1)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, net, {"lr": 1})
    loaded, meta = load_checkpoint(path, expected_dim=1004)
    x = np.random.default_rng(0).random((3, 1004))
    np.testing.assert_array_equal(net.forward(x)[0], loaded.forward(x)[0])
    assert meta["config"] == {"lr": 1}
    with pytest.raises(ConfigError):
        load_checkpoint(path, expected_dim=feature_dim(text=True))

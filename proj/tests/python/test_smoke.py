"""Smoke tests for the python bindings."""

import math

import pytest

gpocore = pytest.importorskip("gpocore")


def test_env_roundtrip():
    env = gpocore.Env("tigerdoor", seed=3)
    spec = env.spec()
    assert spec["state_dim"] == 2
    assert spec["obs_dim"] == 3
    assert spec["discrete"]
    r = env.reset()
    assert len(r["obs"]) == 3
    r = env.step([2.0])  # listen
    assert r["reward"] == pytest.approx(-0.1)
    assert not r["done"]
    # the revealed observation matches the hidden state
    assert r["obs"][1 + int(max(range(2), key=lambda i: r["state"][i]))] == 1.0


def test_env_determinism():
    a = gpocore.Env("noisy_masked_nav", seed=11, noise_sigma=0.1)
    b = gpocore.Env("noisy_masked_nav", seed=11, noise_sigma=0.1)
    ra, rb = a.reset(), b.reset()
    assert list(ra["obs"]) == list(rb["obs"])
    for _ in range(5):
        ra = a.step([0.3, -0.2])
        rb = b.step([0.3, -0.2])
        assert list(ra["state"]) == list(rb["state"])
        assert ra["reward"] == rb["reward"]


def test_gae_matches_direct_sum():
    rewards = [1.0, -0.5, 2.0, 0.0]
    values = [0.3, 0.1, -0.2, 0.5]
    dones = [0.0, 0.0, 0.0, 1.0]
    adv = gpocore.gae(rewards, values, dones, 0.9, 0.8, [0.0], 1, 4)
    # direct double-loop oracle
    for t in range(4):
        acc, w = 0.0, 1.0
        for l in range(4 - t):
            i = t + l
            next_v = values[i + 1] if i + 1 < 4 else 0.0
            delta = rewards[i] + 0.9 * next_v * (1.0 - dones[i]) - values[i]
            acc += w * delta
            if dones[i] == 1.0:
                break
            w *= 0.9 * 0.8
        assert adv[t] == pytest.approx(acc, abs=1e-12)


def test_scalar_ops():
    assert gpocore.double_clip_ratio(0.6, 0.3, 0.3, 0.1, 0.2) == pytest.approx(1.1)
    assert gpocore.backtrack_mask(0.3, 0.3, 0.1) == 0.0
    assert gpocore.backtrack_mask(0.45, 0.3, 0.1) == 1.0
    assert gpocore.halting_conditions_hold(0.4, 0.3, 1.0, 0.1)
    assert gpocore.alpha_update(1.0, 0.001, 2.0, 0.003) == pytest.approx(2.0)


def test_tiny_training_run_and_eval():
    log = gpocore.train(
        algorithm="gpo_penalty",
        env="tigerdoor_alt",
        seed=1,
        n_envs=4,
        unroll_len=32,
        n_epochs=2,
        n_minibatches=2,
        total_timesteps=256,
        encoder=[8],
        action_decoder=[8],
        value_decoder=[8],
        eval_episodes=16,
    )
    assert len(log["iteration"]) == 2
    assert all(math.isfinite(x) for x in log["total_loss"])
    mean, std = gpocore.evaluate(log["net_spec"], log["final_params"], "tigerdoor_alt",
                                 episodes=32, seed=5)
    assert math.isfinite(mean) and std >= 0.0


def test_training_determinism():
    kwargs = dict(
        algorithm="gpo_clip",
        env="tigerdoor",
        seed=9,
        n_envs=4,
        unroll_len=16,
        n_epochs=2,
        n_minibatches=2,
        total_timesteps=128,
        encoder=[8],
        action_decoder=[8],
        value_decoder=[8],
        eval_episodes=8,
    )
    a = gpocore.train(**kwargs)
    b = gpocore.train(**kwargs)
    assert list(a["final_params"]) == list(b["final_params"])
    assert a["total_loss"] == b["total_loss"]


def test_dynamics_and_prop1():
    d = gpocore.tigerdoor_alt_dynamics(1000, 0.05)
    assert d["p_always_above_q"]
    assert d["strictly_increasing"]
    assert d["pi_left"][-1] > 0.99

    dev = gpocore.prop1_check_random(instances=3, seed=2)
    assert dev < 1e-6


def test_params_roundtrip(tmp_path):
    log = gpocore.train(
        algorithm="ppo",
        env="tigerdoor_alt",
        seed=2,
        n_envs=2,
        unroll_len=16,
        n_epochs=1,
        n_minibatches=1,
        total_timesteps=32,
        encoder=[8],
        action_decoder=[8],
        value_decoder=[8],
        eval_episodes=8,
    )
    path = str(tmp_path / "params.bin")
    gpocore.save_params(path, log["net_spec"], log["final_params"])
    spec, params = gpocore.load_params(path)
    assert spec == log["net_spec"]
    assert list(params) == list(log["final_params"])

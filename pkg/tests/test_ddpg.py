import numpy as np
import pytest

from rislab.channel import ScenarioConfig
from rislab.ddpg import (AgentConfig, Batch, DDPGAgent, ReplayBuffer,
                         Transition, critic_value, cumulative_average,
                         random_policy_reward, soft_update, train,
                         write_curve, write_trace)
from rislab.env import EnvConfig, RisEnv
from rislab.nn_core import MLP, ConfigError, finite_diff_check


def zero_weights(net):
    for arr in net.params().values():
        arr[...] = 0.0


def random_batch(rng, n, sd, ad):
    return Batch(rng.standard_normal((n, sd)), rng.uniform(-1, 1, (n, ad)),
                 rng.standard_normal(n), rng.standard_normal((n, sd)))


def tiny_env(steps=5):
    return RisEnv(EnvConfig(ScenarioConfig(N_t=2, M=2, K=1, seed=0),
                            steps_per_episode=steps))


# -- networks -----------------------------------------------------------------

def test_zero_weights_give_zero_outputs():
    agent = DDPGAgent(3, 2)
    zero_weights(agent.actor)
    zero_weights(agent.critic)
    s = np.ones(3)
    np.testing.assert_array_equal(agent.actor_forward(s), [0, 0])
    assert agent.critic_forward(s, np.ones(2)) == 0.0


def test_actor_bounded():
    agent = DDPGAgent(4, 3, seed=1)
    out = agent.actor_forward(np.random.default_rng(0).standard_normal((50, 4))
                              * 100)
    assert np.all(np.abs(out) <= 1.0)


def test_select_action_without_noise_is_actor_output():
    agent = DDPGAgent(4, 3, seed=1)
    s = np.random.default_rng(0).standard_normal(4)
    np.testing.assert_array_equal(agent.select_action(s, noise_std=0.0),
                                  agent.actor_forward(s))
    noisy = agent.select_action(s, noise_std=10.0)
    assert np.all(np.abs(noisy) <= 1.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        AgentConfig(tau=1.5)
    with pytest.raises(ConfigError):
        AgentConfig(gamma=-0.1)


# -- replay buffer ------------------------------------------------------------

def test_buffer_fifo_eviction():
    buf = ReplayBuffer(3, 1, 1)
    for i in range(5):
        buf.push(Transition(np.array([i]), np.array([0.0]), float(i),
                            np.array([i + 1])))
    assert len(buf) == 3
    assert [t.r for t in buf.transitions()] == [2.0, 3.0, 4.0]


def test_buffer_underfilled_returns_none():
    buf = ReplayBuffer(10, 1, 1)
    buf.push(Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1)))
    assert buf.sample(2, np.random.default_rng(0)) is None


def test_buffer_sampling_uniform():
    buf = ReplayBuffer(10, 1, 1)
    for i in range(10):
        buf.push(Transition(np.zeros(1), np.zeros(1), float(i), np.zeros(1)))
    idx = np.concatenate([buf.sample_indices(10, np.random.default_rng(s))
                          for s in range(10_000)])
    freq = np.bincount(idx, minlength=10) / idx.size
    # 1e5 draws: binomial std of a 0.1 frequency is about 1e-3
    np.testing.assert_allclose(freq, 0.1, atol=5e-3)


# -- updates ------------------------------------------------------------------

def test_td_target_gamma_zero_is_reward():
    agent = DDPGAgent(3, 2, AgentConfig(gamma=0.0))
    b = random_batch(np.random.default_rng(0), 8, 3, 2)
    np.testing.assert_array_equal(agent.td_targets(b), b.r)


def test_td_target_scalar_oracle():
    agent = DDPGAgent(1, 1, AgentConfig(hidden=(2,), gamma=0.5))
    for net in (agent.actor_target, agent.critic_target):
        zero_weights(net)
    agent.critic_target.layers[-1].b[...] = 2.0
    b = Batch(np.ones((1, 1)), np.zeros((1, 1)), np.array([1.0]),
              np.ones((1, 1)))
    assert agent.td_targets(b)[0] == pytest.approx(1.0 + 0.5 * 2.0)


def test_critic_gradient_finite_difference():
    rng = np.random.default_rng(3)
    agent = DDPGAgent(3, 2, AgentConfig(hidden=(5, 4)), seed=2)
    b = random_batch(rng, 6, 3, 2)
    y = agent.td_targets(b)

    def loss():
        q = critic_value(agent.critic, b.s, b.a)
        return float(np.mean((q - y) ** 2))

    q = critic_value(agent.critic, b.s, b.a)
    agent.critic.backward((2.0 / len(y)) * (q - y)[:, None])
    p, g = agent.critic.params(), agent.critic.grads()
    names = list(p)
    assert finite_diff_check(loss, [p[n] for n in names],
                             [g[n] for n in names]) < 1e-4


def test_actor_gradient_through_critic_finite_difference():
    rng = np.random.default_rng(4)
    agent = DDPGAgent(3, 2, AgentConfig(hidden=(5, 4)), seed=5)
    b = random_batch(rng, 6, 3, 2)

    def objective():
        return -float(np.mean(critic_value(agent.critic, b.s,
                                           agent.actor.forward(b.s))))

    agent.actor_gradients(b)
    p, g = agent.actor.params(), agent.actor.grads()
    names = list(p)
    assert finite_diff_check(objective, [p[n] for n in names],
                             [g[n] for n in names]) < 1e-4


def test_actor_update_leaves_critic_untouched():
    agent = DDPGAgent(3, 2, seed=0)
    before = {k: v.copy() for k, v in agent.critic.params().items()}
    agent.actor_update(random_batch(np.random.default_rng(0), 8, 3, 2))
    for k, v in agent.critic.params().items():
        assert v.tobytes() == before[k].tobytes()
    assert agent.critic_opt.step == 0


def test_soft_update_extremes():
    rng = np.random.default_rng(0)
    online, target = MLP([2, 3, 1], rng=rng), MLP([2, 3, 1], rng=rng)
    keep = {k: v.copy() for k, v in target.params().items()}
    soft_update(target, online, 0.0)
    for k, v in target.params().items():
        np.testing.assert_array_equal(v, keep[k])
    soft_update(target, online, 1.0)
    for k, v in target.params().items():
        np.testing.assert_array_equal(v, online.params()[k])


def test_soft_update_blend_and_contraction():
    rng = np.random.default_rng(1)
    online, target = MLP([2, 3, 1], rng=rng), MLP([2, 3, 1], rng=rng)
    t0 = {k: v.copy() for k, v in target.params().items()}
    soft_update(target, online, 0.005)
    for k, v in target.params().items():
        np.testing.assert_allclose(v, 0.995 * t0[k]
                                   + 0.005 * online.params()[k], atol=1e-15)

    def gap():
        return sum(np.sum((target.params()[k] - online.params()[k]) ** 2)
                   for k in t0)

    g = gap()
    for _ in range(10):
        soft_update(target, online, 0.005)
        assert gap() < g
        g = gap()


def test_learn_waits_for_full_batch():
    agent = DDPGAgent(2, 1, AgentConfig(batch=4))
    for _ in range(3):
        agent.buffer.push(Transition(np.zeros(2), np.zeros(1), 0.0,
                                     np.zeros(2)))
    assert agent.learn() is None
    agent.buffer.push(Transition(np.zeros(2), np.zeros(1), 0.0, np.zeros(2)))
    assert agent.learn() is not None


# -- training -----------------------------------------------------------------

def test_train_zero_episodes():
    env = tiny_env()
    res = train(env, AgentConfig(episodes=0, steps_per_episode=5))
    assert res.rewards == [] and res.critic_losses == []
    assert len(res.agent.buffer) == 0


def test_train_trace_lengths_and_files(tmp_path):
    env = tiny_env()
    cfg = AgentConfig(episodes=4, steps_per_episode=5, batch=8)
    res = train(env, cfg, seed=0)
    assert len(res.rewards) == 4 == len(res.critic_losses)
    assert np.isnan(res.critic_losses[0]) and np.isfinite(res.critic_losses[-1])
    assert len(res.agent.buffer) == 20
    write_trace(tmp_path / "t.csv", res)
    write_curve(tmp_path / "c.csv", res.rewards)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "episode,avg_cumulative_reward" and len(lines) == 5


def test_train_deterministic():
    cfg = AgentConfig(episodes=3, steps_per_episode=5, batch=4)
    a = train(tiny_env(), cfg, seed=3)
    b = train(tiny_env(), cfg, seed=3)
    assert a.rewards == b.rewards
    for k, v in a.agent.params().items():
        assert v.tobytes() == b.agent.params()[k].tobytes()


def test_cumulative_average():
    np.testing.assert_allclose(cumulative_average([1.0, 3.0, 2.0]),
                               [1.0, 2.0, 2.0])
    assert cumulative_average([]).size == 0


def test_random_policy_reward_positive_and_seeded():
    env = tiny_env()
    r1 = random_policy_reward(env, 3, seed=1)
    r2 = random_policy_reward(tiny_env(), 3, seed=1)
    assert r1 == r2 and r1 > 0

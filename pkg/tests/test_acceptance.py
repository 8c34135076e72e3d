"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``. The ordering check
(criterion 10) is informational; its training budget defaults to a reduced
size and can be raised with ``RISLAB_ORDERING_EPISODES``.
"""

import csv
import os
import time

import numpy as np
import pytest

from conftest import random_channel_set, random_precoder
from oracles import exhaustive_sweep, sinr_loops, sum_se_loops, to_lists
from rislab.baselines import beam_sweep, dft_codebook
from rislab.channel import (ScenarioConfig, generate_dataset, sinr_user,
                            sum_se)
from rislab.config import parse_config
from rislab.ddpg import (AgentConfig, Batch, DDPGAgent, critic_value,
                         random_policy_reward, train, write_curve)
from rislab.env import EnvConfig, RisEnv, action_dim, decode_action
from rislab.experiments import run_cell
from rislab.lwm import (MASK_TOKEN, ChannelEncoder, evaluate_masked_loss,
                        finetune, fit_input_scale, loss_and_grads, mask_batch,
                        mask_count, mask_patches, masked_loss, patchify,
                        unpatchify)
from rislab.nn_core import (Dense, LayerNorm, MultiHeadSelfAttention,
                            finite_diff_check)

TOY = ScenarioConfig(N_t=4, M=8, K=2, seed=0)


@pytest.fixture
def report(capsys):
    def emit(criterion, passed, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if passed else 'FAIL'} criterion {criterion}: "
                  f"{detail}")
        assert passed, detail
    return emit


def test_criterion_01_se_oracle(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        K, N_t, M = (int(rng.integers(1, 4)), int(rng.integers(1, 5)),
                     int(rng.integers(1, 5)))
        N_r = int(rng.integers(1, 3))
        ch = random_channel_set(rng, K, N_t, N_r, M)
        phases = rng.uniform(0, 2 * np.pi, M)
        F = random_precoder(rng, N_t, K, 1.0)
        noise = float(rng.uniform(0.01, 1.0))
        lists = to_lists(ch)
        Fl = F.tolist()
        for k in range(K):
            ref = sinr_loops(*lists, phases.tolist(), Fl, noise, k)
            got = sinr_user(ch, k, phases, F, noise)
            worst = max(worst, abs(got - ref) / abs(ref))
        ref = sum_se_loops(*lists, phases.tolist(), Fl, noise)
        worst = max(worst, abs(sum_se(ch, phases, F, noise) - ref) / abs(ref))
    dt = time.perf_counter() - t0
    report(1, worst < 1e-10 and dt < 5,
           f"max rel err {worst:.2e} (< 1e-10), {dt:.2f}s (< 5s)")


def test_criterion_02_constraints(report):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    power_err = modulus_err = 0.0
    for a in rng.uniform(-1, 1, (10_000, action_dim(TOY))):
        prec, phi = decode_action(a, TOY)
        power_err = max(power_err, abs(prec.power - TOY.p_max))
        modulus_err = max(modulus_err,
                          float(np.max(np.abs(np.abs(phi.theta) - 1))))
    dt = time.perf_counter() - t0
    report(2, power_err <= 1e-9 and modulus_err <= 1e-12 and dt < 5,
           f"power err {power_err:.2e} (<= 1e-9), modulus err "
           f"{modulus_err:.2e} (<= 1e-12), {dt:.2f}s (< 5s)")


def test_criterion_03_patchify_round_trip(report):
    rng = np.random.default_rng(303)
    exact = 0
    for _ in range(100):
        X, Y = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        n = 2 * X * Y
        P = int(rng.choice([p for p in range(2, n + 1, 2) if n % p == 0]))
        H = rng.standard_normal((X, Y)) + 1j * rng.standard_normal((X, Y))
        exact += unpatchify(patchify(H, P), X, Y).tobytes() == H.tobytes()
    example = patchify(np.array([[1 + 2j, 3 + 4j]]), 4)
    ok_example = example.tolist() == [[1.0], [3.0], [2.0], [4.0]]
    report(3, exact == 100 and ok_example,
           f"{exact}/100 bitwise round trips, worked example "
           f"{example.ravel().tolist()}")


def test_criterion_04_masking_statistics(report):
    rng = np.random.default_rng(404)
    tokens = np.zeros((33, 2))
    mt = np.ones(2)
    counts = np.zeros(3, dtype=np.int64)
    always_five = mask_count(32) == 5
    t0 = time.perf_counter()
    for _ in range(100_000):
        _, rec = mask_patches(tokens, rng, mt)
        always_five &= len(rec.indices) == 5
        counts += np.bincount(rec.modes, minlength=3)
    dt = time.perf_counter() - t0
    frac = counts / counts.sum()
    dev = float(np.max(np.abs(frac - [0.8, 0.1, 0.1])))
    report(4, bool(always_five) and dev <= 0.01 and dt < 10,
           f"5 masked every trial: {bool(always_five)}, proportions "
           f"{np.round(frac, 4).tolist()} (max dev {dev:.4f} <= 0.01), "
           f"{dt:.2f}s (< 10s)")


def _fd(f, params, grads):
    names = list(params)
    return finite_diff_check(f, [params[n] for n in names],
                             [grads[n] for n in names])


def test_criterion_05_gradient_suite(report):
    rng = np.random.default_rng(505)
    t0 = time.perf_counter()
    errs = {}

    layer = Dense(4, 3, "tanh", rng)
    x = rng.standard_normal((5, 4))
    up = rng.standard_normal((5, 3))
    f = lambda: float(np.sum(layer.forward(x) * up))  # noqa: E731
    f()
    gW, gb, gx = layer.backward(up)
    errs["dense"] = finite_diff_check(f, [layer.W, layer.b, x], [gW, gb, gx])

    ln = LayerNorm(6)
    ln.gain[...] = rng.standard_normal(6)
    x = rng.standard_normal((3, 6))
    up = rng.standard_normal((3, 6))
    f = lambda: float(np.sum(ln.forward(x) * up))  # noqa: E731
    f()
    gx = ln.backward(up)
    errs["layernorm"] = finite_diff_check(f, [x, ln.gain, ln.bias],
                                          [gx, ln.grad_gain, ln.grad_bias])

    attn = MultiHeadSelfAttention(4, 2, rng)
    X = rng.standard_normal((2, 3, 4))
    up = rng.standard_normal((2, 3, 4))
    f = lambda: float(np.sum(attn.forward(X) * up))  # noqa: E731
    f()
    dX = attn.backward(up)
    p, g = attn.params(), attn.grads()
    errs["attention"] = finite_diff_check(
        f, [X] + list(p.values()), [dX] + [g[n] for n in p])

    agent = DDPGAgent(3, 2, AgentConfig(hidden=(6, 5)), seed=1)
    s, a = rng.standard_normal((6, 3)), rng.uniform(-1, 1, (6, 2))
    y = rng.standard_normal(6)
    f = lambda: float(np.mean(  # noqa: E731
        (critic_value(agent.critic, s, a) - y) ** 2))
    q = critic_value(agent.critic, s, a)
    agent.critic.backward((2.0 / 6) * (q - y)[:, None])
    errs["critic"] = _fd(f, agent.critic.params(), agent.critic.grads())

    batch = Batch(s, a, y, s)
    f = lambda: -float(np.mean(critic_value(  # noqa: E731
        agent.critic, s, agent.actor.forward(s))))
    agent.actor_gradients(batch)
    errs["actor_through_critic"] = _fd(f, agent.actor.params(),
                                       agent.actor.grads())

    enc = ChannelEncoder(2, 3, P=6, dim=4, blocks=2, heads=2, ffn_dim=6,
                         seed=3)
    Hs = [rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
          for _ in range(2)]
    toks, recs = mask_batch(enc, Hs, np.random.default_rng(4))
    recs[0].modes[0] = MASK_TOKEN
    toks[0, recs[0].indices[0]] = enc.mask_token
    mt_pos = [(b, i) for b, r in enumerate(recs)
              for i, m in zip(r.indices, r.modes) if m == MASK_TOKEN]

    def f():
        t = toks.copy()
        t[:, 0] = enc.cls
        for b, i in mt_pos:
            t[b, i] = enc.mask_token
        return masked_loss(enc.forward(t), enc.W_dec, recs)[0]

    loss_and_grads(enc, toks.copy(), recs)
    errs["masked_loss"] = _fd(f, enc.params(), enc.grads())
    dt = time.perf_counter() - t0
    worst = max(errs.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    report(5, worst < 1e-4 and dt < 30,
           f"{detail} (all < 1e-4), {dt:.2f}s (< 30s)")


def test_criterion_06_beam_sweep_oracle(report):
    rng = np.random.default_rng(606)
    bs, ris = dft_codebook(4, 4, "bs_beam"), dft_codebook(4, 4, "ris_phase")
    agree = 0
    for i in range(50):
        ch = random_channel_set(rng, 1 + i % 3, 4, 1, 4)
        res = beam_sweep(ch, bs, ris, 1.0, 0.05)
        r, choice, _ = exhaustive_sweep(ch, bs.entries, ris.entries, 1.0, 0.05)
        agree += (res.ris_index, res.bs_indices) == (r, choice)
    ch = random_channel_set(rng, 1, 32, 1, 32)
    big = beam_sweep(ch, dft_codebook(32, 32, "bs_beam"),
                     dft_codebook(32, 32, "ris_phase"), 1.0, 0.05)
    report(6, agree == 50 and big.evaluations == 1024,
           f"{agree}/50 match the exhaustive loop, 32x32 books evaluate "
           f"{big.evaluations} pairs per user (1024)")


def test_criterion_07_power_monotonicity(report):
    base = ScenarioConfig(N_t=8, M=8, K=3, seed=7)
    sets = generate_dataset(base, 20, seed=7)
    bs = dft_codebook(8, 32, "bs_beam")
    ris = dft_codebook(8, 32, "ris_phase")
    powers = (30.0, 35.0, 40.0, 45.0)

    means = [float(np.mean([
        beam_sweep(ch, bs, ris, 10 ** (p / 10), base.noise_power).sum_se
        for ch in sets])) for p in powers]
    strict = all(b > a for a, b in zip(means, means[1:]))
    report(7, strict,
           f"mean SE at {powers} dBm {np.round(means, 3).tolist()} "
           f"strictly increasing")


def test_criterion_08_finetune_descent(report):
    t0 = time.perf_counter()
    data = [c.direct[0] for c in
            generate_dataset(ScenarioConfig(K=1, seed=0), 512, seed=0)]
    enc = ChannelEncoder(1, 32, P=32, dim=16, seed=0)
    fit_input_scale(enc, data)
    initial = evaluate_masked_loss(enc, data, seed=0)
    _, trace = finetune(data, enc, epochs=20, batch=64, lr=3e-3, seed=0)
    dt = time.perf_counter() - t0
    ratio = trace[-1] / initial
    report(8, ratio < 0.5 and dt < 120,
           f"final/initial masked loss {trace[-1]:.4f}/{initial:.4f} = "
           f"{ratio:.3f} (< 0.5), {dt:.1f}s (< 120s)")


@pytest.mark.slow
def test_criterion_09_ddpg_learning_signal(report, tmp_path):
    t0 = time.perf_counter()
    env = RisEnv(EnvConfig(TOY, steps_per_episode=50))
    baseline = random_policy_reward(RisEnv(EnvConfig(TOY, 50)), 200, seed=9)
    res = train(env, AgentConfig(episodes=2000, steps_per_episode=50), seed=0)
    dt = time.perf_counter() - t0
    final = float(np.mean(res.rewards[-200:]))
    ratio = final / baseline
    curve = tmp_path / "curve.csv"
    write_curve(curve, res.rewards)
    rows = list(csv.reader(curve.open()))
    form = rows[0] == ["episode", "avg_cumulative_reward"] \
        and len(rows) == 2001
    report(9, ratio >= 1.25 and form and not res.diverged and dt < 600,
           f"final 10% mean reward {final:.3f} vs random {baseline:.3f} "
           f"= {ratio:.2f}x (>= 1.25), curve rows {len(rows) - 1}, "
           f"{dt:.0f}s (< 600s)")


@pytest.mark.slow
def test_criterion_10_method_ordering(capsys):
    """Informational: prints the ordering, never fails."""
    episodes = int(os.environ.get("RISLAB_ORDERING_EPISODES", "20"))
    spec = parse_config(
        "N_t = 4\nM = 8\nK = 2\nn_samples = 300\n"
        "bs_codebook_size = 8\nris_codebook_size = 8\n"
        f"[agent]\nepisodes = {episodes}\nsteps_per_episode = 50\n")
    emb, raw, sweep = [], [], []
    for seed in range(10):
        emb.append(run_cell(spec, None, seed, "fmdrl"))
        raw.append(run_cell(spec, None, seed, "raw_drl"))
        sweep.append(run_cell(spec, None, seed, "beam_sweep"))
    wins = int(np.sum(np.array(emb) >= np.array(raw)))
    ok = wins >= 6 and min(np.mean(emb), np.mean(raw)) > np.mean(sweep)
    with capsys.disabled():
        print(f"\nINFO criterion 10 ({'met' if ok else 'not met'}, "
              f"non-gating, {episodes} episodes): embedded >= raw in "
              f"{wins}/10 seeds; mean SE embedded {np.mean(emb):.3f}, raw "
              f"{np.mean(raw):.3f}, 8x8 sweep {np.mean(sweep):.3f}")

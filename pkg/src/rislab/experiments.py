"""Experiment sweeps: train/evaluate each method per (sweep point, seed)."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

from .baselines import beam_sweep, dft_codebook
from .channel import ScenarioConfig, generate_dataset
from .config import ExperimentSpec
from .ddpg import (AgentConfig, DDPGAgent, evaluate_policy, train,
                   write_curve, write_trace)
from .env import EnvConfig, RisEnv
from .lwm import ChannelEmbedder, FinetuneConfig, sidecar
from .nn_core import assign_params, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

RESULT_HEADER = ["sweep_value", "seed", "method", "mean_sum_se"]


def split_indices(n: int, fractions=(0.70, 0.15)):
    """Index ranges for train / validation / test (70/15/15 by default)."""
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return range(0, a), range(a, b), range(b, n)


def cell_scenario(spec: ExperimentSpec, value, seed: int) -> ScenarioConfig:
    changes = {"seed": int(seed)}
    if spec.sweep == "power_dbm":
        changes["p_max_dbm"] = float(value)
    elif spec.sweep == "users":
        changes["K"] = int(value)
    return dataclasses.replace(spec.scenario, **changes)


def build_embedder(scenario: ScenarioConfig, spec: ExperimentSpec,
                   train_sets, seed: int) -> ChannelEmbedder:
    """From-scratch masked-modeling training, then a fine-tuning pass."""
    e = spec.embed
    embedder = ChannelEmbedder(scenario.N_t, scenario.N_r, scenario.M,
                               dim=e.embed_dim, blocks=e.embed_blocks,
                               heads=e.embed_heads, seed=seed)
    base = dict(batch=e.finetune_batch, weight_decay=e.finetune_weight_decay,
                seed=seed)
    if e.pretrain_epochs:
        embedder.finetune(train_sets, FinetuneConfig(
            epochs=e.pretrain_epochs, lr=e.pretrain_lr, **base))
    if e.finetune_epochs:
        embedder.finetune(train_sets, FinetuneConfig(
            epochs=e.finetune_epochs, lr=e.finetune_lr,
            last_layer_only=e.last_layer_only, fit_scale=not e.pretrain_epochs,
            **base))
    return embedder


def make_env(scenario, spec: ExperimentSpec, state_mode, embedder=None):
    cfg = EnvConfig(scenario, spec.agent.steps_per_episode, state_mode,
                    spec.penalty_weight)
    return RisEnv(cfg, embedder)


def sweep_mean_se(scenario: ScenarioConfig, channel_sets, bs_size: int,
                  ris_size: int) -> float:
    bs_book = dft_codebook(scenario.N_t, bs_size, "bs_beam")
    ris_book = dft_codebook(scenario.M, ris_size, "ris_phase")
    return float(np.mean([
        beam_sweep(ch, bs_book, ris_book, scenario.p_max,
                   scenario.noise_power).sum_se for ch in channel_sets]))


def run_cell(spec: ExperimentSpec, value, seed: int, method: str,
             out_dir: Optional[Path] = None) -> float:
    """Mean evaluated sum SE of one method in one (sweep point, seed)."""
    scenario = cell_scenario(spec, value, seed)
    data = generate_dataset(scenario, spec.n_samples, seed=seed)
    tr, _, te = split_indices(len(data))
    train_sets = [data[i] for i in tr]
    test_sets = [data[i] for i in te][:spec.eval_draws]
    if not test_sets:
        raise ValueError("evaluation split is empty; increase n_samples")
    if method == "beam_sweep":
        return sweep_mean_se(scenario, test_sets, spec.bs_codebook_size,
                             spec.ris_codebook_size)
    if method == "fmdrl":
        embedder = build_embedder(scenario, spec, train_sets, seed)
        env = make_env(scenario, spec, "embedded", embedder)
    else:
        env = make_env(scenario, spec, "raw")
    result = train(env, spec.agent, seed=seed)
    if out_dir is not None:
        stem = f"trace_{method}_{_tag(spec, value)}_seed{seed}"
        write_trace(out_dir / f"{stem}.csv", result)
        write_curve(out_dir / f"{stem}_curve.csv", result.rewards)
    return evaluate_policy(result.agent, env, test_sets)


def _tag(spec, value) -> str:
    if value is None:
        return "base"
    return f"{spec.sweep}{_fmt(value)}"


def _fmt(value) -> str:
    if value is None:
        return ""
    v = float(value)
    return str(int(v)) if v.is_integer() else repr(v)


def run_experiment(spec: ExperimentSpec) -> List[list]:
    """Run every (sweep point, seed, method) cell and write CSVs.

    ``<output>/results.csv`` receives one row per cell as soon as it is
    computed, so an interrupted run keeps its finished rows. Training
    methods also write a reward trace and its running-average curve.
    """
    spec.validate()
    out_dir = Path(spec.output)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "results.csv"
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write results under {out_dir}: {exc}") from exc
    rows = []
    with fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_HEADER)
        fh.flush()
        for value in spec.points():
            for seed in spec.seeds:
                for method in spec.methods:
                    se = run_cell(spec, value, seed, method, out_dir)
                    row = [_fmt(value), seed, method, repr(se)]
                    writer.writerow(row)
                    fh.flush()
                    rows.append(row)
                    log.info("%s", row)
    return rows


# -- agent checkpoints ------------------------------------------------------

def save_agent(path, agent: DDPGAgent, extra: Optional[dict] = None) -> None:
    save_checkpoint(path, agent.params())
    meta = {"state_dim": agent.state_dim, "action_dim": agent.action_dim,
            "agent": {k: (list(v) if isinstance(v, tuple) else v)
                      for k, v in dataclasses.asdict(agent.cfg).items()}}
    meta.update(extra or {})
    sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_agent(path):
    """Return ``(agent, metadata)`` from an RBL1 agent checkpoint."""
    meta = json.loads(sidecar(path).read_text())
    cfg = AgentConfig(**meta["agent"])
    agent = DDPGAgent(meta["state_dim"], meta["action_dim"], cfg)
    assign_params(agent.params(), load_checkpoint(path))
    return agent, meta

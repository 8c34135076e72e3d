"""``rislab`` command-line interface."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import beam_sweep, dft_codebook
from .channel import generate_dataset
from .config import ExperimentSpec, ParseError, load_config
from .ddpg import evaluate_policy, train, write_curve, write_trace
from .experiments import (build_embedder, make_env, run_experiment,
                          save_agent, load_agent)
from .io import read_channels, write_channels
from .lwm import ChannelEmbedder
from .nn_core import ConfigError, FormatError


def _spec(args) -> ExperimentSpec:
    spec = load_config(args.config) if args.config else ExperimentSpec()
    if args.seed is not None:
        spec.scenario = dataclasses.replace(spec.scenario, seed=args.seed)
        spec.seeds = [args.seed]
    return spec


def cmd_gen_data(args):
    spec = _spec(args)
    n = args.samples or spec.n_samples
    data = generate_dataset(spec.scenario, n, seed=spec.scenario.seed)
    write_channels(args.out, data)
    print(f"wrote {n} channel sets to {args.out}")


def _read(path, spec):
    if path:
        return read_channels(path)
    return generate_dataset(spec.scenario, spec.n_samples,
                            seed=spec.scenario.seed)


def cmd_finetune(args):
    spec = _spec(args)
    data = _read(args.data, spec)
    ch = data[0]
    spec.scenario = dataclasses.replace(spec.scenario, N_t=ch.N_t, N_r=ch.N_r,
                                        M=ch.M, K=ch.K)
    embedder = build_embedder(spec.scenario, spec, data, spec.scenario.seed)
    embedder.save(args.out)
    print(f"wrote embedder checkpoint {args.out}")


def cmd_train(args):
    spec = _spec(args)
    embedder = None
    if args.state == "embedded":
        if args.embedder:
            embedder = ChannelEmbedder.load(args.embedder)
        else:
            data = generate_dataset(spec.scenario, spec.n_samples,
                                    seed=spec.scenario.seed)
            embedder = build_embedder(spec.scenario, spec, data,
                                      spec.scenario.seed)
    env = make_env(spec.scenario, spec, args.state, embedder)
    result = train(env, spec.agent, seed=spec.scenario.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(out / "trace.csv", result)
    write_curve(out / "curve.csv", result.rewards)
    save_agent(out / "agent.rbl", result.agent,
               {"state_mode": args.state, "embedder": args.embedder,
                "scenario": dataclasses.asdict(env.scenario)})
    print(f"trained {len(result.rewards)} episodes; outputs in {out}")


def cmd_sweep(args):
    spec = _spec(args)
    if args.power_dbm:
        spec.sweep, spec.sweep_values = "power_dbm", args.power_dbm
    elif args.users:
        spec.sweep, spec.sweep_values = "users", [float(u) for u in args.users]
    if args.seeds:
        spec.seeds = args.seeds
    if args.methods:
        spec.methods = args.methods
    spec.output = args.out
    rows = run_experiment(spec)
    print(f"wrote {len(rows)} rows to {Path(args.out) / 'results.csv'}")


def cmd_beamsweep(args):
    spec = _spec(args)
    data = _read(args.data, spec)
    sc = spec.scenario
    bs = dft_codebook(data[0].N_t, args.bs_size or spec.bs_codebook_size)
    ris = dft_codebook(data[0].M, args.ris_size or spec.ris_codebook_size,
                       "ris_phase")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "ris_index", "bs_indices", "sum_se"])
        for i, ch in enumerate(data):
            res = beam_sweep(ch, bs, ris, sc.p_max, sc.noise_power)
            w.writerow([i, res.ris_index, ";".join(map(str, res.bs_indices)),
                        repr(res.sum_se)])
    print(f"swept {len(data)} channel sets into {args.out}")


def cmd_eval(args):
    spec = _spec(args)
    agent, meta = load_agent(args.agent)
    data = _read(args.data, spec)
    embedder = ChannelEmbedder.load(meta["embedder"]) \
        if meta.get("state_mode") == "embedded" else None
    scenario = dataclasses.replace(spec.scenario, **{
        k: meta["scenario"][k] for k in ("N_t", "N_r", "M", "K")}) \
        if "scenario" in meta else spec.scenario
    env = make_env(scenario, spec, meta.get("state_mode", "raw"), embedder)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "sum_se"])
        values = []
        for i, ch in enumerate(data):
            se = evaluate_policy(agent, env, [ch])
            values.append(se)
            w.writerow([i, repr(se)])
    print(f"mean sum SE {np.mean(values):.4f} over {len(values)} samples")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="scenario / training seed")
    common.add_argument("--out", required=True, help="output path")

    p = argparse.ArgumentParser(
        prog="rislab",
        description="RIS-assisted MU-MIMO beam management experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common],
                       help="write a synthetic RCH1 channel dataset")
    g.add_argument("--samples", type=int)
    g.set_defaults(func=cmd_gen_data)

    f = sub.add_parser("finetune", parents=[common],
                       help="train the channel embedder, write RBL1")
    f.add_argument("--data", help="RCH1 dataset (generated if omitted)")
    f.set_defaults(func=cmd_finetune)

    t = sub.add_parser("train", parents=[common], help="train a DDPG agent")
    t.add_argument("--state", choices=("embedded", "raw"), default="embedded")
    t.add_argument("--embedder", help="RBL1 embedder checkpoint")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", parents=[common],
                       help="power or user-count sweep over all methods")
    grp = s.add_mutually_exclusive_group()
    grp.add_argument("--power-dbm", type=float, nargs="+")
    grp.add_argument("--users", type=int, nargs="+")
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--methods", nargs="+",
                   choices=("fmdrl", "raw_drl", "beam_sweep"))
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("beamsweep", parents=[common],
                       help="exhaustive DFT codebook sweep per channel set")
    b.add_argument("--data", help="RCH1 dataset (generated if omitted)")
    b.add_argument("--bs-size", type=int)
    b.add_argument("--ris-size", type=int)
    b.set_defaults(func=cmd_beamsweep)

    e = sub.add_parser("eval", parents=[common],
                       help="evaluate a trained agent on channel sets")
    e.add_argument("--agent", required=True, help="RBL1 agent checkpoint")
    e.add_argument("--data", help="RCH1 dataset (generated if omitted)")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ParseError, ConfigError, FormatError, OSError) as exc:
        print(f"rislab: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

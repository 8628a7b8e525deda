"""Command-line entry point: ``hpfold train | evaluate | enumerate | export``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np

from .benchmarks import BENCHMARKS, benchmark_sequence
from .env import HPEnv, conformation_record, replay, validate_sequence
from .feasibility import (
    DEFAULT_ENUMERATION_LIMIT,
    enumerate_optimal,
    merge_certificates,
    top_level_branches,
)
from .qnet import NetworkConfig, load_network, read_blocks
from .trainer import TrainingConfig, run_episode, run_training

logger = logging.getLogger("hpfold")


class ConfigError(ValueError):
    pass


def _opt(parse):
    def inner(text: str):
        return None if text.lower() in ("none", "") else parse(text)
    return inner


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    # accept 80_000 and 8e4 style integers
    value = float(text.replace("_", ""))
    if value != int(value):
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


_NETWORK_KEYS = {
    "d_model": _int, "n_layers": _int, "n_heads": _int, "d_ff": _opt(_int), "d_type": _int,
}
_TRAINING_KEYS = {
    "episodes": _int, "learning_rate": float, "batch_size": _int, "gamma": float,
    "eps_start": float, "eps_end": float, "eps_decay_fraction": float,
    "target_sync": _int, "eval_interval": _int, "buffer_capacity": _int,
    "per_alpha": float, "per_beta_start": float, "per_beta_end": float, "per_eps": float,
    "beta_anneal_steps": _opt(_int), "normalize_weights": _bool, "seed": _int,
    "feasibility_mode": str, "dfs_budget": _opt(_int), "reward_mode": str,
    "grad_clip": _opt(float), "checkpoint_interval": _opt(_int), "target_energy": _opt(_int),
}
_RUN_KEYS = {"sequence": str, "benchmark": _int, "out_dir": str}
CONFIG_KEYS = {**_NETWORK_KEYS, **_TRAINING_KEYS, **_RUN_KEYS}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def build_training_config(values: dict, log_defaults: bool = True) -> TrainingConfig:
    net_defaults = NetworkConfig()
    net_kwargs = {}
    for key in _NETWORK_KEYS:
        if key in values:
            net_kwargs[key] = values[key]
        elif log_defaults:
            logger.info("config: %s not set, using default %r", key, getattr(net_defaults, key))
    kwargs = {}
    defaults = TrainingConfig.__dataclass_fields__
    for key in _TRAINING_KEYS:
        if key in values:
            kwargs[key] = values[key]
        elif log_defaults:
            logger.info("config: %s not set, using default %r", key, defaults[key].default)
    try:
        return TrainingConfig(network=NetworkConfig(**net_kwargs), **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_run_config(path) -> tuple[TrainingConfig, dict]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    values = parse_config_text(p.read_text(), str(p))
    run = {k: values[k] for k in _RUN_KEYS if k in values}
    return build_training_config(values), run


def _resolve_sequence(sequence: Optional[str], benchmark: Optional[int]) -> str:
    if sequence and benchmark is not None:
        raise ConfigError("give either a sequence or a benchmark id, not both")
    if benchmark is not None:
        return benchmark_sequence(benchmark)
    if sequence:
        return validate_sequence(sequence)
    raise ConfigError("no sequence given (use --sequence or --benchmark)")


def cmd_train(args) -> int:
    config, run = load_run_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if overrides:
        values = {**{f.name: getattr(config, f.name) for f in fields(config) if f.name != "network"},
                  **overrides}
        config = TrainingConfig(network=config.network, **values)
    if args.sequence or args.benchmark is not None:
        run.pop("sequence", None)
        run.pop("benchmark", None)
    sequence = _resolve_sequence(args.sequence or run.get("sequence"),
                                 args.benchmark if args.benchmark is not None else run.get("benchmark"))
    out_dir = Path(args.out_dir or run.get("out_dir") or "runs/latest")
    logger.info("training on %s (l=%d) for %d episodes -> %s",
                sequence, len(sequence), config.episodes, out_dir)
    record = run_training(sequence, config, out_dir=out_dir)
    summary = {
        "sequence": sequence,
        "episodes": len(record.episodes),
        "best_reward": record.best_reward,
        "best_energy": record.best_energy,
        "best_episode": record.best_episode,
        "train_steps": record.train_steps,
        "wall_clock": round(record.wall_clock, 2),
    }
    print(json.dumps(summary))
    return 0


def cmd_evaluate(args) -> int:
    header, _ = read_blocks(args.checkpoint)
    meta = header.get("metadata", {})
    trained_on = meta.get("sequence")
    if args.sequence or args.benchmark is not None:
        sequence = _resolve_sequence(args.sequence, args.benchmark)
    elif trained_on:
        sequence = trained_on
    else:
        raise ConfigError("checkpoint does not name its sequence; pass --sequence")
    if trained_on and len(trained_on) != len(sequence):
        raise ConfigError(
            f"checkpoint was trained on a length-{len(trained_on)} sequence, "
            f"cannot evaluate a length-{len(sequence)} one")
    net, _ = load_network(args.checkpoint)
    env = HPEnv(sequence)
    rng = np.random.default_rng(0)
    rewards = []
    last = None
    for i in range(args.episodes):
        res = run_episode(env, net, 0.0, rng, collect=False)
        rewards.append(res.reward)
        print(json.dumps({"episode": i, "reward": res.reward}))
        if res.record is not None:
            last = res.record
    if last is not None:
        if args.out_dir:
            out = Path(args.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / "evaluation.json").write_text(json.dumps(last, indent=1))
        else:
            print(json.dumps(last))
    return 0


def cmd_enumerate(args) -> int:
    sequence = _resolve_sequence(args.sequence, args.benchmark)
    limit = args.limit
    if len(sequence) > limit:
        raise ConfigError(f"sequence length {len(sequence)} exceeds the enumeration limit {limit}")
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        prefixes = top_level_branches(sequence, min(3, len(sequence) - 2))
        with ProcessPoolExecutor(args.jobs) as pool:
            certs = list(pool.map(_enumerate_branch,
                                  [(sequence, args.prune, limit, p) for p in prefixes]))
        cert = merge_certificates(certs)
    else:
        cert = enumerate_optimal(sequence, prune=args.prune, limit=limit)
    record = cert.to_record()
    print(json.dumps(record))
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "optimum.json").write_text(json.dumps(record, indent=1))
    return 0


def _enumerate_branch(job):
    sequence, prune, limit, prefix = job
    return enumerate_optimal(sequence, prune=prune, limit=limit, prefix=prefix)


def _xyz(record: dict) -> str:
    lines = [str(len(record["coords"])), f"{record['sequence']} energy={record['energy']}"]
    for ch, (x, y, z) in zip(record["sequence"], record["coords"]):
        lines.append(f"{ch} {x} {y} {z}")
    return "\n".join(lines) + "\n"


def cmd_export(args) -> int:
    if args.record:
        src = json.loads(Path(args.record).read_text())
        sequence, actions = src["sequence"], src["actions"]
    else:
        sequence = _resolve_sequence(args.sequence, args.benchmark)
        if not args.actions:
            raise ConfigError("export needs --record or --actions")
        actions = [int(a) for a in args.actions.replace(",", " ").split()]
    state, res = replay(sequence, actions)
    if not state.complete:
        raise ConfigError("action trace does not produce a complete fold")
    record = conformation_record(state)
    if args.record and "energy" in src and src["energy"] != record["energy"]:
        raise ConfigError(f"record energy {src['energy']} does not match replayed energy {record['energy']}")
    text = _xyz(record) if args.format == "xyz" else json.dumps(record, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpfold", description="3D HP lattice folding with a transformer DQN")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def seq_args(p):
        p.add_argument("--sequence", help="plain H/P string")
        p.add_argument("--benchmark", type=int, choices=sorted(BENCHMARKS), help="benchmark id 1-7")

    p = sub.add_parser("train", help="train an agent")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--episodes", type=int)
    seq_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="greedy (epsilon=0) episodes from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--out-dir")
    seq_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("enumerate", help="exact optimum by exhaustive search")
    seq_args(p)
    p.add_argument("--prune", action="store_true")
    p.add_argument("--limit", type=int, default=DEFAULT_ENUMERATION_LIMIT)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("export", help="replay a fold and write its record")
    p.add_argument("--record", help="conformation JSON (e.g. best.json)")
    p.add_argument("--actions", help="comma-separated action codes")
    p.add_argument("--format", choices=("json", "xyz"), default="json")
    p.add_argument("--out")
    seq_args(p)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        print(f"hpfold {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

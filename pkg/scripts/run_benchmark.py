"""Desk-scale benchmark run with the published per-sequence settings.

    python scripts/run_benchmark.py --benchmark 1 --seeds 0 1 2 --stop-at -10 --out-dir runs/bench1

Each seed trains until it reaches --stop-at or exhausts the published
episode count; a summary line per seed is appended to summary.jsonl.
"""
import argparse
import json
import logging
from pathlib import Path

from hpfold.benchmarks import BENCHMARKS, PUBLISHED_RUNS
from hpfold.qnet import NetworkConfig
from hpfold.trainer import TrainingConfig, run_training, verify_best

parser = argparse.ArgumentParser()
parser.add_argument("--benchmark", type=int, default=1)
parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
parser.add_argument("--stop-at", type=int, default=None, help="stop a seed once best energy <= this")
parser.add_argument("--episodes", type=int, default=None, help="override the published episode count")
parser.add_argument("--n-heads", type=int, default=4)
parser.add_argument("--out-dir", default="runs/benchmark")
args = parser.parse_args()

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
entry = BENCHMARKS[args.benchmark]
pub = PUBLISHED_RUNS[args.benchmark]
out = Path(args.out_dir)
out.mkdir(parents=True, exist_ok=True)

for seed in args.seeds:
    cfg = TrainingConfig(
        episodes=args.episodes or pub.episodes,
        learning_rate=pub.learning_rate,
        batch_size=pub.batch_size,
        network=NetworkConfig(d_model=pub.d_model, n_layers=pub.n_layers, n_heads=args.n_heads),
        seed=seed,
        target_energy=args.stop_at,
        checkpoint_interval=5000,
    )

    def progress(row, seed=seed):
        if row["episode"] % 500 == 0 or row["improved"]:
            logging.info("seed %d episode %d reward %.0f eps %.3f best %s",
                         seed, row["episode"], row["reward"], row["epsilon"], row["best_reward"])

    record = run_training(entry.sequence, cfg, out_dir=out / f"seed{seed}", callback=progress)
    summary = {
        "benchmark": args.benchmark,
        "seed": seed,
        "episodes_run": len(record.episodes),
        "best_energy": record.best_energy,
        "best_episode": record.best_episode,
        "published_best": pub.reached_best,
        "best_known": entry.best_known_energy,
        "replay_ok": verify_best(record),
        "wall_clock_s": round(record.wall_clock, 1),
    }
    print(json.dumps(summary), flush=True)
    with open(out / "summary.jsonl", "a") as fh:
        fh.write(json.dumps(summary) + "\n")

"""Epsilon-greedy double/dueling DQN training with prioritized replay."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .env import FEASIBILITY_MODES, HPEnv, conformation_record, replay
from .lattice import N_ACTIONS
from .qnet import (
    DuelingTransformerQNet,
    NetworkConfig,
    build_network,
    load_network_blocks,
    masked_argmax,
    network_blocks,
    read_blocks,
    weighted_td_loss,
    write_blocks,
)
from .replay import Batch, BetaSchedule, PrioritizedReplayBuffer, Transition

logger = logging.getLogger(__name__)

REWARD_MODES = ("terminal", "discounted")


@dataclass
class TrainingConfig:
    episodes: int = 1000
    learning_rate: float = 5e-4
    batch_size: int = 64
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    target_sync: int = 1000
    eval_interval: int = 100
    buffer_capacity: int = 100_000
    per_alpha: float = 0.6
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    per_eps: float = 1e-5
    beta_anneal_steps: Optional[int] = None
    normalize_weights: bool = True
    network: NetworkConfig = field(default_factory=NetworkConfig)
    seed: int = 0
    feasibility_mode: str = "full"
    dfs_budget: Optional[int] = 200_000
    reward_mode: str = "terminal"
    grad_clip: Optional[float] = None
    checkpoint_interval: Optional[int] = None
    target_energy: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.network, dict):
            self.network = NetworkConfig(**self.network)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("eps_start", "eps_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.eps_decay_fraction <= 1.0:
            raise ValueError("eps_decay_fraction must lie in (0, 1]")
        if self.episodes < 0:
            raise ValueError("episodes must be non-negative")
        for name in ("batch_size", "target_sync", "eval_interval", "buffer_capacity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.feasibility_mode not in FEASIBILITY_MODES:
            raise ValueError(f"feasibility_mode must be one of {FEASIBILITY_MODES}")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"reward_mode must be one of {REWARD_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


def epsilon_at(config: TrainingConfig, episode: int) -> float:
    """Exponential decay from eps_start to eps_end over the first fraction of episodes."""
    horizon = config.eps_decay_fraction * config.episodes
    if horizon <= 0 or episode >= horizon:
        return config.eps_end
    if config.eps_start <= 0 or config.eps_end <= 0:
        # geometric interpolation is undefined at zero; fall back to linear
        return config.eps_start + (config.eps_end - config.eps_start) * episode / horizon
    return config.eps_start * (config.eps_end / config.eps_start) ** (episode / horizon)


def select_action(q_values, mask, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform over allowed actions with probability epsilon, else the masked argmax.

    ``q_values`` may be a callable; it is only evaluated on a greedy draw.
    """
    allowed = np.flatnonzero(np.asarray(mask, dtype=bool))
    if allowed.size == 0:
        raise ValueError("no action is allowed")
    if rng.random() < epsilon:
        return int(rng.choice(allowed))
    q = q_values() if callable(q_values) else q_values
    return masked_argmax(q, mask)


def _tensor(x, dtype) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def compute_targets(batch: Batch, policy: DuelingTransformerQNet,
                    target: DuelingTransformerQNet, gamma: float) -> torch.Tensor:
    """Double-DQN targets: the policy net picks a', the target net scores it."""
    dtype = policy.cls_token.dtype
    rewards = _tensor(batch.rewards, dtype)
    dones = _tensor(batch.dones, dtype)
    with torch.no_grad():
        next_q = policy(batch.next_obs)
        masks = torch.as_tensor(np.asarray(batch.next_masks, dtype=bool))
        # terminal rows are multiplied by zero; open their mask to keep argmax defined
        masks = masks | (dones > 0.5).unsqueeze(-1)
        best = torch.where(masks, next_q, torch.full_like(next_q, -math.inf)).argmax(dim=1)
        eval_q = next_q if target is policy else target(batch.next_obs)
        chosen = eval_q.gather(1, best.unsqueeze(1)).squeeze(1)
    return rewards + (1.0 - dones) * gamma * chosen


def train_step(buffer: PrioritizedReplayBuffer, policy: DuelingTransformerQNet,
               target: DuelingTransformerQNet, optimizer: torch.optim.Optimizer,
               config: TrainingConfig, beta: float):
    """One Adam update on a prioritized batch; returns (loss, td_errors)."""
    batch, idx, weights = buffer.sample(config.batch_size, beta)
    dtype = policy.cls_token.dtype
    y = compute_targets(batch, policy, target, config.gamma)
    q = policy(batch.obs)
    actions = torch.as_tensor(batch.actions, dtype=torch.long).unsqueeze(1)
    q_taken = q.gather(1, actions).squeeze(1)
    loss, delta = weighted_td_loss(q_taken, y, _tensor(weights, dtype))
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()} (beta={beta})")
    optimizer.zero_grad(set_to_none=False)
    loss.backward()
    if config.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(policy.parameters(), config.grad_clip)
    optimizer.step()
    td = delta.detach().cpu().numpy().astype(np.float64)
    buffer.update_priorities(idx, np.abs(td))
    return float(loss.item()), td


def sync_target(policy: DuelingTransformerQNet, target: DuelingTransformerQNet,
                step: int, interval: int) -> bool:
    """Copy the policy weights into the target net when step is a multiple of interval."""
    if step % interval:
        return False
    with torch.no_grad():
        for t, p in zip(target.parameters(), policy.parameters()):
            t.copy_(p)
    return True


@dataclass
class EpisodeResult:
    reward: float
    transitions: list[Transition]
    record: Optional[dict]  # conformation record when the chain was completed
    invalid: bool


def greedy_q(policy: DuelingTransformerQNet, obs) -> np.ndarray:
    with torch.no_grad():
        return policy(obs)[0].cpu().numpy()


def run_episode(env: HPEnv, policy: DuelingTransformerQNet, epsilon: float,
                rng: np.random.Generator, collect: bool = True,
                reward_mode: str = "terminal", gamma: float = 0.99) -> EpisodeResult:
    """Play one episode; transitions carry reward 0 except the last one."""
    obs, mask = env.reset()
    transitions: list[Transition] = []
    while True:
        a = select_action(lambda: greedy_q(policy, obs), mask, epsilon, rng)
        res = env.step(a)
        next_mask = env.action_mask() if not res.done else np.zeros(N_ACTIONS, dtype=bool)
        if collect:
            transitions.append(Transition(obs, a, res.reward, res.observation, int(res.done), next_mask))
        obs, mask = res.observation, next_mask
        if res.done:
            break
    if collect and reward_mode == "discounted" and res.reward > 0:
        n = len(transitions)
        for k, t in enumerate(transitions):
            t.reward = res.reward * gamma ** (n - 1 - k)
    record = conformation_record(env.state) if env.state.complete else None
    return EpisodeResult(float(res.reward), transitions, record, bool(res.info.get("invalid")))


@dataclass
class RunRecord:
    sequence: str
    episodes: list[dict] = field(default_factory=list)
    evaluations: list[dict] = field(default_factory=list)
    best_reward: Optional[float] = None
    best_conformation: Optional[dict] = None
    best_episode: Optional[int] = None
    train_steps: int = 0
    wall_clock: float = 0.0
    error: Optional[str] = None

    @property
    def best_energy(self) -> Optional[int]:
        return None if self.best_reward is None else -int(round(self.best_reward))

    def to_dict(self) -> dict:
        return asdict(self)


class Trainer:
    """Owns the policy/target pair, optimizer, replay buffer and counters of one run."""

    def __init__(self, sequence: str, config: TrainingConfig):
        self.config = config
        self.env = HPEnv(sequence, feasibility_mode=config.feasibility_mode,
                         max_dfs_nodes=config.dfs_budget)
        self.sequence = self.env.sequence
        seeds = np.random.SeedSequence(config.seed).spawn(3)
        self.rng = np.random.default_rng(seeds[0])
        self.eval_rng = np.random.default_rng(seeds[1])
        self.policy = build_network(config.network, seed=config.seed)
        self.target = build_network(config.network, seed=config.seed)
        self.target.load_state_dict(self.policy.state_dict())
        self.target.requires_grad_(False)
        self.optimizer = torch.optim.Adam(self.policy.parameters(), lr=config.learning_rate,
                                          betas=(0.9, 0.999), eps=1e-8)
        self.buffer = PrioritizedReplayBuffer(
            config.buffer_capacity, alpha=config.per_alpha, eps=config.per_eps,
            normalize_weights=config.normalize_weights, rng=np.random.default_rng(seeds[2]))
        horizon = config.beta_anneal_steps
        if horizon is None:
            horizon = max(1, config.episodes * (len(self.sequence) - 2))
        self.beta_schedule = BetaSchedule(config.per_beta_start, config.per_beta_end, horizon)
        self.train_steps = 0
        self.episode = 0
        self.record = RunRecord(self.sequence)

    def _consider_best(self, result: EpisodeResult, episode: int) -> bool:
        if result.record is None:
            return False
        if self.record.best_reward is None or result.reward > self.record.best_reward:
            self.record.best_reward = result.reward
            self.record.best_conformation = result.record
            self.record.best_episode = episode
            return True
        return False

    def evaluate(self) -> EpisodeResult:
        return run_episode(self.env, self.policy, 0.0, self.eval_rng, collect=False)

    def train_episode(self) -> dict:
        cfg = self.config
        ep = self.episode
        eps = epsilon_at(cfg, ep)
        result = run_episode(self.env, self.policy, eps, self.rng, collect=True,
                             reward_mode=cfg.reward_mode, gamma=cfg.gamma)
        for t in result.transitions:
            self.buffer.push(t)
        losses = []
        if len(self.buffer) >= cfg.batch_size:
            for _ in range(len(result.transitions)):
                beta = self.beta_schedule(self.train_steps)
                loss, _ = train_step(self.buffer, self.policy, self.target, self.optimizer, cfg, beta)
                losses.append(loss)
                self.train_steps += 1
                sync_target(self.policy, self.target, self.train_steps, cfg.target_sync)
        improved = self._consider_best(result, ep)
        row = {
            "episode": ep,
            "reward": result.reward,
            "epsilon": eps,
            "mean_loss": float(np.mean(losses)) if losses else None,
        }
        if (ep + 1) % cfg.eval_interval == 0:
            ev = self.evaluate()
            improved |= self._consider_best(ev, ep)
            row["eval_reward"] = ev.reward
            self.record.evaluations.append({"episode": ep, "reward": ev.reward})
        row["best_reward"] = self.record.best_reward
        row["improved"] = improved
        self.record.episodes.append(row)
        self.record.train_steps = self.train_steps
        self.episode += 1
        return row

    # -- persistence ---------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        blocks = network_blocks(self.policy, "policy.")
        blocks.update(network_blocks(self.target, "target."))
        names = dict((id(p), n) for n, p in self.policy.named_parameters())
        adam_step = 0
        for group in self.optimizer.param_groups:
            for p in group["params"]:
                st = self.optimizer.state.get(p)
                if not st:
                    continue
                blocks["adam.exp_avg." + names[id(p)]] = st["exp_avg"].detach().numpy()
                blocks["adam.exp_avg_sq." + names[id(p)]] = st["exp_avg_sq"].detach().numpy()
                adam_step = int(st["step"])
        header = {
            "network": asdict(self.config.network),
            "metadata": {
                "kind": "trainer",
                "sequence": self.sequence,
                "episode": self.episode,
                "train_steps": self.train_steps,
                "adam_step": adam_step,
                "config": self.config.to_dict(),
            },
        }
        write_blocks(path, header, blocks)

    def load_checkpoint(self, path) -> None:
        header, blocks = read_blocks(path)
        meta = header.get("metadata", {})
        if meta.get("sequence") != self.sequence:
            raise ValueError("checkpoint was trained on a different sequence")
        load_network_blocks(self.policy, blocks, "policy.")
        load_network_blocks(self.target, blocks, "target.")
        self.episode = int(meta.get("episode", 0))
        self.train_steps = int(meta.get("train_steps", 0))
        adam_step = int(meta.get("adam_step", 0))
        for n, p in self.policy.named_parameters():
            key = "adam.exp_avg." + n
            if key in blocks:
                self.optimizer.state[p] = {
                    "step": torch.tensor(float(adam_step)),
                    "exp_avg": torch.from_numpy(blocks[key]).to(p.dtype),
                    "exp_avg_sq": torch.from_numpy(blocks["adam.exp_avg_sq." + n]).to(p.dtype),
                }


def _write_curve(path: Path, record: RunRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "kind", "reward", "best_reward"])
        for row in record.episodes:
            w.writerow([row["episode"], "train", row["reward"], row["best_reward"]])
            if "eval_reward" in row:
                w.writerow([row["episode"], "eval", row["eval_reward"], row["best_reward"]])


def run_training(sequence: str, config: TrainingConfig, out_dir=None,
                 callback: Optional[Callable[[dict], None]] = None) -> RunRecord:
    """Train for config.episodes episodes and return the run record.

    With ``out_dir`` the run writes log.jsonl, best.json, curve.csv,
    record.json and ckpt-<episode>.bin files there. Stops early once the
    best energy reaches ``config.target_energy``.
    """
    trainer = Trainer(sequence, config)
    record = trainer.record
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "log.jsonl", "w")
    start = time.perf_counter()
    try:
        while trainer.episode < config.episodes:
            row = trainer.train_episode()
            if log_fh is not None:
                log_fh.write(json.dumps({k: v for k, v in row.items() if k != "improved"}) + "\n")
                if row["improved"]:
                    (out / "best.json").write_text(json.dumps(record.best_conformation, indent=1))
                ci = config.checkpoint_interval
                if ci and trainer.episode % ci == 0:
                    trainer.save_checkpoint(out / f"ckpt-{trainer.episode:06d}.bin")
            if callback is not None:
                callback(row)
            if (config.target_energy is not None and record.best_energy is not None
                    and record.best_energy <= config.target_energy):
                logger.info("target energy %d reached at episode %d",
                            config.target_energy, row["episode"])
                break
    except Exception as exc:
        record.error = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        record.wall_clock = time.perf_counter() - start
        if out is not None:
            log_fh.close()
            trainer.save_checkpoint(out / f"ckpt-{trainer.episode:06d}.bin")
            _write_curve(out / "curve.csv", record)
            (out / "record.json").write_text(json.dumps(record.to_dict(), indent=1))
    return record


def verify_best(record: RunRecord) -> bool:
    """Replay the recorded best fold and check it reproduces the recorded reward."""
    if record.best_conformation is None:
        return record.best_reward is None
    state, res = replay(record.sequence, record.best_conformation["actions"])
    return state.complete and res.reward == record.best_reward

import json

import numpy as np
import pytest
import torch

from hpfold.env import HPEnv, replay
from hpfold.qnet import NetworkConfig, build_network, masked_argmax
from hpfold.replay import Batch, PrioritizedReplayBuffer, Transition
from hpfold.trainer import (
    Trainer,
    TrainingConfig,
    compute_targets,
    epsilon_at,
    run_episode,
    run_training,
    select_action,
    sync_target,
    train_step,
    verify_best,
)

NET = NetworkConfig(d_model=16, n_layers=1, n_heads=2, d_type=4)


def _cfg(**kw):
    base = dict(episodes=20, batch_size=8, network=NET, eval_interval=5, target_sync=50)
    base.update(kw)
    return TrainingConfig(**base)


def _random_batch(rng, n=6, length=6):
    env = HPEnv("HPHHPH")
    obs = []
    for _ in range(2 * n):
        o, _ = env.reset()
        obs.append(o + rng.normal(0, 0.5, o.shape).astype(np.float32))
    masks = rng.random((n, 5)) < 0.6
    masks[:, 0] = masks[:, 0] | ~masks.any(axis=1)
    return Batch(
        obs=np.stack(obs[:n]), actions=rng.integers(0, 5, n), rewards=rng.integers(0, 4, n).astype(np.float32),
        next_obs=np.stack(obs[n:]), dones=(rng.random(n) < 0.3).astype(np.float32), next_masks=masks,
    )


def test_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TrainingConfig(eps_end=1.5)
    with pytest.raises(ValueError):
        TrainingConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainingConfig(reward_mode="dense")
    assert TrainingConfig(network={"d_model": 32, "n_heads": 2}).network.d_model == 32


def test_epsilon_schedule():
    cfg = TrainingConfig(episodes=100)
    assert epsilon_at(cfg, 0) == 1.0
    assert epsilon_at(cfg, 50) == 0.05 and epsilon_at(cfg, 99) == 0.05
    assert epsilon_at(cfg, 25) == pytest.approx(0.05 ** 0.5)
    values = [epsilon_at(cfg, e) for e in range(100)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_select_action_greedy_and_single():
    rng = np.random.default_rng(0)
    q = [0.1, 3.0, 0.2, 5.0, 0.0]
    mask = [True, True, True, False, True]
    assert all(select_action(q, mask, 0.0, rng) == 1 for _ in range(50))
    only = [False, False, True, False, False]
    assert all(select_action(q, only, eps, rng) == 2 for eps in (0.0, 0.5, 1.0) for _ in range(20))
    with pytest.raises(ValueError):
        select_action(q, [False] * 5, 0.5, rng)


def test_select_action_uniform_when_epsilon_one():
    rng = np.random.default_rng(1)
    mask = [True, False, True, False, False]
    draws = np.array([select_action([9, 0, 0, 0, 0], mask, 1.0, rng) for _ in range(10_000)])
    assert set(np.unique(draws)) == {0, 2}
    assert abs((draws == 0).mean() - 0.5) <= 0.02


def test_select_action_skips_q_when_exploring():
    def boom():
        raise AssertionError("q evaluated on an exploratory draw")
    assert select_action(boom, [True] * 5, 1.0, np.random.default_rng(0)) in range(5)


def test_targets_terminal_equals_reward():
    rng = np.random.default_rng(2)
    b = _random_batch(rng)
    b.dones[:] = 1
    b.next_masks[:] = False
    p, t = build_network(NET, seed=1), build_network(NET, seed=2)
    y = compute_targets(b, p, t, 0.99)
    assert np.allclose(y.numpy(), b.rewards)


def test_targets_same_network_is_masked_max():
    rng = np.random.default_rng(3)
    b = _random_batch(rng)
    net = build_network(NET, seed=1)
    y = compute_targets(b, net, net, 0.9).numpy()
    with torch.no_grad():
        q = net(b.next_obs).numpy()
    for j in range(len(b)):
        mask = b.next_masks[j] if b.dones[j] == 0 else np.ones(5, bool)
        best = q[j][mask].max()
        expected = b.rewards[j] + (1 - b.dones[j]) * 0.9 * best
        assert y[j] == pytest.approx(expected, abs=1e-6)


def test_targets_match_scalar_reference():
    rng = np.random.default_rng(4)
    p, t = build_network(NET, seed=5), build_network(NET, seed=6)
    for _ in range(5):
        b = _random_batch(rng, n=10)
        y = compute_targets(b, p, t, 0.97).numpy()
        for j in range(len(b)):
            with torch.no_grad():
                qp = p(b.next_obs[j]).numpy()[0]
                qt = t(b.next_obs[j]).numpy()[0]
            if b.dones[j]:
                ref = float(b.rewards[j])
            else:
                a = masked_argmax(qp, b.next_masks[j])
                ref = float(b.rewards[j]) + 0.97 * float(qt[a])
            assert abs(y[j] - ref) <= 1e-6


class _Fixed(torch.nn.Module):
    """Stand-in network returning fixed Q rows."""

    def __init__(self, q):
        super().__init__()
        self.cls_token = torch.nn.Parameter(torch.zeros(1))
        self.q = torch.as_tensor(q, dtype=torch.float32)

    def forward(self, obs):
        return self.q.expand(len(obs), -1)


def test_targets_arithmetic_example():
    b = Batch(obs=np.zeros((1, 10)), actions=np.zeros(1, int), rewards=np.zeros(1, np.float32),
              next_obs=np.zeros((1, 10)), dones=np.zeros(1, np.float32), next_masks=np.ones((1, 5), bool))
    policy = _Fixed([[1, 2, 5, 4, 3]])  # argmax a' = 2
    target = _Fixed([[0, 0, 3, 9, 9]])
    assert compute_targets(b, policy, target, 0.9).item() == pytest.approx(2.7)
    # masking the policy's favourite moves the choice to a' = 3
    b.next_masks[0, 2] = False
    assert compute_targets(b, policy, target, 0.9).item() == pytest.approx(8.1)


def _single_transition_setup(delta, seed=0):
    net = build_network(NET, seed=seed)
    with torch.no_grad():
        net.value_head.bias.fill_(10.0)  # keep Q(s, a) positive so r = Q + delta is a legal reward
    target = build_network(NET, seed=seed)
    target.load_state_dict(net.state_dict())
    obs, _ = HPEnv("HPHHPH").reset()
    with torch.no_grad():
        q = float(net(obs)[0, 2])
    buf = PrioritizedReplayBuffer(4, rng=np.random.default_rng(0))
    buf.push(Transition(obs, 2, np.float32(q) + delta, obs, 1, np.zeros(5, bool)))
    cfg = _cfg(batch_size=1)
    opt = torch.optim.Adam(net.parameters(), lr=1e-4)
    return net, target, buf, cfg, opt


def test_train_step_zero_td_leaves_parameters_unchanged():
    net, target, buf, cfg, opt = _single_transition_setup(0.0)
    before = [p.detach().clone() for p in net.parameters()]
    loss, td = train_step(buf, net, target, opt, cfg, 0.4)
    assert loss == 0 and np.all(td == 0)
    assert all(torch.equal(a, b) for a, b in zip(before, net.parameters()))
    assert buf.priorities[0] == pytest.approx(buf.eps)


def test_train_step_loss_is_weighted_square():
    net, target, buf, cfg, opt = _single_transition_setup(2.0)
    loss, td = train_step(buf, net, target, opt, cfg, 0.4)
    assert loss == pytest.approx(4.0, rel=1e-5)
    assert td[0] == pytest.approx(2.0, rel=1e-5)
    assert buf.priorities[0] == pytest.approx(2.0 + buf.eps, rel=1e-5)


def test_train_step_loss_decreases_on_fixed_batch():
    net, target, buf, cfg, opt = _single_transition_setup(3.0, seed=1)
    losses = [train_step(buf, net, target, opt, cfg, 1.0)[0] for _ in range(200)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_train_step_rejects_small_buffer():
    net, target, buf, cfg, opt = _single_transition_setup(1.0)
    with pytest.raises(ValueError):
        train_step(buf, net, target, opt, _cfg(batch_size=2), 0.4)


def test_sync_target():
    p, t = build_network(NET, seed=1), build_network(NET, seed=2)
    assert not sync_target(p, t, 999, 1000)
    assert not all(torch.equal(a, b) for a, b in zip(p.parameters(), t.parameters()))
    assert sync_target(p, t, 1000, 1000)
    assert all(torch.equal(a, b) for a, b in zip(p.parameters(), t.parameters()))
    with torch.no_grad():
        next(p.parameters()).add_(1.0)
    assert not sync_target(p, t, 1001, 1000)
    assert not torch.equal(next(p.parameters()), next(t.parameters()))
    assert all(sync_target(p, t, s, 1) for s in range(1, 4))


def test_run_episode_greedy_deterministic():
    env = HPEnv("HPHHPPHH")
    net = build_network(NET, seed=3)
    rewards = {run_episode(env, net, 0.0, np.random.default_rng(k), collect=False).reward for k in range(4)}
    assert len(rewards) == 1


def test_run_episode_transitions_replay():
    env = HPEnv("HPHHPPHHPH")
    net = build_network(NET, seed=4)
    rng = np.random.default_rng(0)
    for _ in range(20):
        res = run_episode(env, net, 1.0, rng)
        ts = res.transitions
        assert all(t.reward == 0 and t.done == 0 for t in ts[:-1])
        assert ts[-1].done == 1 and ts[-1].reward == res.reward
        for a, b in zip(ts, ts[1:]):
            assert np.array_equal(a.next_obs, b.obs)
        state, step = replay(env.sequence, [t.action for t in ts])
        assert step.reward == res.reward


def test_random_policy_on_hhhh():
    env = HPEnv("HHHH")
    net = build_network(NET, seed=0)
    rng = np.random.default_rng(0)
    rewards = {run_episode(env, net, 1.0, rng).reward for _ in range(100)}
    assert rewards == {0.0, 1.0}


def test_discounted_reward_mode():
    env = HPEnv("HHHHHH")
    net = build_network(NET, seed=0)
    rng = np.random.default_rng(0)
    while True:
        res = run_episode(env, net, 1.0, rng, reward_mode="discounted", gamma=0.5)
        if res.reward > 0:
            break
    n = len(res.transitions)
    assert [t.reward for t in res.transitions] == [res.reward * 0.5 ** (n - 1 - k) for k in range(n)]


def test_zero_episodes_gives_empty_record():
    record = run_training("HPHH", _cfg(episodes=0))
    assert record.episodes == [] and record.best_conformation is None and record.best_reward is None
    assert verify_best(record)


def test_seeded_runs_identical():
    a = run_training("HPHHPPHH", _cfg(episodes=15, seed=3)).to_dict()
    b = run_training("HPHHPPHH", _cfg(episodes=15, seed=3)).to_dict()
    a.pop("wall_clock"), b.pop("wall_clock")
    assert a == b
    c = run_training("HPHHPPHH", _cfg(episodes=15, seed=4)).to_dict()
    c.pop("wall_clock")
    assert c != a


def test_best_reward_monotone_and_replayable():
    record = run_training("HPHHPPHHPH", _cfg(episodes=25, seed=1))
    bests = [row["best_reward"] for row in record.episodes if row["best_reward"] is not None]
    assert bests == sorted(bests)
    assert record.train_steps > 0
    assert verify_best(record)
    assert [e["episode"] for e in record.evaluations] == [4, 9, 14, 19, 24]


def test_run_training_writes_outputs(tmp_path):
    cfg = _cfg(episodes=12, checkpoint_interval=5)
    record = run_training("HPHHPPHH", cfg, out_dir=tmp_path)
    rows = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert len(rows) == 12
    assert set(rows[0]) >= {"episode", "reward", "epsilon", "mean_loss", "best_reward"}
    assert "eval_reward" in rows[4]
    assert json.loads((tmp_path / "best.json").read_text()) == record.best_conformation
    assert sorted(p.name for p in tmp_path.glob("ckpt-*.bin")) == [
        "ckpt-000005.bin", "ckpt-000010.bin", "ckpt-000012.bin"]
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "episode,kind,reward,best_reward" and len(lines) == 1 + 12 + 2


def test_target_energy_stops_early():
    record = run_training("HHHH", _cfg(episodes=500, target_energy=-1))
    assert record.best_energy == -1 and len(record.episodes) < 500


def test_checkpoint_round_trip(tmp_path):
    cfg = _cfg(episodes=10, seed=2)
    tr = Trainer("HPHHPPHH", cfg)
    for _ in range(6):
        tr.train_episode()
    path = tmp_path / "t.bin"
    tr.save_checkpoint(path)
    other = Trainer("HPHHPPHH", _cfg(episodes=10, seed=9))
    other.load_checkpoint(path)
    assert other.episode == 6 and other.train_steps == tr.train_steps
    for a, b in zip(tr.policy.parameters(), other.policy.parameters()):
        assert torch.equal(a, b)
    for a, b in zip(tr.target.parameters(), other.target.parameters()):
        assert torch.equal(a, b)
    for p, q in zip(tr.policy.parameters(), other.policy.parameters()):
        sa, sb = tr.optimizer.state[p], other.optimizer.state[q]
        assert torch.equal(sa["exp_avg"], sb["exp_avg"]) and torch.equal(sa["exp_avg_sq"], sb["exp_avg_sq"])
        assert int(sa["step"]) == int(sb["step"])
    with pytest.raises(ValueError):
        Trainer("HPHHPPHP", cfg).load_checkpoint(path)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hpfold.env import EnvState, HPEnv, action_mask, advance, observe, replay, validate_sequence
from hpfold.lattice import (
    INITIAL_FRAME,
    Action,
    Frame,
    apply_frame,
    contact_energy,
    cross,
    relative_actions,
)

from oracles import brute_contacts, oracle_mask, reachable_states

F, L, R, U, D = (int(a) for a in Action)


def test_reset_places_first_two_residues():
    env = HPEnv("HPPH")
    obs, _ = env.reset()
    rows = obs.reshape(4, 5)
    assert rows[0, :3].tolist() == [0, 0, 0]
    assert rows[1, :3].tolist() == [1, 0, 0]
    # unplaced residues carry the sentinel coordinate l
    assert rows[2, :3].tolist() == [4, 4, 4]
    assert rows[3, :3].tolist() == [4, 4, 4]
    assert rows[:, 3].tolist() == [1, 0, 0, 1]
    assert rows[:, 4] == pytest.approx([0, 1 / 3, 2 / 3, 1])
    st_ = env.state
    assert st_.frame == Frame((1, 0, 0), (0, 0, 1))
    assert not st_.deviated and not st_.deviated_vertically and not st_.done


def test_reset_mask_allows_forward_and_right_only():
    _, mask = HPEnv("HHHH").reset()
    assert mask.tolist() == [True, False, True, False, False]


@pytest.mark.parametrize("seq", ["HH", "H", "", "HPX"])
def test_bad_sequences_rejected(seq):
    with pytest.raises(ValueError):
        HPEnv(seq)


def test_apply_frame_examples():
    assert apply_frame(INITIAL_FRAME, F) == ((1, 0, 0), INITIAL_FRAME)
    # right = forward x up = (1,0,0) x (0,0,1)
    assert cross((1, 0, 0), (0, 0, 1)) == (0, -1, 0)
    assert apply_frame(INITIAL_FRAME, R) == ((0, -1, 0), Frame((0, -1, 0), (0, 0, 1)))
    assert apply_frame(INITIAL_FRAME, L) == ((0, 1, 0), Frame((0, 1, 0), (0, 0, 1)))
    assert apply_frame(INITIAL_FRAME, U) == ((0, 0, 1), Frame((0, 0, 1), (-1, 0, 0)))
    assert apply_frame(INITIAL_FRAME, D) == ((0, 0, -1), Frame((0, 0, -1), (1, 0, 0)))


@given(st.lists(st.integers(0, 4), max_size=30))
def test_frames_stay_orthonormal(actions):
    frame = INITIAL_FRAME
    for a in actions:
        d, frame = apply_frame(frame, a)
        assert sum(abs(v) for v in d) == 1
        assert sum(x * y for x, y in zip(frame.forward, frame.up)) == 0
        assert sum(abs(v) for v in frame.right) == 1


def test_hhhh_square_fold():
    env = HPEnv("HHHH")
    env.reset()
    assert not env.step(R).done
    res = env.step(R)
    assert env.state.placed == [(0, 0, 0), (1, 0, 0), (1, -1, 0), (0, -1, 0)]
    assert res.done and res.reward == 1 and res.info["energy"] == -1
    assert not res.info["invalid"]


def test_overlap_terminates_with_zero_reward():
    env = HPEnv("HHHHH")
    env.reset()
    env.step(R)
    env.step(R)
    res = env.step(R)  # would land on (0,0,0)
    assert res.done and res.reward == 0 and res.info["invalid"]
    assert len(env.state.placed) == 4


@pytest.mark.parametrize("action", [L, U, D])
def test_first_deviation_must_be_right(action):
    env = HPEnv("HPHPHP")
    env.reset()
    res = env.step(action)
    assert res.done and res.reward == 0 and res.info["invalid"]


def test_step_after_done_raises():
    env = HPEnv("HHH")
    env.reset()
    env.step(R)
    with pytest.raises(RuntimeError):
        env.step(F)


def test_mask_after_first_right():
    env = HPEnv("HPHPHPHP")
    env.reset()
    env.step(R)
    mask = env.action_mask()
    assert mask[[F, L, R, U]].all()
    assert not mask[D]


def test_down_unlocks_after_up():
    env = HPEnv("HPHPHPHPHP")
    env.reset()
    env.step(R)
    env.step(U)
    assert env.action_mask()[D]


def test_bound_uses_half_length_real_comparison():
    # l=13: |c| <= 6.5 permits 6 and forbids 7
    s = EnvState("H" * 13)
    for _ in range(5):
        s = advance(s, F)
    assert s.placed[-1] == (6, 0, 0)
    with pytest.raises(ValueError):
        advance(s, F)
    assert not action_mask(s, "off")[F]


def test_contact_energy_examples():
    assert contact_energy([(0, 0, 0), (1, 0, 0)], "HH") == 0
    assert contact_energy([(0, 0, 0), (1, 0, 0), (1, -1, 0), (0, -1, 0)], "HHHH") == -1


def test_last_move_reward_paid_when_valid():
    env = HPEnv("HHH")
    env.reset()
    res = env.step(R)
    assert res.done and not res.info["invalid"] and res.reward == 0


def _random_rollout(env, rng):
    obs, mask = env.reset()
    while True:
        a = int(rng.choice(np.flatnonzero(mask)))
        res = env.step(a)
        if res.done:
            return res
        mask = env.action_mask()


@pytest.mark.parametrize("seq", ["HPHPPHHPHH", "HHPPHPPHPPHPPH", "PHHPHHPPHHHPHH"])
def test_masked_rollouts_respect_rules(seq):
    rng = np.random.default_rng(0)
    env = HPEnv(seq)
    for _ in range(200):
        res = _random_rollout(env, rng)
        placed = env.state.placed
        assert len(set(placed)) == len(placed)
        assert all(2 * abs(v) <= len(seq) for c in placed for v in c)
        assert not res.info["invalid"], "full masking must never lead into an invalid step"
        assert env.state.complete
        assert res.reward == brute_contacts(placed, seq)


def test_observation_tracks_placed():
    env = HPEnv("HPHPH")
    env.reset()
    env.step(R)
    env.step(U)
    rows = env.observation().reshape(5, 5)
    assert rows[:4, :3].tolist() == [list(c) for c in env.state.placed]
    assert rows[4, :3].tolist() == [5, 5, 5]
    assert np.all(np.diff(rows[:, 4]) > 0)


def test_determinism():
    a, b = HPEnv("HPHHPPH"), HPEnv("HPHHPPH")
    a.reset(), b.reset()
    for act in (R, F, U):
        ra, rb = a.step(act), b.step(act)
        assert np.array_equal(ra.observation, rb.observation)
        assert (ra.reward, ra.done, ra.info) == (rb.reward, rb.done, rb.info)


@pytest.mark.parametrize("length", [4, 5, 6])
def test_full_mask_matches_oracle_small(length):
    seq = ("HP" * length)[:length]
    for s in reachable_states(seq):
        assert np.array_equal(action_mask(s, "full"), oracle_mask(s)), s.placed


def test_mask_modes_are_nested():
    seq = "H" * 12
    states = [s for s in reachable_states(seq[:8]) if len(s.placed) == 7]
    for s in states[:300]:
        s = EnvState(seq, s.placed, s.frame, s.deviated, s.deviated_vertically)
        full, local, off = (action_mask(s, m) for m in ("full", "local", "off"))
        assert np.all(full <= local) and np.all(local <= off)


def test_local_mode_rejects_one_step_trap():
    # Up from (4,4,3) lands in the box corner (4,4,4), whose other neighbours are taken or out of bounds
    path = [(4, 3, 4), (3, 3, 4), (3, 4, 4), (3, 4, 3), (4, 4, 3)]
    s = EnvState("H" * 8, path, Frame((1, 0, 0), (0, 0, 1)), True, True)
    off, local, full = (action_mask(s, m) for m in ("off", "local", "full"))
    assert off[U] and not local[U] and not full[U]
    assert np.array_equal(local, full)
    trapped = advance(s, U)
    assert trapped.placed[-1] == (4, 4, 4)
    assert not action_mask(trapped, "off").any()


def test_off_mode_trap_ends_episode():
    path = [(4, 3, 4), (3, 3, 4), (3, 4, 4), (3, 4, 3), (4, 4, 3)]
    env = HPEnv("H" * 8, feasibility_mode="off")
    env.reset()
    env.set_state(EnvState("H" * 8, path, Frame((1, 0, 0), (0, 0, 1)), True, True))
    res = env.step(U)
    assert res.done and res.reward == 0 and res.info.get("trapped")


@given(st.lists(st.integers(0, 4), min_size=1, max_size=12), st.text("HP", min_size=14, max_size=14))
@settings(max_examples=200, deadline=None)
def test_replay_energy_matches_brute_force(actions, seq):
    env = HPEnv(seq, feasibility_mode="off")
    env.reset()
    for a in actions:
        res = env.step(a)
        if res.done:
            break
    placed = env.state.placed
    assert contact_energy(placed, seq) == -brute_contacts(placed, seq)
    if len(placed) >= 3:
        assert relative_actions(placed) == env.state.actions[: len(placed) - 2]


def test_replay_helper_and_validate():
    state, res = replay("HHHH", [R, R])
    assert state.complete and res.reward == 1
    assert validate_sequence(" hphp ") == "HPHP"
    assert observe(state).shape == (20,)

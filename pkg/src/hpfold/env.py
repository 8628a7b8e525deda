"""3D cubic-lattice HP folding environment.

Residues 0 and 1 are fixed at (0,0,0) and (1,0,0); each step places the
next residue with one of five frame-relative moves. An illegal move ends
the episode with reward 0, and completing the chain pays the number of
H-H contacts.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import feasibility
from .feasibility import SearchResult
from .lattice import (
    ACTIONS,
    INITIAL_FRAME,
    N_ACTIONS,
    Coord,
    Frame,
    add,
    apply_frame,
    contact_count,
    in_bounds,
    symmetry_allows,
    update_flags,
)

logger = logging.getLogger(__name__)

FEASIBILITY_MODES = ("full", "local", "off")
OBS_FEATURES = 5


def validate_sequence(sequence: str) -> str:
    if not isinstance(sequence, str):
        raise TypeError(f"sequence must be a string, got {type(sequence).__name__}")
    seq = sequence.strip().upper()
    bad = sorted(set(seq) - {"H", "P"})
    if bad:
        raise ValueError(f"sequence may only contain H and P, found {bad}")
    if len(seq) < 3:
        raise ValueError(
            f"sequence must have at least 3 residues (got {len(seq)}): "
            "two are pre-placed and at least one move is required"
        )
    return seq


@dataclass
class EnvState:
    sequence: str
    placed: list[Coord] = field(default_factory=lambda: [(0, 0, 0), (1, 0, 0)])
    frame: Frame = INITIAL_FRAME
    deviated: bool = False
    deviated_vertically: bool = False
    done: bool = False
    actions: list[int] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.sequence)

    @property
    def complete(self) -> bool:
        return len(self.placed) == len(self.sequence)

    def copy(self) -> "EnvState":
        return EnvState(self.sequence, list(self.placed), self.frame, self.deviated,
                        self.deviated_vertically, self.done, list(self.actions))


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


def _target(state: EnvState, action: int) -> Optional[tuple[Coord, Frame]]:
    """Target cell and frame for a move that passes overlap, bound and symmetry rules."""
    if not symmetry_allows(action, state.deviated, state.deviated_vertically):
        return None
    d, nf = apply_frame(state.frame, action)
    nxt = add(state.placed[-1], d)
    if not in_bounds(nxt, state.length) or nxt in state.placed:
        return None
    return nxt, nf


def advance(state: EnvState, action: int) -> EnvState:
    """New state after a legal move. Raises ValueError on an illegal one."""
    tgt = _target(state, action)
    if tgt is None:
        raise ValueError(f"action {action} is illegal in this state")
    nxt, nf = tgt
    dev, vdev = update_flags(action, state.deviated, state.deviated_vertically)
    return EnvState(state.sequence, state.placed + [nxt], nf, dev, vdev,
                    False, state.actions + [int(action)])


def has_legal_move(state: EnvState) -> bool:
    return any(_target(state, a) is not None for a in ACTIONS)


def action_mask(state: EnvState, mode: str = "full",
                max_nodes: Optional[int] = None) -> np.ndarray:
    """Five booleans, True where the action is permitted.

    ``local`` adds the one-step trap check, ``full`` adds the DFS
    completability check. A DFS that runs out of budget leaves the action
    permitted.
    """
    if mode not in FEASIBILITY_MODES:
        raise ValueError(f"feasibility mode must be one of {FEASIBILITY_MODES}, got {mode!r}")
    mask = np.zeros(N_ACTIONS, dtype=bool)
    if state.done or state.complete:
        return mask
    last = len(state.placed) + 1 == state.length
    for a in ACTIONS:
        if _target(state, a) is None:
            continue
        if mode != "off" and not last:
            nxt = advance(state, a)
            if not has_legal_move(nxt):
                continue
            if mode == "full" and feasibility.can_complete(nxt, max_nodes) is SearchResult.NOT_COMPLETABLE:
                continue
        mask[a] = True
    return mask


def observe(state: EnvState) -> np.ndarray:
    """Flat (l*5,) float32 vector of x, y, z, type, normalized index per residue.

    Unplaced residues carry the sentinel coordinate l, outside the legal box.
    """
    length = state.length
    obs = np.empty((length, OBS_FEATURES), dtype=np.float32)
    obs[:, 0:3] = length
    k = len(state.placed)
    obs[:k, 0:3] = np.asarray(state.placed, dtype=np.float32)
    obs[:, 3] = [1.0 if ch == "H" else 0.0 for ch in state.sequence]
    obs[:, 4] = np.arange(length, dtype=np.float32) / (length - 1)
    return obs.reshape(-1)


class HPEnv:
    """Stateful wrapper holding one EnvState; mirrors a gym-style reset/step loop."""

    def __init__(self, sequence: str, feasibility_mode: str = "full",
                 max_dfs_nodes: Optional[int] = None):
        if feasibility_mode not in FEASIBILITY_MODES:
            raise ValueError(f"feasibility mode must be one of {FEASIBILITY_MODES}")
        self.sequence = validate_sequence(sequence)
        self.feasibility_mode = feasibility_mode
        self.max_dfs_nodes = max_dfs_nodes
        self.state = EnvState(self.sequence)
        self._mask: Optional[np.ndarray] = None

    @property
    def length(self) -> int:
        return len(self.sequence)

    def reset(self) -> tuple[np.ndarray, np.ndarray]:
        self.state = EnvState(self.sequence)
        self._mask = None
        return self.observation(), self.action_mask()

    def set_state(self, state: EnvState) -> None:
        if state.sequence != self.sequence:
            raise ValueError("state belongs to a different sequence")
        self.state = state.copy()
        self._mask = None

    def observation(self) -> np.ndarray:
        return observe(self.state)

    def action_mask(self) -> np.ndarray:
        if self._mask is None:
            self._mask = action_mask(self.state, self.feasibility_mode, self.max_dfs_nodes)
        return self._mask.copy()

    def step(self, action: int) -> StepResult:
        if self.state.done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        action = int(action)
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action must be in 0..{N_ACTIONS - 1}, got {action}")
        mask = self.action_mask()
        if not mask[action]:
            self.state.done = True
            self._mask = None
            return StepResult(self.observation(), 0.0, True,
                              {"energy": 0, "invalid": True, "trapped": False})

        self.state = advance(self.state, action)
        self._mask = None
        if self.state.complete:
            self.state.done = True
            contacts = contact_count(self.state.placed, self.sequence)
            return StepResult(self.observation(), float(contacts), True,
                              {"energy": -contacts, "invalid": False, "trapped": False})
        if not has_legal_move(self.state):
            # only reachable with feasibility_mode="off"
            self.state.done = True
            return StepResult(self.observation(), 0.0, True,
                              {"energy": 0, "invalid": False, "trapped": True})
        return StepResult(self.observation(), 0.0, False,
                          {"energy": 0, "invalid": False, "trapped": False})


def replay(sequence: str, actions, feasibility_mode: str = "off") -> tuple[EnvState, StepResult]:
    """Play an action trace from reset; returns the final state and last step result."""
    env = HPEnv(sequence, feasibility_mode=feasibility_mode)
    env.reset()
    result = None
    for a in actions:
        result = env.step(a)
        if result.done:
            break
    if result is None:
        raise ValueError("empty action trace")
    return env.state, result


def conformation_record(state: EnvState) -> dict:
    """Self-contained export record for a finished fold."""
    return {
        "sequence": state.sequence,
        "actions": list(state.actions),
        "coords": [list(c) for c in state.placed],
        "energy": -contact_count(state.placed, state.sequence),
    }

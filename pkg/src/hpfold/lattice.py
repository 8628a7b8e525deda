"""Cubic-lattice geometry shared by the environment and the exact search code.

Moves are relative to an orientation frame (forward, up); right is
forward x up. Coordinates are integer 3-tuples.
"""
from __future__ import annotations

from enum import IntEnum
from typing import NamedTuple, Sequence as Seq

Coord = tuple[int, int, int]


class Action(IntEnum):
    FORWARD = 0
    LEFT = 1
    RIGHT = 2
    UP = 3
    DOWN = 4


ACTIONS = tuple(Action)
N_ACTIONS = len(ACTIONS)


class Frame(NamedTuple):
    forward: Coord
    up: Coord

    @property
    def right(self) -> Coord:
        return cross(self.forward, self.up)


INITIAL_FRAME = Frame(forward=(1, 0, 0), up=(0, 0, 1))
UNIT_STEPS: tuple[Coord, ...] = (
    (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
)


def cross(a: Coord, b: Coord) -> Coord:
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def neg(a: Coord) -> Coord:
    return (-a[0], -a[1], -a[2])


def add(a: Coord, b: Coord) -> Coord:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _apply_frame(frame: Frame, action: Action) -> tuple[Coord, Frame]:
    f, u = frame
    if action == Action.FORWARD:
        return f, frame
    if action == Action.RIGHT:
        r = cross(f, u)
        return r, Frame(r, u)
    if action == Action.LEFT:
        left = neg(cross(f, u))
        return left, Frame(left, u)
    if action == Action.UP:
        return u, Frame(u, neg(f))
    if action == Action.DOWN:
        return neg(u), Frame(neg(u), f)
    raise ValueError(f"unknown action {action!r}")


def _all_frames() -> list[Frame]:
    frames = []
    for f in UNIT_STEPS:
        for u in UNIT_STEPS:
            if sum(x * y for x, y in zip(f, u)) == 0:
                frames.append(Frame(f, u))
    return frames


# 24 frames x 5 actions; the DFS hits this table millions of times
_FRAME_TABLE: dict[tuple[Frame, int], tuple[Coord, Frame]] = {
    (fr, int(a)): _apply_frame(fr, a) for fr in _all_frames() for a in ACTIONS
}


def apply_frame(frame: Frame, action: int) -> tuple[Coord, Frame]:
    """Absolute step direction and updated frame for a relative action."""
    try:
        return _FRAME_TABLE[(frame, int(action))]
    except KeyError:
        raise ValueError(f"invalid frame {frame!r} or action {action!r}") from None


def symmetry_allows(action: int, deviated: bool, deviated_vertically: bool) -> bool:
    """Symmetry-breaking rule: the first turn must be Right, the first vertical move Up."""
    if not deviated:
        return action == Action.FORWARD or action == Action.RIGHT
    if not deviated_vertically:
        return action != Action.DOWN
    return True


def update_flags(action: int, deviated: bool, deviated_vertically: bool) -> tuple[bool, bool]:
    return (
        deviated or action != Action.FORWARD,
        deviated_vertically or action == Action.UP or action == Action.DOWN,
    )


def in_bounds(c: Coord, length: int) -> bool:
    # |c| <= l/2 per axis, compared in integers as 2|c| <= l
    return 2 * abs(c[0]) <= length and 2 * abs(c[1]) <= length and 2 * abs(c[2]) <= length


def contact_count(placed: Seq[Coord], sequence: str) -> int:
    """Number of non-sequential H-H pairs at unit lattice distance."""
    index = {c: i for i, c in enumerate(placed)}
    count = 0
    for i, c in enumerate(placed):
        if sequence[i] != "H":
            continue
        for d in UNIT_STEPS:
            j = index.get(add(c, d))
            if j is not None and j > i + 1 and sequence[j] == "H":
                count += 1
    return count


def contact_energy(placed: Seq[Coord], sequence: str) -> int:
    return -contact_count(placed, sequence)


def relative_actions(coords: Seq[Coord]) -> list[int]:
    """Recover the relative action trace of a walk starting at (0,0,0),(1,0,0)-style frame.

    The walk's first step must equal INITIAL_FRAME.forward. Raises ValueError
    when a step reverses onto the previous cell or is not a unit step.
    """
    frame = INITIAL_FRAME
    if tuple(c1 - c0 for c0, c1 in zip(coords[0], coords[1])) != frame.forward:
        raise ValueError("walk must start with a +x step")
    trace = []
    for prev, cur in zip(coords[1:], coords[2:]):
        step = tuple(b - a for a, b in zip(prev, cur))
        for a in ACTIONS:
            d, nf = apply_frame(frame, a)
            if d == step:
                trace.append(int(a))
                frame = nf
                break
        else:
            raise ValueError(f"step {step} from {prev} is not a forward/turn move")
    return trace

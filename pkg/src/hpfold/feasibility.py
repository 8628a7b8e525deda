"""Exact search over lattice folds.

``can_complete`` is the depth-first completability check behind the action
mask. ``enumerate_optimal`` is an exhaustive optimum oracle for short chains,
used to certify rewards and validate the environment.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional, Sequence as Seq

from .lattice import (
    ACTIONS,
    INITIAL_FRAME,
    UNIT_STEPS,
    Coord,
    Frame,
    add,
    apply_frame,
    in_bounds,
    symmetry_allows,
    update_flags,
)

if TYPE_CHECKING:
    from .env import EnvState

DEFAULT_ENUMERATION_LIMIT = 14
MAX_NEW_CONTACTS_PER_H = 5


class SearchResult(enum.Enum):
    COMPLETABLE = "completable"
    NOT_COMPLETABLE = "not_completable"
    BUDGET_EXCEEDED = "budget_exceeded"


class _BudgetExhausted(Exception):
    pass


def _parity(c: Coord) -> int:
    return (c[0] + c[1] + c[2]) & 1


def free_region_reject(state: "EnvState") -> bool:
    """True when the remaining residues provably cannot fit next to the head.

    Each free in-bounds component touching the head is measured by flood
    fill. The remaining residues alternate lattice parity, so a component
    must hold enough cells of each colour. False means "unknown".
    """
    placed = state.placed
    length = len(state.sequence)
    remaining = length - len(placed)
    if remaining <= 0:
        return False
    head = placed[-1]
    # residue k (the next one) sits on the colour opposite the head
    first = 1 - _parity(head)
    need = [0, 0]
    need[first] = (remaining + 1) // 2
    need[1 - first] = remaining // 2

    occupied = set(placed)
    seen: set[Coord] = set()
    for d in UNIT_STEPS:
        start = add(head, d)
        if start in occupied or start in seen or not in_bounds(start, length):
            continue
        have = [0, 0]
        queue = deque([start])
        seen.add(start)
        while queue:
            c = queue.popleft()
            have[_parity(c)] += 1
            if have[0] >= need[0] and have[1] >= need[1]:
                return False
            for e in UNIT_STEPS:
                n = add(c, e)
                if n not in occupied and n not in seen and in_bounds(n, length):
                    seen.add(n)
                    queue.append(n)
    return True


def can_complete(state: "EnvState", max_nodes: Optional[int] = None) -> SearchResult:
    """Depth-first search for any legal way to place every remaining residue.

    Children are tried in action-code order and symmetry constraints are
    enforced. ``max_nodes`` bounds the number of placements tried.
    """
    length = len(state.sequence)
    remaining = length - len(state.placed)
    if remaining <= 0:
        return SearchResult.COMPLETABLE
    if free_region_reject(state):
        return SearchResult.NOT_COMPLETABLE

    occupied = set(state.placed)
    nodes = [0]

    def dfs(head: Coord, frame: Frame, dev: bool, vdev: bool, left: int) -> bool:
        if left == 0:
            return True
        for a in ACTIONS:
            if not symmetry_allows(a, dev, vdev):
                continue
            d, nf = apply_frame(frame, a)
            nxt = add(head, d)
            if nxt in occupied or not in_bounds(nxt, length):
                continue
            nodes[0] += 1
            if max_nodes is not None and nodes[0] > max_nodes:
                raise _BudgetExhausted
            occupied.add(nxt)
            ndev, nvdev = update_flags(a, dev, vdev)
            ok = dfs(nxt, nf, ndev, nvdev, left - 1)
            occupied.discard(nxt)
            if ok:
                return True
        return False

    try:
        found = dfs(state.placed[-1], state.frame, state.deviated,
                    state.deviated_vertically, remaining)
    except _BudgetExhausted:
        return SearchResult.BUDGET_EXCEEDED
    return SearchResult.COMPLETABLE if found else SearchResult.NOT_COMPLETABLE


@dataclass
class OptimumCertificate:
    sequence: str
    optimal_energy: int
    witness: list[int]
    coords: list[Coord]
    states_explored: int
    prefix: tuple[int, ...] = field(default=())

    def to_record(self) -> dict:
        return {
            "sequence": self.sequence,
            "actions": list(self.witness),
            "coords": [list(c) for c in self.coords],
            "energy": self.optimal_energy,
            "states_explored": self.states_explored,
        }


def _prefix_walk(sequence: str, prefix: Seq[int]):
    """Replay an action prefix from the reset state; None if any move is illegal."""
    length = len(sequence)
    coords = [(0, 0, 0), (1, 0, 0)]
    frame, dev, vdev = INITIAL_FRAME, False, False
    for a in prefix:
        if len(coords) >= length or not symmetry_allows(a, dev, vdev):
            return None
        d, frame = apply_frame(frame, a)
        nxt = add(coords[-1], d)
        if nxt in coords or not in_bounds(nxt, length):
            return None
        coords.append(nxt)
        dev, vdev = update_flags(a, dev, vdev)
    return coords, frame, dev, vdev


def top_level_branches(sequence: str, depth: int) -> list[tuple[int, ...]]:
    """All legal action prefixes of the given depth, in lexicographic order.

    Running ``enumerate_optimal`` once per prefix and merging with
    ``merge_certificates`` gives the same result as one unpartitioned run.
    """
    out: list[tuple[int, ...]] = [()]
    for _ in range(depth):
        nxt = []
        for p in out:
            for a in ACTIONS:
                q = p + (int(a),)
                if _prefix_walk(sequence, q) is not None:
                    nxt.append(q)
        out = nxt
    return out


def enumerate_optimal(
    sequence: str,
    prune: bool = False,
    limit: int = DEFAULT_ENUMERATION_LIMIT,
    prefix: Seq[int] = (),
) -> OptimumCertificate:
    """Exhaustively search symmetry-canonical complete folds for the lowest energy.

    With ``prune`` a branch is cut when its current contacts plus
    ``MAX_NEW_CONTACTS_PER_H`` per unplaced H cannot beat the incumbent.
    The witness is the lexicographically smallest optimal action trace.
    """
    from .env import validate_sequence

    sequence = validate_sequence(sequence)
    length = len(sequence)
    if length > limit:
        raise ValueError(
            f"sequence length {length} exceeds the enumeration limit {limit}"
        )
    start = _prefix_walk(sequence, prefix)
    if start is None:
        raise ValueError(f"prefix {tuple(prefix)} is not a legal move sequence")
    coords, frame, dev, vdev = start

    is_h = [ch == "H" for ch in sequence]
    # unplaced H residues from index k onwards
    h_suffix = [0] * (length + 1)
    for i in range(length - 1, -1, -1):
        h_suffix[i] = h_suffix[i + 1] + is_h[i]

    index = {c: i for i, c in enumerate(coords)}
    contacts = 0
    for i, c in enumerate(coords):
        if is_h[i]:
            for d in UNIT_STEPS:
                j = index.get(add(c, d))
                if j is not None and j > i + 1 and is_h[j]:
                    contacts += 1

    trace = list(prefix)
    best = {"contacts": -1, "trace": None, "coords": None}
    nodes = 0

    def dfs(head: Coord, fr: Frame, dv: bool, vdv: bool, k: int, cont: int) -> None:
        nonlocal nodes
        if k == length:
            if cont > best["contacts"]:
                best["contacts"] = cont
                best["trace"] = list(trace)
                best["coords"] = list(index)
            return
        if prune and cont + MAX_NEW_CONTACTS_PER_H * h_suffix[k] <= best["contacts"]:
            return
        for a in ACTIONS:
            if not symmetry_allows(a, dv, vdv):
                continue
            d, nf = apply_frame(fr, a)
            nxt = add(head, d)
            if nxt in index or not in_bounds(nxt, length):
                continue
            nodes += 1
            gained = 0
            if is_h[k]:
                for e in UNIT_STEPS:
                    j = index.get(add(nxt, e))
                    if j is not None and j < k - 1 and is_h[j]:
                        gained += 1
            index[nxt] = k
            trace.append(int(a))
            ndv, nvdv = update_flags(a, dv, vdv)
            dfs(nxt, nf, ndv, nvdv, k + 1, cont + gained)
            trace.pop()
            del index[nxt]

    dfs(coords[-1], frame, dev, vdev, len(coords), contacts)
    if best["trace"] is None:
        raise ValueError(f"no complete fold exists for {sequence} under prefix {tuple(prefix)}")
    return OptimumCertificate(
        sequence=sequence,
        optimal_energy=-best["contacts"],
        witness=best["trace"],
        coords=best["coords"],
        states_explored=nodes,
        prefix=tuple(prefix),
    )


def merge_certificates(certs: Iterable[OptimumCertificate]) -> OptimumCertificate:
    """Combine partition results: lowest energy, ties to the smallest witness."""
    certs = list(certs)
    if not certs:
        raise ValueError("nothing to merge")
    best = min(certs, key=lambda c: (c.optimal_energy, c.witness))
    return OptimumCertificate(
        sequence=best.sequence,
        optimal_energy=best.optimal_energy,
        witness=list(best.witness),
        coords=list(best.coords),
        states_explored=sum(c.states_explored for c in certs),
    )

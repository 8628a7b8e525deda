"""The seven 3D HP benchmark sequences and the run settings published for them."""
from __future__ import annotations

from dataclasses import dataclass

_SUBSCRIPTS = str.maketrans("₀₁₂₃₄₅₆₇₈₉", "0123456789")


class NotationError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


def expand_sequence(notation: str) -> str:
    """Expand repetition notation such as ``H2P2(HP2)6H2`` to a plain H/P string.

    A count follows a residue or a parenthesised group; groups nest one
    level only. Subscript digits are accepted.
    """
    text = notation.strip().translate(_SUBSCRIPTS)
    out: list[str] = []
    group: list[str] | None = None
    group_start = -1
    last: list[str] | None = None  # unit a following count applies to
    pos = 0
    while pos < len(text):
        ch = text[pos]
        if ch in "HPhp":
            unit = [ch.upper()]
            (group if group is not None else out).extend(unit)
            last = unit
            pos += 1
        elif ch == "(":
            if group is not None:
                raise NotationError("nested parentheses are not supported", pos)
            group, group_start, last = [], pos, None
            pos += 1
        elif ch == ")":
            if group is None:
                raise NotationError("unmatched ')'", pos)
            if not group:
                raise NotationError("empty group", pos)
            out.extend(group)
            last, group = group, None
            pos += 1
        elif ch.isdigit():
            end = pos
            while end < len(text) and text[end].isdigit():
                end += 1
            count = int(text[pos:end])
            if last is None:
                raise NotationError("repeat count without a preceding residue or group", pos)
            if count < 1:
                raise NotationError("repeat count must be positive", pos)
            (group if group is not None else out).extend(last * (count - 1))
            last = None
            pos = end
        else:
            raise NotationError(f"unexpected character {ch!r}", pos)
    if group is not None:
        raise NotationError("unclosed '('", group_start)
    if not out:
        raise NotationError("empty sequence", 0)
    return "".join(out)


@dataclass(frozen=True)
class BenchmarkEntry:
    id: int
    notation: str
    length: int
    best_known_energy: int  # published reference value, not something this package achieves

    @property
    def sequence(self) -> str:
        return expand_sequence(self.notation)


BENCHMARKS: dict[int, BenchmarkEntry] = {
    e.id: e for e in (
        BenchmarkEntry(1, "(HP)2PH(HP)2(PH)2HP(PH)2", 20, -11),
        BenchmarkEntry(2, "H2P2(HP2)6H2", 24, -13),
        BenchmarkEntry(3, "P2HP2(H2P4)3H2", 25, -9),
        BenchmarkEntry(4, "P(P2H2)2P5H5(H2P2)2P2H(HP2)2", 36, -18),
        BenchmarkEntry(5, "P2H(P2H2)2P5H10P6(H2P2)2HP2H5", 48, -31),
        BenchmarkEntry(6, "H2(PH)3PH4PH(P3H)2P4(HP3)2HPH4(PH)3PH2", 50, -34),
        BenchmarkEntry(7, "P(PH3)2H5P3H10PHP3H12P4H6PH2PHP", 60, -55),
    )
}


@dataclass(frozen=True)
class PublishedRun:
    reached_best: int
    episodes: int
    learning_rate: float
    batch_size: int
    d_model: int
    n_layers: int


PUBLISHED_RUNS: dict[int, PublishedRun] = {
    1: PublishedRun(-11, 80_000, 5e-4, 512, 64, 1),
    2: PublishedRun(-13, 100_000, 5e-5, 256, 256, 2),
    3: PublishedRun(-9, 100_000, 5e-4, 1024, 256, 2),
    4: PublishedRun(-18, 100_000, 5e-4, 1024, 256, 2),
    5: PublishedRun(-29, 300_000, 5e-4, 2048, 256, 3),
    6: PublishedRun(-29, 400_000, 5e-4, 2048, 256, 3),
    7: PublishedRun(-49, 300_000, 2e-5, 256, 512, 3),
}


def benchmark_sequence(bench_id: int) -> str:
    try:
        return BENCHMARKS[int(bench_id)].sequence
    except KeyError:
        raise ValueError(f"benchmark id must be 1-7, got {bench_id}") from None

"""Unit-cost Levenshtein alignment with a deterministic edit script."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

MATCH = "match"
SUBSTITUTE = "substitute"
DELETE = "delete"
INSERT = "insert"


class EditOp(NamedTuple):
    kind: str
    expected_index: int | None
    recognized_index: int | None


@dataclass(frozen=True)
class AlignmentReport:
    ops: tuple[EditOp, ...]
    distance: int

    def counts(self) -> dict[str, int]:
        out = {MATCH: 0, SUBSTITUTE: 0, DELETE: 0, INSERT: 0}
        for op in self.ops:
            out[op.kind] += 1
        return out

    def replay(self, expected: Sequence, recognized: Sequence) -> list:
        """Apply the script to ``expected``; the result equals ``recognized``."""
        out = []
        for op in self.ops:
            if op.kind == MATCH:
                out.append(expected[op.expected_index])
            elif op.kind in (SUBSTITUTE, INSERT):
                out.append(recognized[op.recognized_index])
        return out


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Two-row Levenshtein distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j - 1] + (x != y), prev[j] + 1, cur[j - 1] + 1))
        prev = cur
    return prev[-1]


def edit_table(a: Sequence, b: Sequence) -> list[list[int]]:
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        row, up = d[i], d[i - 1]
        row[0] = i
        x = a[i - 1]
        for j in range(1, m + 1):
            row[j] = min(up[j - 1] + (x != b[j - 1]), up[j] + 1, row[j - 1] + 1)
    return d


def edit_script(a: Sequence, b: Sequence) -> AlignmentReport:
    """Minimal edit script turning ``a`` into ``b``.

    Backtracking prefers match, then substitute, then delete, then insert
    whenever several predecessors reach the same cost.
    """
    d = edit_table(a, b)
    i, j = len(a), len(b)
    ops: list[EditOp] = []
    while i or j:
        here = d[i][j]
        if i and j:
            same = a[i - 1] == b[j - 1]
            if here == d[i - 1][j - 1] + (not same):
                ops.append(EditOp(MATCH if same else SUBSTITUTE, i - 1, j - 1))
                i -= 1
                j -= 1
                continue
        if i and here == d[i - 1][j] + 1:
            ops.append(EditOp(DELETE, i - 1, None))
            i -= 1
        else:
            ops.append(EditOp(INSERT, None, j - 1))
            j -= 1
    ops.reverse()
    return AlignmentReport(tuple(ops), d[len(a)][len(b)])


def align_phonemes(expected, recognized) -> AlignmentReport:
    """Align two phoneme sequences (or plain symbol sequences)."""
    a = getattr(expected, "symbols", expected)
    b = getattr(recognized, "symbols", recognized)
    return edit_script(tuple(a), tuple(b))

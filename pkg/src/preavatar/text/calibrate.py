"""Correct label phonemes from recognizer output (substitutions only)."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

from .align import DELETE, INSERT, MATCH, SUBSTITUTE, align_phonemes
from .g2p import PhonemeSequence


@dataclass(frozen=True)
class CalibrationPolicy:
    min_confidence: float = 0.8
    flag_low_confidence: bool = True


@dataclass(frozen=True)
class ReviewFlag:
    position: int  # index into the expected sequence (len(expected) for trailing insertions)
    kind: str  # deletion | insertion | low_confidence | unknown_symbol
    expected: str | None = None
    recognized: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def calibrate_transcript(
    expected: PhonemeSequence,
    recognized: PhonemeSequence,
    policy: CalibrationPolicy = CalibrationPolicy(),
    inventory: Iterable[str] | None = None,
) -> tuple[PhonemeSequence, list[ReviewFlag]]:
    """Apply confident substitutions; flag everything else that disagrees.

    The output always has the length of ``expected``. A recognized phoneme
    without a confidence value is never applied automatically.
    """
    report = align_phonemes(expected, recognized)
    inv = None if inventory is None else set(inventory)
    conf = recognized.confidence
    out = list(expected.symbols)
    flags: list[ReviewFlag] = []
    # insertions attach to the next expected position
    next_expected = 0
    for op in report.ops:
        if op.kind == MATCH:
            next_expected = op.expected_index + 1
        elif op.kind == SUBSTITUTE:
            e, r = op.expected_index, op.recognized_index
            next_expected = e + 1
            sym = recognized.symbols[r]
            c = conf[r] if conf is not None else 0.0
            if inv is not None and sym not in inv:
                flags.append(ReviewFlag(e, "unknown_symbol", expected.symbols[e], sym))
            elif c >= policy.min_confidence:
                out[e] = sym
            elif policy.flag_low_confidence:
                flags.append(ReviewFlag(e, "low_confidence", expected.symbols[e], sym))
        elif op.kind == DELETE:
            e = op.expected_index
            next_expected = e + 1
            flags.append(ReviewFlag(e, "deletion", expected.symbols[e], None))
        elif op.kind == INSERT:
            flags.append(
                ReviewFlag(next_expected, "insertion", None, recognized.symbols[op.recognized_index])
            )
    calibrated = PhonemeSequence(tuple(out), expected.word_index)
    return calibrated, flags

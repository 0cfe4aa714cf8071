"""Grapheme-to-phoneme conversion and recognizer-driven transcript calibration."""

from .align import AlignmentReport, EditOp, align_phonemes, edit_distance, edit_script
from .calibrate import CalibrationPolicy, ReviewFlag, calibrate_transcript
from .g2p import (
    G2PError,
    Lexicon,
    PhonemeSequence,
    format_phoneme_line,
    grapheme_to_phoneme,
    parse_phoneme_line,
    tokenize,
)
from .prepare import (
    STAGES,
    PrepConfig,
    PreparationError,
    TrainingPair,
    prepare_pairs,
    read_manuscript,
)
from .providers import (
    CommandTranscriptProvider,
    IdentityTranscriptProvider,
    StubTranscriptProvider,
    TranscriptProvider,
)

__all__ = [
    "AlignmentReport",
    "EditOp",
    "align_phonemes",
    "edit_distance",
    "edit_script",
    "CalibrationPolicy",
    "ReviewFlag",
    "calibrate_transcript",
    "G2PError",
    "Lexicon",
    "PhonemeSequence",
    "format_phoneme_line",
    "grapheme_to_phoneme",
    "parse_phoneme_line",
    "tokenize",
    "STAGES",
    "PrepConfig",
    "PreparationError",
    "TrainingPair",
    "prepare_pairs",
    "read_manuscript",
    "CommandTranscriptProvider",
    "IdentityTranscriptProvider",
    "StubTranscriptProvider",
    "TranscriptProvider",
]

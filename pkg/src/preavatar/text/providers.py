"""Recognizer back-ends used for audio-text calibration."""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from pathlib import Path
from typing import Protocol, runtime_checkable

from ..audio import AudioClip, write_wav
from .g2p import PhonemeSequence, parse_phoneme_line


@runtime_checkable
class TranscriptProvider(Protocol):
    """Phoneme recognizer contract.

    ``concurrent`` declares whether ``transcribe`` may be called from several
    threads at once; the pipeline serializes calls when it is False.
    """

    concurrent: bool

    def transcribe(
        self, clip: AudioClip, index: int, expected: PhonemeSequence
    ) -> PhonemeSequence: ...


class IdentityTranscriptProvider:
    """Echoes the expected sequence with full confidence."""

    concurrent = True

    def transcribe(self, clip, index, expected):
        return PhonemeSequence(expected.symbols, confidence=(1.0,) * len(expected))


class StubTranscriptProvider:
    """File-backed recognizer: line ``index`` holds ``symbol/confidence`` tokens."""

    concurrent = True

    def __init__(self, path: str | Path):
        self.path = Path(path)
        lines = self.path.read_text(encoding="utf-8").splitlines()
        self.utterances = [parse_phoneme_line(line) for line in lines if line.strip()]

    def transcribe(self, clip, index, expected):
        if index >= len(self.utterances):
            raise IndexError(
                f"{self.path} has {len(self.utterances)} utterances, asked for #{index}"
            )
        return self.utterances[index]


class CommandTranscriptProvider:
    """Runs an external recognizer.

    ``command`` is a template with ``{wav}`` and ``{index}`` placeholders; the
    process must print one line in the stub-file token format.
    """

    concurrent = False

    def __init__(self, command: str, timeout: float | None = 600.0):
        self.command = command
        self.timeout = timeout

    def transcribe(self, clip, index, expected):
        with tempfile.TemporaryDirectory() as tmp:
            wav = write_wav(Path(tmp) / f"{index:04d}.wav", clip)
            argv = [tok.format(wav=str(wav), index=index) for tok in shlex.split(self.command)]
            proc = subprocess.run(
                argv, capture_output=True, text=True, timeout=self.timeout, check=False
            )
        if proc.returncode != 0:
            raise RuntimeError(
                f"recognizer exited with {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        return parse_phoneme_line(proc.stdout.strip())

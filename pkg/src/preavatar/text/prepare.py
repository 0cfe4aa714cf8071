"""Five-stage preparation of (phonemes, wav) training pairs from a manuscript."""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .._io import sha256_file, write_json
from ..audio import (
    AudioClip,
    NoiseGateParams,
    SilencePolicy,
    StftParams,
    clip_silence,
    detect_silence,
    read_wav,
    reduce_noise,
    resample,
    write_wav,
)
from .calibrate import CalibrationPolicy, ReviewFlag, calibrate_transcript
from .g2p import Lexicon, PhonemeSequence, format_phoneme_line, grapheme_to_phoneme
from .providers import TranscriptProvider

log = logging.getLogger(__name__)

STAGES = (
    "resample",
    "silence_clip",
    "noise_reduction",
    "grapheme_to_phoneme",
    "audio_text_calibration",
)


class PreparationError(RuntimeError):
    def __init__(self, message: str, stage: str | None = None, index: int | None = None):
        super().__init__(message)
        self.stage = stage
        self.index = index


@dataclass(frozen=True)
class PrepConfig:
    target_rate: int = 22050
    silence_stft: StftParams = field(default_factory=StftParams)
    threshold_db: float = -40.0
    silence: SilencePolicy = field(default_factory=SilencePolicy)
    noise: NoiseGateParams = field(default_factory=NoiseGateParams)
    calibration: CalibrationPolicy = field(default_factory=CalibrationPolicy)
    # "edges": gate statistics from the trimmed leading/trailing silence when
    # it is long enough, else from the clip itself; "self": always the clip
    noise_profile: str = "edges"
    workers: int = 1


@dataclass(frozen=True)
class TrainingPair:
    index: int
    text: str
    phonemes: PhonemeSequence
    audio_path: Path
    checksum: str
    flags: tuple[ReviewFlag, ...] = ()

    def verify(self) -> bool:
        return self.audio_path.is_file() and sha256_file(self.audio_path) == self.checksum

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "text": self.text,
            "phonemes": list(self.phonemes.symbols),
            "word_index": list(self.phonemes.word_index or ()),
            "audio": str(self.audio_path),
            "sha256": self.checksum,
            "flags": [f.to_dict() for f in self.flags],
        }


def read_manuscript(path: str | Path) -> list[str]:
    """Paragraphs separated by blank lines, whitespace-normalized."""
    text = Path(path).read_text(encoding="utf-8")
    paragraphs, current = [], []
    for line in text.splitlines():
        if line.strip():
            current.append(line.strip())
        elif current:
            paragraphs.append(" ".join(current))
            current = []
    if current:
        paragraphs.append(" ".join(current))
    return [" ".join(p.split()) for p in paragraphs]


def _process_one(
    index: int,
    paragraph: str,
    recording: Path,
    asr: TranscriptProvider,
    asr_lock: threading.Lock | None,
    lexicon: Lexicon,
    config: PrepConfig,
    out_dir: Path,
) -> tuple[TrainingPair, dict]:
    timings: dict[str, float] = {}
    entry: dict = {"index": index, "recording": str(recording)}

    def stage(name):
        timings[name] = time.perf_counter()

    def done(name):
        timings[name] = round(time.perf_counter() - timings[name], 6)

    try:
        current = "resample"
        stage(current)
        raw = read_wav(recording)
        clip = resample(raw, config.target_rate)
        entry["input_duration"] = raw.duration
        done(current)

        current = "silence_clip"
        stage(current)
        spans = detect_silence(clip, config.silence_stft, config.threshold_db)
        trimmed = clip_silence(clip, spans, config.silence, config.silence_stft)
        edge = [s for s in spans if s.start_sample == 0 or s.end_sample == len(clip)]
        entry["silence_spans"] = [
            {"start_sample": s.start_sample, "end_sample": s.end_sample, "mean_db": round(s.mean_energy, 3)}
            for s in spans
        ]
        entry["samples_removed"] = len(clip) - len(trimmed)
        if len(trimmed) == 0:
            raise PreparationError("recording is entirely silent", current, index)
        done(current)

        current = "noise_reduction"
        stage(current)
        profile = None
        if config.noise_profile == "edges":
            parts = [clip.samples[s.start_sample : s.end_sample] for s in edge]
            edge_samples = np.concatenate(parts) if parts else np.zeros(0)
            if edge_samples.shape[0] >= config.noise.stft.fft_size:
                profile = AudioClip(edge_samples, clip.sample_rate)
        try:
            denoised = reduce_noise(trimmed, profile, config.noise)
            entry["noise_profile"] = "edges" if profile is not None else "self"
        except ValueError as exc:
            log.warning("utterance %d: noise reduction skipped (%s)", index, exc)
            denoised = trimmed
            entry["noise_profile"] = "skipped"
        done(current)

        current = "grapheme_to_phoneme"
        stage(current)
        expected = grapheme_to_phoneme(paragraph, lexicon)
        done(current)

        current = "audio_text_calibration"
        stage(current)
        if asr_lock is not None:
            with asr_lock:
                recognized = asr.transcribe(denoised, index, expected)
        else:
            recognized = asr.transcribe(denoised, index, expected)
        calibrated, flags = calibrate_transcript(
            expected, recognized, config.calibration, lexicon.inventory
        )
        done(current)
    except PreparationError:
        raise
    except Exception as exc:
        raise PreparationError(f"utterance {index}: {exc}", current, index) from exc

    wav_path = write_wav(out_dir / f"{index:04d}.wav", denoised)
    (out_dir / f"{index:04d}.phonemes").write_text(
        format_phoneme_line(calibrated) + "\n", encoding="utf-8"
    )
    entry["output_duration"] = denoised.duration
    entry["timings"] = {name: timings[name] for name in STAGES}
    entry["flags"] = [f.to_dict() for f in flags]
    pair = TrainingPair(index, paragraph, calibrated, wav_path, sha256_file(wav_path), tuple(flags))
    return pair, entry


def prepare_pairs(
    manuscript: str | Path,
    recordings: Sequence[str | Path],
    asr: TranscriptProvider,
    config: PrepConfig = PrepConfig(),
    out_dir: str | Path = "prepared",
    lexicon: Lexicon | None = None,
) -> tuple[list[TrainingPair], dict]:
    """Run the preparation stages on each (paragraph, recording) pair, by order.

    Writes ``NNNN.wav`` / ``NNNN.phonemes`` / ``pairs.json`` / ``report.json``
    into ``out_dir`` and returns the pairs with the report dictionary.
    """
    paragraphs = read_manuscript(manuscript)
    recordings = [Path(r) for r in recordings]
    if len(paragraphs) != len(recordings):
        raise PreparationError(
            f"manuscript has {len(paragraphs)} paragraphs but {len(recordings)} recordings were given"
        )
    lexicon = lexicon or Lexicon.default()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = None if getattr(asr, "concurrent", False) else threading.Lock()

    jobs = [
        (i, p, r, asr, lock, lexicon, config, out_dir)
        for i, (p, r) in enumerate(zip(paragraphs, recordings))
    ]
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(lambda job: _process_one(*job), jobs))
    else:
        results = [_process_one(*job) for job in jobs]

    pairs = [pair for pair, _ in results]
    report = {
        "stages": list(STAGES),
        "target_rate": config.target_rate,
        "utterances": [entry for _, entry in results],
        "total_flags": sum(len(p.flags) for p in pairs),
    }
    write_json(out_dir / "pairs.json", [p.to_dict() for p in pairs])
    write_json(out_dir / "report.json", report)
    return pairs, report

"""Slide-aligned presentation assembly: timeline, render manifest, encoder call, metrics."""

from __future__ import annotations

import json
import logging
import os
import shlex
import string
import subprocess
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._io import sha256_file, sha256_tree
from .audio import AudioClip, read_wav, resample, write_wav
from .text.align import edit_distance

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "preavatar.render-manifest/1"
PLACEHOLDERS = ("slides", "speech", "avatar", "out", "fps")
CORNERS = ("top-left", "top-right", "bottom-left", "bottom-right")
FRAME_PATTERN = "%06d.png"

# Reference encoder invocation; see docs/encoder.md.
DEFAULT_TEMPLATE = (
    "ffmpeg -y -f concat -safe 0 -i {slides} -i {speech} -framerate {fps} -i {avatar} "
    "-filter_complex [0:v]scale=1280:720,setsar=1[bg];[2:v]scale=-2:180[av];"
    "[bg][av]overlay=W-w:H-h[v] "
    "-map [v] -map 1:a -r {fps} -c:v libx264 -pix_fmt yuv420p -c:a aac -shortest {out}"
)


class AssemblyError(RuntimeError):
    pass


class MissingAssetError(AssemblyError):
    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        super().__init__("missing assets:\n  " + "\n  ".join(self.missing))


@dataclass(frozen=True)
class Slide:
    image: Path
    notes: str = ""


@dataclass(frozen=True)
class SlideDeck:
    slides: tuple[Slide, ...]

    def __post_init__(self):
        if not self.slides:
            raise ValueError("a slide deck needs at least one slide")

    def __len__(self):
        return len(self.slides)

    @classmethod
    def load(cls, path: str | Path) -> "SlideDeck":
        """Read ``{"slides": [{"image": path, "notes": text}]}``; images resolve against the file."""
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        try:
            entries = data["slides"]
            slides = tuple(
                Slide(path.parent / e["image"], str(e.get("notes") or "")) for e in entries
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: malformed slide deck ({exc})") from exc
        return cls(slides)


@dataclass(frozen=True)
class AssemblyConfig:
    padding: float = 0.5
    min_slide_duration: float = 3.0
    overlay_corner: str = "bottom-right"
    overlay_size: float = 0.25  # fraction of output frame height
    resolution: tuple[int, int] = (1280, 720)
    fps: float = 25.0
    duration_tolerance: float = 0.05
    template: str = DEFAULT_TEMPLATE
    output: str = "presentation.mp4"

    def validate(self) -> None:
        if self.padding < 0 or self.min_slide_duration <= 0:
            raise ValueError("padding must be >= 0 and min_slide_duration > 0")
        if self.overlay_corner not in CORNERS:
            raise ValueError(f"overlay_corner must be one of {CORNERS}")
        if not 0 < self.overlay_size <= 1:
            raise ValueError("overlay_size must be in (0, 1]")
        if self.fps <= 0 or min(self.resolution) <= 0:
            raise ValueError("fps and resolution must be positive")


@dataclass(frozen=True)
class Segment:
    slide: int
    start: float
    duration: float
    speech: str | None
    avatar: str | None
    image: str

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class Timeline:
    segments: tuple[Segment, ...]

    @property
    def total(self) -> float:
        return self.segments[-1].end if self.segments else 0.0

    def check(self) -> None:
        t = 0.0
        for s in self.segments:
            if s.start != t or not s.duration > 0:
                raise AssemblyError(f"segment {s.slide} breaks contiguity at {s.start}")
            t = s.end


def segment_manuscript(deck: SlideDeck) -> list[str]:
    return [" ".join(s.notes.split()) for s in deck.slides]


def speech_id(i: int) -> str:
    return f"speech-{i:04d}"


def slide_id(i: int) -> str:
    return f"slide-{i:04d}"


AVATAR_ID = "avatar"


def build_timeline(
    deck: SlideDeck,
    speech_durations: Sequence[float],
    config: AssemblyConfig = AssemblyConfig(),
    avatar: bool = True,
) -> Timeline:
    """One segment per slide: speech + padding, or min_slide_duration + padding for empty notes."""
    texts = segment_manuscript(deck)
    if len(speech_durations) != len(texts):
        raise ValueError(f"{len(texts)} slides but {len(speech_durations)} speech durations")
    segments, start = [], 0.0
    for i, (text, d) in enumerate(zip(texts, speech_durations)):
        d = float(d)
        if d < 0 or not np.isfinite(d):
            raise ValueError(f"slide {i}: invalid speech duration {d}")
        has_speech = bool(text)
        base = d if has_speech else config.min_slide_duration
        duration = base + config.padding
        if duration <= 0:
            raise ValueError(f"slide {i}: zero-length segment (speech {d}, padding {config.padding})")
        segments.append(
            Segment(i, start, duration, speech_id(i) if has_speech else None,
                    AVATAR_ID if avatar else None, slide_id(i))
        )
        start = start + duration
    return Timeline(tuple(segments))


def _round(x: float) -> float:
    return float(f"{x:.6f}")


def _asset_duration(path: Path, fps: float) -> float | None:
    if path.is_dir():
        return len(list(path.glob("*.png"))) / fps
    if path.suffix.lower() == ".wav":
        return read_wav(path).duration
    return None


def _relative(path: Path, base: Path) -> str:
    return Path(os.path.relpath(path.resolve(), base.resolve())).as_posix()


def write_speech_track(
    timeline: Timeline, assets: Mapping[str, Path], out_path: Path, sample_rate: int | None = None
) -> Path:
    """Concatenate speech assets, each padded with silence to its segment duration."""
    clips = {sid: read_wav(assets[sid]) for sid in {s.speech for s in timeline.segments if s.speech}}
    rate = sample_rate or (next(iter(clips.values())).sample_rate if clips else 22050)
    parts = []
    for seg in timeline.segments:
        n = int(round(seg.duration * rate))
        piece = np.zeros(n)
        if seg.speech:
            x = resample(clips[seg.speech], rate).samples[:n]
            piece[: len(x)] = x
        parts.append(piece)
    return write_wav(out_path, AudioClip(np.concatenate(parts), rate))


def write_slide_list(timeline: Timeline, assets: Mapping[str, Path], out_path: Path) -> Path:
    """Concat-demuxer list: one image per segment with its display duration."""
    base = out_path.parent
    lines = ["ffconcat version 1.0"]
    for seg in timeline.segments:
        lines.append(f"file '{_relative(assets[seg.image], base)}'")
        lines.append(f"duration {_round(seg.duration)}")
    # the demuxer ignores the final duration unless the last file is repeated
    if timeline.segments:
        lines.append(f"file '{_relative(assets[timeline.segments[-1].image], base)}'")
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out_path


def emit_manifest(
    timeline: Timeline,
    assets: Mapping[str, str | Path],
    config: AssemblyConfig = AssemblyConfig(),
    out_dir: str | Path = ".",
    media: bool = True,
) -> Path:
    """Write ``manifest.json`` (canonical JSON) into ``out_dir`` and return its path.

    With ``media`` the padded speech track and slide list are written next to
    it and registered as the ``speech-track`` and ``slide-list`` assets.
    """
    config.validate()
    timeline.check()
    out_dir = Path(out_dir)
    assets = {k: Path(v) for k, v in assets.items()}

    referenced = []
    for seg in timeline.segments:
        referenced += [x for x in (seg.image, seg.speech, seg.avatar) if x]
    unknown = sorted({r for r in referenced if r not in assets})
    if unknown:
        raise AssemblyError(f"timeline references unknown asset ids: {', '.join(unknown)}")
    missing = sorted(f"{k}: {p}" for k, p in assets.items() if not p.exists())
    if missing:
        raise MissingAssetError(missing)

    out_dir.mkdir(parents=True, exist_ok=True)
    if media:
        assets["speech-track"] = write_speech_track(timeline, assets, out_dir / "speech.wav")
        assets["slide-list"] = write_slide_list(timeline, assets, out_dir / "slides.ffconcat")

    table = {}
    durations = {}
    for aid in sorted(assets):
        p = assets[aid]
        entry = {
            "path": _relative(p, out_dir),
            "kind": "frames" if p.is_dir() else "file",
            "sha256": sha256_tree(p) if p.is_dir() else sha256_file(p),
        }
        d = _asset_duration(p, config.fps)
        if d is not None:
            durations[aid] = d
            entry["duration"] = _round(d)
        table[aid] = entry

    warnings = []
    tol = config.duration_tolerance
    total = timeline.total
    expected = sum(
        (durations.get(s.speech, 0.0) if s.speech else config.min_slide_duration) + config.padding
        for s in timeline.segments
    )
    if abs(expected - total) > tol:
        warnings.append(
            f"timeline total {total:.3f}s differs from speech assets + padding {expected:.3f}s"
        )
    for aid in sorted({s.avatar for s in timeline.segments if s.avatar}):
        if aid in durations and abs(durations[aid] - total) > tol:
            warnings.append(f"avatar '{aid}' lasts {durations[aid]:.3f}s, timeline {total:.3f}s")
    for w in warnings:
        log.warning(w)

    manifest = {
        "format": MANIFEST_FORMAT,
        "timeline": [
            {
                "slide": s.slide,
                "image": s.image,
                "start": _round(s.start),
                "duration": _round(s.duration),
                "speech": s.speech,
                "avatar": s.avatar,
                "avatar_offset": _round(s.start) if s.avatar else None,
            }
            for s in timeline.segments
        ],
        "total_duration": _round(total),
        "assets": table,
        "overlay": {"corner": config.overlay_corner, "size": config.overlay_size},
        "output": {
            "path": config.output,
            "resolution": list(config.resolution),
            "fps": config.fps,
        },
        "metadata": {"warnings": warnings, "padding": config.padding,
                     "min_slide_duration": config.min_slide_duration},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def validate_manifest(manifest: Mapping, base: str | Path | None = None) -> list[str]:
    """Schema and consistency problems of a loaded manifest (empty list = valid)."""
    problems = []
    for key in ("format", "timeline", "total_duration", "assets", "overlay", "output", "metadata"):
        if key not in manifest:
            problems.append(f"missing key '{key}'")
    if problems:
        return problems
    if manifest["format"] != MANIFEST_FORMAT:
        problems.append(f"unknown format {manifest['format']!r}")
    assets = manifest["assets"]
    t = 0.0
    for seg in manifest["timeline"]:
        if abs(seg["start"] - t) > 1e-6:
            problems.append(f"segment {seg['slide']} starts at {seg['start']}, expected {t}")
        if not seg["duration"] > 0:
            problems.append(f"segment {seg['slide']} has non-positive duration")
        for ref in (seg["image"], seg["speech"], seg["avatar"]):
            if ref is not None and ref not in assets:
                problems.append(f"segment {seg['slide']} references unknown asset {ref}")
        t = seg["start"] + seg["duration"]
    if abs(t - manifest["total_duration"]) > 1e-5:
        problems.append(f"total_duration {manifest['total_duration']} != timeline end {t}")
    if manifest["overlay"].get("corner") not in CORNERS:
        problems.append("bad overlay corner")
    if base is not None:
        for aid, entry in assets.items():
            p = Path(base) / entry["path"]
            if not p.exists():
                problems.append(f"asset {aid} missing at {p}")
                continue
            digest = sha256_tree(p) if p.is_dir() else sha256_file(p)
            if digest != entry["sha256"]:
                problems.append(f"asset {aid} checksum mismatch")
    return problems


def render_command(manifest: Mapping | str | Path, template: str = DEFAULT_TEMPLATE) -> list[str]:
    """Argument vector for the external encoder; nothing is executed.

    Paths are resolved relative to the manifest directory when the manifest is
    given as a path, or left relative otherwise.
    """
    base = Path(".")
    if isinstance(manifest, (str, Path)):
        base = Path(manifest).parent
        manifest = json.loads(Path(manifest).read_text(encoding="utf-8"))
    assets = manifest["assets"]

    def asset(aid):
        if aid not in assets:
            raise AssemblyError(f"manifest has no '{aid}' asset")
        return Path(os.path.normpath(base / assets[aid]["path"])).as_posix()

    fields = set()
    for _, name, _, _ in string.Formatter().parse(template):
        if name is None:
            continue
        if name not in PLACEHOLDERS:
            raise AssemblyError(f"unknown placeholder {{{name}}} in encoder template")
        fields.add(name)
    values = {}
    if "slides" in fields:
        values["slides"] = asset("slide-list")
    if "speech" in fields:
        values["speech"] = asset("speech-track")
    if "avatar" in fields:
        values["avatar"] = asset(AVATAR_ID) + "/" + FRAME_PATTERN
    fps = manifest["output"]["fps"]
    values["fps"] = str(int(fps)) if float(fps).is_integer() else str(fps)
    values["out"] = Path(os.path.normpath(base / manifest["output"]["path"])).as_posix()
    return [tok.format(**values) for tok in shlex.split(template)]


def run_encoder(argv: Sequence[str], timeout: float | None = None) -> subprocess.CompletedProcess:
    log.info("running encoder: %s", shlex.join(argv))
    return subprocess.run(list(argv), capture_output=True, text=True, timeout=timeout, check=False)


# -- evaluation --


def words(text: str) -> list[str]:
    """Case-folded whitespace tokens with punctuation removed."""
    cleaned = "".join(
        " " if unicodedata.category(ch).startswith("P") and ch != "'" else ch
        for ch in text.casefold()
    ).replace("'", "")
    return cleaned.split()


def word_edits(reference: str, hypothesis: str) -> int:
    return edit_distance(words(reference), words(hypothesis))


def word_error_rate(reference: str, hypothesis: str) -> float:
    ref = words(reference)
    if not ref:
        raise ValueError("reference transcript has no words")
    return edit_distance(ref, words(hypothesis)) / len(ref)


def utilization_report(output_durations: Sequence[float], time_spent: float) -> dict:
    if not time_spent > 0:
        raise ValueError("time_spent must be positive")
    total = float(sum(output_durations))
    if total < 0 or any(d < 0 for d in output_durations):
        raise ValueError("output durations must be non-negative")
    return {"utilization": total / time_spent, "output_seconds": total, "time_spent_seconds": float(time_spent)}


@dataclass
class EvalReport:
    wer: float | None = None
    utilization: float | None = None
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"wer": self.wer, "utilization": self.utilization, "timings": self.timings}

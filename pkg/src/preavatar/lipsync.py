"""Audio-visual synchronization scoring and the lip-generation losses.

The learned audio/video encoders are replaced by deterministic extractors
behind the :class:`SyncExtractor` protocol; any trained model that maps a
window of mel frames and a window of video frames to equal-size embeddings
can be plugged in instead.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .audio import AudioClip, MelConfig, MelSpectrogram, StftParams, mel_spectrogram

SYNC = 0


@dataclass(frozen=True)
class MouthRegion:
    """Rectangle (x0, y0, x1, y1) in normalized image coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "MouthRegion":
        if len(values) != 4:
            raise ValueError("mouth region needs [x0, y0, x1, y1]")
        return cls(*map(float, values))

    def clamped(self) -> "MouthRegion":
        c = lambda v: min(1.0, max(-1.0, v))  # noqa: E731
        return MouthRegion(c(self.x0), c(self.y0), c(self.x1), c(self.y1))

    @property
    def is_empty(self) -> bool:
        return not (self.x1 > self.x0 and self.y1 > self.y0)

    def validate(self) -> None:
        inside = all(-1.0 <= v <= 1.0 for v in (self.x0, self.y0, self.x1, self.y1))
        if not inside or self.is_empty:
            raise ValueError(f"mouth region {self} must be a non-empty rectangle within [-1, 1]^2")

    def pixel_mask(self, h: int, w: int) -> np.ndarray:
        """Boolean (H, W) mask of pixel centres inside the clamped rectangle."""
        r = self.clamped()
        if r.is_empty:
            return np.zeros((h, w), dtype=bool)
        xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
        ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
        mx = (xs >= r.x0) & (xs <= r.x1)
        my = (ys >= r.y0) & (ys <= r.y1)
        return my[:, None] & mx[None, :]


@dataclass(frozen=True)
class SyncWindow:
    frame_start: int
    frame_stop: int  # exclusive
    audio_start: int
    audio_stop: int  # exclusive
    offset: int = SYNC  # audio lags video by this many frames; 0 = synchronized

    @property
    def synchronized(self) -> bool:
        return self.offset == SYNC


def frames_to_samples(frame: int, fps: float, sample_rate: int) -> int:
    return int(round(frame * sample_rate / fps))


def sample_windows(
    n_frames: int,
    fps: float,
    audio_len: int,
    sample_rate: int,
    count: int,
    window_frames: int = 5,
    seed: int = 0,
    min_offset: int = 2,
    max_offset: int = 15,
) -> list[SyncWindow]:
    """Random sync/offset training windows, alternating sync first.

    The audio range of a window covers the video frames
    ``[start + offset, start + offset + window_frames)``.
    """
    if count <= 0:
        return []
    if not 0 < min_offset <= max_offset:
        raise ValueError("need 0 < min_offset <= max_offset")
    audio_frames = int(math.floor(audio_len * fps / sample_rate + 1e-9))
    usable = min(n_frames, audio_frames)
    if usable < window_frames:
        raise ValueError(
            f"media too short: {usable} usable frames for a {window_frames}-frame window"
        )
    rng = np.random.default_rng(seed)
    windows = []
    for i in range(count):
        if i % 2 == 0:
            offset = 0
            start = int(rng.integers(0, usable - window_frames + 1))
        else:
            # offsets whose shifted audio still fits somewhere
            choices = [
                s * d
                for d in range(min_offset, max_offset + 1)
                for s in (-1, 1)
                if usable - window_frames - d >= 0
            ]
            if not choices:
                raise ValueError(f"media too short for an offset of at least {min_offset} frames")
            offset = int(choices[int(rng.integers(0, len(choices)))])
            lo = max(0, -offset)
            hi = min(n_frames, audio_frames - offset) - window_frames
            start = int(rng.integers(lo, hi + 1))
        a0 = start + offset
        windows.append(
            SyncWindow(
                start,
                start + window_frames,
                frames_to_samples(a0, fps, sample_rate),
                frames_to_samples(a0 + window_frames, fps, sample_rate),
                offset,
            )
        )
    return windows


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v / n if n > 1e-12 else np.zeros_like(v)


def audio_embed(mel_window: MelSpectrogram | np.ndarray) -> np.ndarray:
    """Per-band mean and variance over the window, concatenated, unit norm."""
    values = np.atleast_2d(np.asarray(getattr(mel_window, "values", mel_window), dtype=np.float64))
    if values.shape[0] == 0:
        raise ValueError("empty mel window")
    return _unit(np.concatenate([values.mean(axis=0), values.var(axis=0)]))


def _gray(frame) -> np.ndarray:
    x = np.asarray(frame, dtype=np.float64)
    return x.mean(axis=2) if x.ndim == 3 else x


def _mouth_track(frames: Sequence[np.ndarray], mouth: MouthRegion) -> np.ndarray:
    if not len(frames):
        raise ValueError("empty frame window")
    mouth.validate()
    h, w = np.asarray(frames[0]).shape[:2]
    mask = mouth.pixel_mask(h, w)
    if not mask.any():
        raise ValueError(f"mouth region {mouth} contains no pixel centres of a {w}x{h} frame")
    return np.array([_gray(f)[mask].mean() for f in frames])


def video_embed(frames: Sequence[np.ndarray], mouth: MouthRegion) -> np.ndarray:
    """Mouth mean per frame plus mean absolute frame-to-frame change, unit norm."""
    h, w = np.asarray(frames[0]).shape[:2] if len(frames) else (0, 0)
    track = _mouth_track(frames, mouth)
    mask = mouth.pixel_mask(h, w)
    diffs = [
        float(np.abs(_gray(b)[mask] - _gray(a)[mask]).mean())
        for a, b in zip(frames, frames[1:])
    ]
    return _unit(np.concatenate([track, np.asarray(diffs)]))


def sync_distance(a: np.ndarray, v: np.ndarray) -> float:
    a, v = np.asarray(a, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if a.shape != v.shape:
        raise ValueError(f"embedding dimension mismatch: {a.shape} vs {v.shape}")
    return float(np.sqrt(((a - v) ** 2).sum()))


def max_margin_loss(distances: Sequence[tuple[float, int | bool | str]], margin: float = 1.0) -> float:
    """Contrastive loss: d^2 for sync pairs, max(0, margin - d)^2 otherwise.

    A label counts as synchronized when it is ``0``, ``True`` or ``"sync"``.
    The mean is accumulated in exact rational arithmetic and rounded once, so
    the result is correctly rounded and independent of pair order.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    if not distances:
        return 0.0
    m = Fraction(margin)
    total = Fraction(0)
    for d, label in distances:
        d = Fraction(float(d))
        synced = label is True or label == "sync" or (label is not False and label == 0)
        total += d * d if synced else max(Fraction(0), m - d) ** 2
    return float(total / len(distances))


def mask_mouth(frame: np.ndarray, mouth: MouthRegion) -> np.ndarray:
    out = np.array(frame, dtype=np.float64, copy=True)
    out[mouth.pixel_mask(*out.shape[:2])] = 0.0
    return out


def reconstruction_loss(
    generated: Sequence[np.ndarray],
    target: Sequence[np.ndarray],
    mouth: MouthRegion,
    mouth_weight: float = 4.0,
) -> float:
    """Weighted mean absolute error, mouth pixels weighted ``mouth_weight``."""
    if mouth_weight < 1:
        raise ValueError("mouth_weight must be >= 1")
    g = np.asarray(generated, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if g.shape != t.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {t.shape}")
    if g.size == 0:
        raise ValueError("no frames to compare")
    weights = np.where(mouth.pixel_mask(*g.shape[1:3]), mouth_weight, 1.0)
    err = np.abs(g - t).mean(axis=-1)  # over channels
    return float((err * weights).sum() / (weights.sum() * g.shape[0]))


# -- video-level sync scoring --


class SyncExtractor(Protocol):
    def audio(self, energy_track: np.ndarray) -> np.ndarray: ...

    def video(self, motion_track: np.ndarray) -> np.ndarray: ...


class TrackExtractor:
    """Default extractor pair: mean-removed, unit-norm per-frame tracks.

    Audio side: mel-band power averaged per video frame. Video side: the mean
    absolute change of the mouth region from the previous frame. A window
    whose track is constant maps to the zero vector.
    """

    def audio(self, energy_track):
        x = np.asarray(energy_track, dtype=np.float64)
        return _unit(x - x.mean())

    def video(self, motion_track):
        x = np.asarray(motion_track, dtype=np.float64)
        return _unit(x - x.mean())


@dataclass(frozen=True)
class SyncConfig:
    window_frames: int = 5
    window_count: int = 64
    max_offset: int = 15
    min_offset: int = 2
    margin: float = 1.0
    seed: int = 0
    mouth: MouthRegion = field(default_factory=lambda: MouthRegion(-0.5, 0.2, 0.5, 0.9))
    stft: StftParams = field(default_factory=lambda: StftParams(512, 128))
    mel: MelConfig = field(default_factory=lambda: MelConfig(n_mels=40))


@dataclass(frozen=True)
class SyncReport:
    offset: int
    score: float
    distance: float
    per_offset: dict[int, float]

    def to_dict(self) -> dict:
        return {
            "offset": self.offset,
            "score": self.score,
            "distance": self.distance,
            "per_offset_curve": {str(k): v for k, v in sorted(self.per_offset.items())},
        }


def mouth_motion_track(frames: Sequence[np.ndarray], mouth: MouthRegion) -> np.ndarray:
    """Per-frame mean |mouth_t - mouth_{t-1}|; frame 0 gets 0."""
    mouth.validate()
    h, w = np.asarray(frames[0]).shape[:2]
    mask = mouth.pixel_mask(h, w)
    if not mask.any():
        raise ValueError(f"mouth region {mouth} contains no pixel centres of a {w}x{h} frame")
    crops = np.array([_gray(f)[mask] for f in frames])
    track = np.zeros(len(frames))
    track[1:] = np.abs(np.diff(crops, axis=0)).mean(axis=1)
    return track


def audio_energy_track(audio: AudioClip, fps: float, n_frames: int, config: SyncConfig) -> np.ndarray:
    """Mean mel-band power of the mel frames centred inside each video frame."""
    sp = config.stft
    if len(audio) < sp.fft_size:
        return np.zeros(0)
    mel = mel_spectrogram(audio, sp, config.mel)
    power = np.exp(mel.values).mean(axis=1)
    centres = (np.arange(len(mel)) * sp.hop + sp.fft_size / 2) / audio.sample_rate
    owner = np.floor(centres * fps + 1e-9).astype(int)
    track = np.zeros(n_frames)
    counts = np.zeros(n_frames)
    ok = (owner >= 0) & (owner < n_frames)
    np.add.at(track, owner[ok], power[ok])
    np.add.at(counts, owner[ok], 1)
    covered = counts > 0
    track[covered] /= counts[covered]
    # frames past the end of the audio carry no energy
    last = int(np.floor(len(audio) * fps / audio.sample_rate + 1e-9))
    return track[: min(n_frames, last)]


def sync_score_video(
    frames: Sequence[np.ndarray],
    audio: AudioClip,
    fps: float,
    config: SyncConfig = SyncConfig(),
    extractor: SyncExtractor | None = None,
) -> SyncReport:
    """Estimate the audio lag (in frames) that best explains the mouth motion.

    For every candidate offset in [-max_offset, max_offset] the mean
    embedding distance over the same seeded set of windows is computed; the
    minimum wins, ties going to the smallest |offset| (then the negative one).
    """
    extractor = extractor or TrackExtractor()
    n = len(frames)
    w, k = config.window_frames, config.max_offset
    motion = mouth_motion_track(frames, config.mouth) if n else np.zeros(0)
    energy = audio_energy_track(audio, fps, n + k, config)
    n_audio = energy.shape[0]
    # window start s needs s >= 1 (motion uses the previous frame), s + w <= n,
    # s - k >= 0 and s + k + w <= n_audio for every candidate offset
    lo = max(1, k)
    hi = min(n - w, n_audio - w - k)
    if hi < lo:
        raise ValueError(
            f"media too short: need at least {lo + w + k} frames of audio and "
            f"{lo + w} video frames for max_offset {k}"
        )
    rng = np.random.default_rng(config.seed)
    starts = rng.integers(lo, hi + 1, size=config.window_count)

    video_emb = [extractor.video(motion[s : s + w]) for s in starts]
    per_offset: dict[int, float] = {}
    for off in range(-k, k + 1):
        dists = [
            sync_distance(extractor.audio(energy[s + off : s + off + w]), v)
            for s, v in zip(starts, video_emb)
        ]
        per_offset[off] = float(np.mean(dists))
    best = min(per_offset, key=lambda o: (round(per_offset[o], 12), abs(o), o))
    d = per_offset[best]
    return SyncReport(best, 1.0 / (1.0 + d), d, per_offset)

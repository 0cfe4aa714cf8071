"""Hann-windowed energy gating: silence detection and clipping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clip import AudioClip
from .features import StftParams, frame_signal

POWER_FLOOR = 1e-20  # -200 dBFS; keeps digital silence finite


class SpanBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class SilenceSpan:
    """Run of sub-threshold frames ``[start_frame, end_frame)``.

    ``start_sample``/``end_sample`` give the audio covered by the union of the
    span's analysis windows, extended to the clip end when the span reaches
    the final frame (the unanalysed tail shorter than one hop goes with it).
    """

    start_frame: int
    end_frame: int
    mean_energy: float  # dBFS
    start_sample: int
    end_sample: int

    @property
    def n_samples(self) -> int:
        return self.end_sample - self.start_sample


@dataclass(frozen=True)
class SilencePolicy:
    max_internal_gap: float = 0.5  # seconds
    kept_gap: float = 0.2  # seconds
    trim_edges: bool = True
    shorten_internal: bool = True

    def __post_init__(self):
        if self.kept_gap < 0 or self.max_internal_gap < 0:
            raise ValueError("gap durations must be non-negative")
        if self.kept_gap > self.max_internal_gap:
            raise ValueError("kept_gap must not exceed max_internal_gap")


def frame_power(clip: AudioClip, params: StftParams = StftParams()) -> np.ndarray:
    """Hann-weighted mean-square per frame, normalised so a full-scale sine is ~0.5."""
    w = params.window
    frames = frame_signal(clip.samples, params.fft_size, params.hop)
    return ((frames * w) ** 2).sum(axis=1) / (w ** 2).sum()


def frame_energy_db(clip: AudioClip, params: StftParams = StftParams()) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(frame_power(clip, params), POWER_FLOOR))


def detect_silence(
    clip: AudioClip, params: StftParams = StftParams(), threshold_db: float = -40.0
) -> list[SilenceSpan]:
    power = frame_power(clip, params)
    n_frames = power.shape[0]
    if n_frames == 0:
        return []
    db = 10.0 * np.log10(np.maximum(power, POWER_FLOOR))
    silent = db < threshold_db

    # run boundaries of the boolean mask
    edges = np.diff(np.concatenate([[0], silent.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)

    spans = []
    for s, e in zip(starts, ends):
        mean_db = 10.0 * np.log10(max(power[s:e].mean(), POWER_FLOOR))
        end_sample = len(clip) if e == n_frames else (e - 1) * params.hop + params.fft_size
        spans.append(
            SilenceSpan(int(s), int(e), float(mean_db), int(s * params.hop), int(end_sample))
        )
    return spans


def _check_spans(spans: list[SilenceSpan], n_samples: int) -> None:
    prev_end = 0
    for i, span in enumerate(spans):
        if not (0 <= span.start_sample < span.end_sample <= n_samples):
            raise SpanBoundsError(
                f"span {i} covers samples [{span.start_sample}, {span.end_sample}) "
                f"outside a clip of {n_samples} samples"
            )
        if span.start_sample < prev_end:
            raise SpanBoundsError(f"span {i} overlaps or precedes the previous span")
        prev_end = span.end_sample


def _edge_cut(span: SilenceSpan, n: int, params: StftParams) -> tuple[int, int]:
    """Part of an edge span outside the centre cell of the adjacent loud frame.

    Frame f owns the hop-wide cell centred on its window,
    ``[f*hop + (fft-hop)/2, f*hop + (fft+hop)/2)``.
    """
    start, end = span.start_sample, span.end_sample
    lead = (params.fft_size - params.hop) // 2
    if start == 0 and end < n:
        end = min(end, span.end_frame * params.hop + lead)
    if end == n and start > 0:
        start = max(start, (span.start_frame - 1) * params.hop + lead + params.hop)
    return start, end


def clip_silence(
    clip: AudioClip,
    spans: list[SilenceSpan],
    policy: SilencePolicy = SilencePolicy(),
    params: StftParams = StftParams(),
) -> AudioClip:
    """Drop edge silences and shorten long internal pauses to ``policy.kept_gap``.

    Edge trimming stops at the centre cell of the first (last) non-silent
    frame, so the samples assigned to loud frames are kept sample-exact. A shortened pause keeps the first and last halves of
    ``kept_gap`` so the transition into and out of speech is untouched.
    ``params`` must be the analysis parameters the spans were detected with.
    """
    n = len(clip)
    _check_spans(spans, n)
    if not spans:
        return clip
    sr = clip.sample_rate
    max_gap = int(round(policy.max_internal_gap * sr))
    kept = int(round(policy.kept_gap * sr))

    keep = np.ones(n, dtype=bool)
    for span in spans:
        at_edge = span.start_sample == 0 or span.end_sample == n
        if at_edge:
            if policy.trim_edges:
                a, b = _edge_cut(span, n, params)
                keep[a:b] = False
        elif policy.shorten_internal and span.n_samples > max_gap:
            head = kept // 2
            tail = kept - head
            keep[span.start_sample + head : span.end_sample - tail] = False
    if keep.all():
        return clip
    return clip.with_samples(clip.samples[keep])

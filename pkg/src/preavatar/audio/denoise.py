"""Stationary spectral gating with an overlap-add resynthesis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve

from .clip import AudioClip
from .features import StftParams, frame_signal

log = logging.getLogger(__name__)

_TINY = 1e-12


@dataclass(frozen=True)
class NoiseGateParams:
    k: float = 1.5  # threshold = noise mean + k * noise std, per bin, in dB
    time_smoothing: int = 4  # frames on each side of the mask smoothing kernel
    freq_smoothing: int = 4  # bins on each side
    mask_floor: float = 0.02
    threshold_floor_db: float = -80.0
    # self-estimated profiles whose quietest decile sits less than this far
    # below the 90th-percentile frame are degenerate (no noise-only frames)
    min_contrast_db: float = 6.0
    min_frames: int = 10
    stft: StftParams = field(default_factory=StftParams)

    def __post_init__(self):
        if not 0.0 <= self.mask_floor <= 1.0:
            raise ValueError("mask_floor must be in [0, 1]")
        if self.time_smoothing < 0 or self.freq_smoothing < 0:
            raise ValueError("smoothing widths must be non-negative")


def _analysis(x: np.ndarray, params: StftParams) -> np.ndarray:
    """Complex STFT with half-window zero padding so every sample is covered."""
    n, hop = params.fft_size, params.hop
    n_frames = 1 + -(-x.shape[0] // hop)
    total = (n_frames - 1) * hop + n
    padded = np.zeros(total)
    padded[n // 2 : n // 2 + x.shape[0]] = x
    return np.fft.rfft(frame_signal(padded, n, hop) * params.window, axis=1)


def _synthesis(spec: np.ndarray, params: StftParams, length: int) -> np.ndarray:
    n, hop = params.fft_size, params.hop
    w = params.window
    frames = np.fft.irfft(spec, n=n, axis=1) * w
    total = (spec.shape[0] - 1) * hop + n
    out = np.zeros(total)
    norm = np.zeros(total)
    for i, frame in enumerate(frames):
        out[i * hop : i * hop + n] += frame
        norm[i * hop : i * hop + n] += w ** 2
    out = np.divide(out, norm, out=np.zeros_like(out), where=norm > 1e-8 * norm.max())
    return out[n // 2 : n // 2 + length]


def _to_db(mag: np.ndarray, params: StftParams) -> np.ndarray:
    # full-scale sine peaks at ~0 dB
    scale = 2.0 / params.window.sum()
    return 20.0 * np.log10(mag * scale + _TINY)


def _smoothing_kernel(time_half: int, freq_half: int) -> np.ndarray:
    t = np.bartlett(2 * time_half + 3)[1:-1]
    f = np.bartlett(2 * freq_half + 3)[1:-1]
    kernel = np.outer(t, f)
    return kernel / kernel.sum()


def gate_thresholds(
    clip: AudioClip, noise_profile: AudioClip | None, params: NoiseGateParams
) -> np.ndarray:
    """Per-bin gate threshold in dB."""
    n_bins = params.stft.n_bins
    floor = np.full(n_bins, params.threshold_floor_db)

    if noise_profile is not None:
        if noise_profile.sample_rate != clip.sample_rate:
            raise ValueError("noise_profile sample rate differs from clip")
        if not np.any(noise_profile.samples):
            log.debug("all-zero noise profile, using threshold floor")
            return floor
        noise_db = _to_db(np.abs(_analysis(noise_profile.samples, params.stft)), params.stft)
    else:
        spec = _analysis(clip.samples, params.stft)
        energy = (np.abs(spec) ** 2).sum(axis=1)
        n_sel = max(1, int(np.ceil(0.1 * energy.shape[0])))
        quiet = np.argsort(energy, kind="stable")[:n_sel]
        quiet_energy = energy[quiet].mean()
        contrast_db = 10.0 * np.log10((np.percentile(energy, 90) + _TINY) / (quiet_energy + _TINY))
        if quiet_energy <= 0.0 or contrast_db < params.min_contrast_db:
            log.debug("no noise-only frames found (contrast %.1f dB), using floor", contrast_db)
            return floor
        noise_db = _to_db(np.abs(spec[quiet]), params.stft)

    thresh = noise_db.mean(axis=0) + params.k * noise_db.std(axis=0)
    return np.maximum(thresh, floor)


def reduce_noise(
    clip: AudioClip,
    noise_profile: AudioClip | None = None,
    params: NoiseGateParams = NoiseGateParams(),
) -> AudioClip:
    """Suppress stationary noise by soft-masking bins below a per-bin gate.

    Without ``noise_profile`` the gate statistics come from the quietest 10%
    of the clip's own frames. Output length equals input length.
    """
    sp = params.stft
    if noise_profile is None and 1 + -(-len(clip) // sp.hop) < params.min_frames:
        raise ValueError(
            f"clip too short to self-estimate a noise profile "
            f"(needs >= {params.min_frames} frames of hop {sp.hop})"
        )
    if len(clip) == 0 or not np.any(clip.samples):
        return clip

    thresh = gate_thresholds(clip, noise_profile, params)
    spec = _analysis(clip.samples, sp)
    signal_db = _to_db(np.abs(spec), sp)

    raw = (signal_db > thresh[None, :]).astype(np.float64)
    smooth = convolve(raw, _smoothing_kernel(params.time_smoothing, params.freq_smoothing), mode="nearest")
    mask = params.mask_floor + (1.0 - params.mask_floor) * np.clip(smooth, 0.0, 1.0)

    y = _synthesis(spec * mask, sp, len(clip))
    return clip.with_samples(np.clip(y, -1.0, 1.0))

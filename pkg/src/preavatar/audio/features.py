"""Short-time analysis shared by the rest of the package: STFT, log-mel, MFCC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct, idct
from scipy.signal import get_window

from .clip import AudioClip


@dataclass(frozen=True)
class StftParams:
    fft_size: int = 2048
    hop: int = 512

    def __post_init__(self):
        n = self.fft_size
        if n < 64 or n & (n - 1):
            raise ValueError(f"fft_size must be a power of two >= 64, got {n}")
        if not 0 < self.hop <= n:
            raise ValueError(f"hop must be in (0, fft_size], got {self.hop}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def window(self) -> np.ndarray:
        # periodic Hann: overlap-adds to a constant at hop = fft_size/4
        return get_window("hann", self.fft_size, fftbins=True)

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.fft_size:
            return 0
        return 1 + (n_samples - self.fft_size) // self.hop


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # frames x bins
    params: StftParams
    sample_rate: int

    @property
    def power(self) -> np.ndarray:
        return self.magnitudes ** 2

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.params.n_bins) * self.sample_rate / self.params.fft_size


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float | None = None  # None means Nyquist
    epsilon: float = 1e-10

    def resolved_f_max(self, sample_rate: int) -> float:
        return sample_rate / 2 if self.f_max is None else float(self.f_max)

    def validate(self, sample_rate: int) -> None:
        f_max = self.resolved_f_max(sample_rate)
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if f_max > sample_rate / 2:
            raise ValueError(f"f_max {f_max} Hz exceeds Nyquist {sample_rate / 2} Hz")
        if not self.f_min < f_max:
            raise ValueError(f"f_min {self.f_min} must be below f_max {f_max}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # frames x n_mels, natural-log energies
    config: MelConfig
    params: StftParams
    sample_rate: int = 22050

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CepstraSequence:
    values: np.ndarray  # frames x D, c0 first

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if not np.all(np.isfinite(v)):
            raise ValueError("cepstra must be finite")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]


def frame_signal(x: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    """Return a (frames, fft_size) view of ``x`` without padding."""
    if x.shape[0] < fft_size:
        return np.empty((0, fft_size))
    return sliding_window_view(x, fft_size)[::hop]


def stft(clip: AudioClip, params: StftParams = StftParams()) -> Spectrogram:
    """Magnitude STFT with a Hann analysis window and no edge padding."""
    if len(clip) < params.fft_size:
        raise ValueError(
            f"clip of {len(clip)} samples is shorter than fft_size {params.fft_size}"
        )
    frames = frame_signal(clip.samples, params.fft_size, params.hop) * params.window
    return Spectrogram(np.abs(np.fft.rfft(frames, axis=1)), params, clip.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, fft_size: int, config: MelConfig = MelConfig()) -> np.ndarray:
    """Triangular filters (peak 1) on the HTK mel scale, shape (n_mels, bins).

    Raises if any filter falls between FFT bins and ends up with no weight.
    """
    config.validate(sample_rate)
    f_max = config.resolved_f_max(sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(config.f_min), hz_to_mel(f_max), config.n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(bank.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(
            f"mel bands {empty.tolist()} cover no FFT bin; reduce n_mels or raise fft_size"
        )
    return bank


def mel_center_frequencies(sample_rate: int, config: MelConfig = MelConfig()) -> np.ndarray:
    f_max = config.resolved_f_max(sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(config.f_min), hz_to_mel(f_max), config.n_mels + 2))
    return edges[1:-1]


def log_mel(spec: Spectrogram, config: MelConfig = MelConfig()) -> MelSpectrogram:
    bank = mel_filterbank(spec.sample_rate, spec.params.fft_size, config)
    energies = spec.power @ bank.T
    return MelSpectrogram(
        np.log(np.maximum(energies, config.epsilon)), config, spec.params, spec.sample_rate
    )


def mel_spectrogram(
    clip: AudioClip,
    stft_params: StftParams = StftParams(),
    mel_config: MelConfig = MelConfig(),
) -> MelSpectrogram:
    mel_config.validate(clip.sample_rate)
    return log_mel(stft(clip, stft_params), mel_config)


def cepstra_from_mel(mel: MelSpectrogram | np.ndarray, n_coeffs: int = 13) -> CepstraSequence:
    values = mel.values if isinstance(mel, MelSpectrogram) else np.atleast_2d(mel)
    if not 1 <= n_coeffs <= values.shape[1]:
        raise ValueError(f"n_coeffs must be in [1, n_mels={values.shape[1]}], got {n_coeffs}")
    return CepstraSequence(dct(values, type=2, norm="ortho", axis=1)[:, :n_coeffs])


def mfcc(
    clip: AudioClip,
    stft_params: StftParams = StftParams(),
    mel_config: MelConfig = MelConfig(),
    n_coeffs: int = 13,
) -> CepstraSequence:
    """Orthonormal DCT-II of log-mel frames, keeping c0..c_{n_coeffs-1}."""
    if n_coeffs > mel_config.n_mels:
        raise ValueError(f"n_coeffs {n_coeffs} exceeds n_mels {mel_config.n_mels}")
    return cepstra_from_mel(mel_spectrogram(clip, stft_params, mel_config), n_coeffs)


def mel_from_cepstra(cepstra: CepstraSequence, n_mels: int) -> np.ndarray:
    """Inverse DCT; exact up to truncation when ``cepstra.dim == n_mels``."""
    padded = np.zeros((len(cepstra), n_mels))
    padded[:, : cepstra.dim] = cepstra.values
    return idct(padded, type=2, norm="ortho", axis=1)


__all__ = [
    "StftParams",
    "Spectrogram",
    "MelConfig",
    "MelSpectrogram",
    "CepstraSequence",
    "frame_signal",
    "stft",
    "mel_filterbank",
    "mel_center_frequencies",
    "log_mel",
    "mel_spectrogram",
    "mfcc",
    "cepstra_from_mel",
    "mel_from_cepstra",
    "hz_to_mel",
    "mel_to_hz",
]

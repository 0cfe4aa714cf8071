"""Mono audio buffers and WAV I/O."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AudioClip:
    """Immutable mono sample buffer.

    Samples are stored as float64 in [-1, 1]; out-of-range input is clipped
    on construction and non-finite input is rejected.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"AudioClip expects mono samples, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("AudioClip samples must be finite")
        x = np.clip(x, -1.0, 1.0)
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)

    @classmethod
    def silence(cls, seconds: float, sample_rate: int) -> "AudioClip":
        return cls(np.zeros(int(round(seconds * sample_rate))), sample_rate)


def read_wav(path: str | Path) -> AudioClip:
    """Read a PCM-16, PCM-32, uint8 or float WAV; stereo is averaged to mono."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}")
    if x.ndim == 2:
        if x.shape[1] > 1:
            log.debug("downmixing %d channels in %s", x.shape[1], path)
        x = x.mean(axis=1)
    return AudioClip(x, rate)


def write_wav(path: str | Path, clip: AudioClip, fmt: str = "pcm16") -> Path:
    """Write ``clip`` as mono WAV, ``fmt`` is ``"pcm16"`` or ``"float32"``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "pcm16":
        data = np.round(clip.samples * 32767.0).astype(np.int16)
    elif fmt == "float32":
        data = clip.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(str(path), clip.sample_rate, data)
    return path

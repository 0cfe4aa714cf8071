"""Signal-level preparation: resampling, silence clipping, noise gating, features."""

from .clip import AudioClip, read_wav, write_wav
from .denoise import NoiseGateParams, reduce_noise
from .features import (
    CepstraSequence,
    MelConfig,
    MelSpectrogram,
    Spectrogram,
    StftParams,
    cepstra_from_mel,
    log_mel,
    mel_filterbank,
    mel_from_cepstra,
    mel_spectrogram,
    mfcc,
    stft,
)
from .resample import resample
from .silence import (
    SilencePolicy,
    SilenceSpan,
    SpanBoundsError,
    clip_silence,
    detect_silence,
    frame_energy_db,
)

__all__ = [
    "AudioClip",
    "read_wav",
    "write_wav",
    "NoiseGateParams",
    "reduce_noise",
    "CepstraSequence",
    "MelConfig",
    "MelSpectrogram",
    "Spectrogram",
    "StftParams",
    "cepstra_from_mel",
    "log_mel",
    "mel_filterbank",
    "mel_from_cepstra",
    "mel_spectrogram",
    "mfcc",
    "stft",
    "resample",
    "SilencePolicy",
    "SilenceSpan",
    "SpanBoundsError",
    "clip_silence",
    "detect_silence",
    "frame_energy_db",
]

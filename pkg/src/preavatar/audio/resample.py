"""Band-limited sample-rate conversion."""

from __future__ import annotations

from math import gcd

import numpy as np
from scipy.signal import resample_poly

from .clip import AudioClip

KAISER_BETA = 8.0
# scipy's default polyphase half-length is 10 taps per phase of the slower rate;
# pad at least that many input samples so edge transients stay outside the clip
_PAD_TAPS = 10


def _odd_extend(x: np.ndarray, n: int) -> np.ndarray:
    head = 2.0 * x[0] - x[n:0:-1]
    tail = 2.0 * x[-1] - x[-2 : -n - 2 : -1]
    return np.concatenate([head, x, tail])


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Kaiser-windowed sinc polyphase resampling to ``target_rate``.

    Output length is ``ceil(len * target / source)``. An identical rate returns
    the input clip untouched.
    """
    if int(target_rate) != target_rate or target_rate <= 0:
        raise ValueError(f"target_rate must be a positive integer, got {target_rate!r}")
    target_rate = int(target_rate)
    if target_rate == clip.sample_rate:
        return clip
    n = len(clip)
    if n == 0:
        return AudioClip(np.zeros(0), target_rate)

    g = gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    out_len = -(-n * up // down)
    window = ("kaiser", KAISER_BETA)

    # odd reflection keeps the signal and its slope continuous at the edges;
    # pad length is a multiple of `down` so the trim offset is an exact integer
    pad = down * -(-_PAD_TAPS * max(up, down) // down)
    if n > pad + 1:
        y = resample_poly(_odd_extend(clip.samples, pad), up, down, window=window)
        start = pad * up // down
        y = y[start : start + out_len]
    else:
        y = resample_poly(clip.samples, up, down, window=window)[:out_len]
    return AudioClip(np.clip(y, -1.0, 1.0), target_rate)

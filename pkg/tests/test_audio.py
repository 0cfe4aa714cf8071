import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from preavatar.audio import (
    AudioClip,
    MelConfig,
    NoiseGateParams,
    SilencePolicy,
    SpanBoundsError,
    StftParams,
    cepstra_from_mel,
    clip_silence,
    detect_silence,
    frame_energy_db,
    mel_filterbank,
    mel_from_cepstra,
    mel_spectrogram,
    mfcc,
    read_wav,
    reduce_noise,
    resample,
    stft,
    write_wav,
)
from preavatar.audio.features import hz_to_mel, mel_center_frequencies, mel_to_hz
from preavatar.audio.silence import SilenceSpan


def sine(freq, seconds, rate, amp=1.0, phase=0.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t + phase)


# -- AudioClip / WAV --


def test_clip_clips_and_rejects_nonfinite():
    c = AudioClip(np.array([2.0, -3.0, 0.5]), 8000)
    assert c.samples.tolist() == [1.0, -1.0, 0.5]
    with pytest.raises(ValueError):
        AudioClip(np.array([np.nan]), 8000)
    with pytest.raises(ValueError):
        AudioClip(np.zeros(3), 0)


def test_wav_roundtrip_float_and_pcm(tmp_path):
    x = sine(300, 0.1, 16000, 0.5)
    c = AudioClip(x, 16000)
    f = read_wav(write_wav(tmp_path / "f.wav", c, fmt="float32"))
    p = read_wav(write_wav(tmp_path / "p.wav", c))
    assert f.sample_rate == p.sample_rate == 16000
    np.testing.assert_allclose(f.samples, x, atol=1e-7)
    np.testing.assert_allclose(p.samples, x, atol=1.0 / 32767)


def test_stereo_is_downmixed(tmp_path):
    from scipy.io import wavfile

    data = np.stack([np.full(100, 0.5), np.full(100, -0.1)], axis=1).astype(np.float32)
    wavfile.write(tmp_path / "s.wav", 8000, data)
    c = read_wav(tmp_path / "s.wav")
    np.testing.assert_allclose(c.samples, 0.2, atol=1e-7)


# -- resampling --


def test_resample_identity_is_bit_exact():
    x = np.random.default_rng(0).uniform(-1, 1, 22050)
    c = AudioClip(x, 22050)
    out = resample(c, 22050)
    assert np.array_equal(out.samples, c.samples)


def test_resample_440_halfband_snr():
    src = AudioClip(sine(440, 1.0, 44100), 44100)
    out = resample(src, 22050)
    ideal = sine(440, 1.0, 22050)
    assert out.sample_rate == 22050 and len(out) == len(ideal)
    err = out.samples - ideal
    snr = 10 * np.log10(np.sum(ideal**2) / np.sum(err**2))
    assert snr >= 40


def test_resample_zero_and_empty():
    out = resample(AudioClip(np.zeros(16000), 16000), 22050)
    assert abs(len(out) - 22050) <= 1 and not out.samples.any()
    assert len(resample(AudioClip(np.zeros(0), 16000), 22050)) == 0


@settings(max_examples=25, deadline=None)
@given(
    rate=st.sampled_from([8000, 16000, 22050, 44100]),
    target=st.sampled_from([8000, 11025, 16000, 22050, 24000, 48000]),
    n=st.integers(0, 3000),
)
def test_resample_duration_within_one_sample(rate, target, n):
    out = resample(AudioClip(np.zeros(n), rate), target)
    assert abs(len(out) - n * target / rate) <= 1


@settings(max_examples=15, deadline=None)
@given(freq=st.floats(50, 3900), rate=st.sampled_from([16000, 22050]))
def test_resample_roundtrip_correlation(freq, rate):
    x = sine(freq, 0.25, rate, 0.8, 0.3)
    up = resample(AudioClip(x, rate), 2 * rate)
    back = resample(up, rate)
    r = np.corrcoef(back.samples[: len(x)], x)[0, 1]
    assert r >= 0.99


# -- STFT / mel / MFCC --


def naive_stft(x, n, hop):
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)  # periodic Hann
    k = np.arange(n // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * np.arange(n)[None, :] / n)
    frames = [x[s : s + n] * w for s in range(0, len(x) - n + 1, hop)]
    return np.abs(np.array([basis @ f for f in frames]))


def test_stft_matches_direct_dft():
    x = np.random.default_rng(1).uniform(-1, 1, 1000)
    p = StftParams(128, 48)
    spec = stft(AudioClip(x, 8000), p)
    assert spec.magnitudes.shape == (1 + (1000 - 128) // 48, 65)
    np.testing.assert_allclose(spec.magnitudes, naive_stft(x, 128, 48), atol=1e-9)


def test_stft_params_and_short_input():
    with pytest.raises(ValueError):
        StftParams(100, 10)
    with pytest.raises(ValueError):
        StftParams(64, 65)
    with pytest.raises(ValueError):
        stft(AudioClip(np.zeros(10), 8000), StftParams(64, 16))


def test_stft_impulse_and_bin_sine():
    p = StftParams(256, 64)
    x = np.zeros(256)
    x[128] = 1.0  # frame centre, where the Hann window is 1
    mag = stft(AudioClip(x, 8000), p).magnitudes[0]
    np.testing.assert_allclose(mag, mag[0], rtol=1e-6)
    k = 10
    s = np.sin(2 * np.pi * k * np.arange(1024) / 256)
    frame_power = stft(AudioClip(s, 8000), p).power[0]
    # Hann main lobe spans bins k-1..k+1 with power ratios 1/16 : 1/4 : 1/16
    assert int(np.argmax(frame_power)) == k
    assert frame_power[k] / frame_power.sum() == pytest.approx(2 / 3, rel=1e-9)
    assert frame_power[k - 1 : k + 2].sum() / frame_power.sum() >= 0.9


def test_stft_parseval_per_frame():
    x = np.random.default_rng(2).uniform(-1, 1, 4096)
    p = StftParams(512, 128)
    spec = stft(AudioClip(x, 8000), p)
    w = p.window
    for i in range(spec.magnitudes.shape[0]):
        frame = x[i * 128 : i * 128 + 512] * w
        time_power = np.sum(frame**2)
        one_sided = spec.power[i]
        freq_power = (one_sided[0] + one_sided[-1] + 2 * one_sided[1:-1].sum()) / 512
        assert abs(freq_power - time_power) <= 0.01 * time_power


def test_htk_mel_scale():
    assert hz_to_mel(0.0) == 0.0
    assert hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2))
    assert hz_to_mel(1000.0) == pytest.approx(999.9855, abs=1e-3)
    f = np.linspace(0, 11025, 57)
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-8)


def test_mel_filterbank_every_band_has_weight():
    fb = mel_filterbank(22050, 1024, MelConfig(80))
    assert fb.shape == (80, 513)
    assert np.all(fb.sum(axis=1) > 0) and np.all(fb >= 0)


def test_mel_rejects_fmax_above_nyquist():
    with pytest.raises(ValueError):
        mel_spectrogram(AudioClip(np.zeros(4096), 16000), StftParams(1024, 256), MelConfig(40, f_max=9000))


def test_mel_zero_clip_is_log_epsilon():
    cfg = MelConfig(40, epsilon=1e-10)
    mel = mel_spectrogram(AudioClip(np.zeros(4096), 16000), StftParams(512, 128), cfg)
    np.testing.assert_array_equal(mel.values, np.log(1e-10))


def test_sine_at_band_centre_peaks_in_that_band():
    rate, cfg, p = 16000, MelConfig(40), StftParams(1024, 256)
    centres = mel_center_frequencies(rate, cfg)
    for m in (5, 17, 30):
        mel = mel_spectrogram(AudioClip(sine(centres[m], 0.5, rate, 0.5), rate), p, cfg)
        assert np.all(np.argmax(mel.values, axis=1) == m)


def dct2_ortho(v):
    n = len(v)
    k = np.arange(n)[:, None]
    basis = np.cos(np.pi * k * (2 * np.arange(n)[None, :] + 1) / (2 * n))
    scale = np.full(n, math.sqrt(2.0 / n))
    scale[0] = math.sqrt(1.0 / n)
    return scale * (basis @ v)


def test_cepstra_match_explicit_dct():
    rng = np.random.default_rng(3)
    logmel = rng.normal(size=(4, 20))
    c = cepstra_from_mel(logmel, 13).values
    for row, ref in zip(c, logmel):
        np.testing.assert_allclose(row, dct2_ortho(ref)[:13], atol=1e-12)
    e0 = np.zeros((1, 8))
    e0[0, 0] = 1.0
    col = cepstra_from_mel(e0, 8).values[0]
    np.testing.assert_allclose(col, dct2_ortho(e0[0]), atol=1e-12)


def test_mfcc_zero_clip_constant_cepstrum():
    cfg = MelConfig(40)
    c = mfcc(AudioClip(np.zeros(4096), 16000), StftParams(512, 128), cfg, 13).values
    np.testing.assert_allclose(c[:, 0], math.sqrt(40) * math.log(cfg.epsilon))
    np.testing.assert_allclose(c[:, 1:], 0.0, atol=1e-9)


def test_mfcc_full_length_inverts_to_log_mel():
    x = np.random.default_rng(4).uniform(-0.5, 0.5, 8000)
    cfg = MelConfig(32)
    p = StftParams(512, 128)
    mel = mel_spectrogram(AudioClip(x, 16000), p, cfg)
    back = mel_from_cepstra(cepstra_from_mel(mel, 32), 32)
    np.testing.assert_allclose(back, mel.values, atol=1e-6)


# -- silence --

HOP = 512
RATE = 22050


def sine_gap_sine(gap_s, rate=RATE):
    s = sine(440, 1.0, rate, 0.8)
    return np.concatenate([s, np.zeros(int(round(gap_s * rate))), s])


def test_silence_zero_and_full_scale():
    zero = AudioClip(np.zeros(2 * RATE), RATE)
    spans = detect_silence(zero)
    n_frames = StftParams().n_frames(len(zero))
    assert len(spans) == 1 and (spans[0].start_frame, spans[0].end_frame) == (0, n_frames)
    assert detect_silence(AudioClip(sine(440, 2.0, RATE), RATE), threshold_db=-40) == []
    assert detect_silence(AudioClip(np.zeros(100), RATE)) == []


def test_silence_middle_second_within_two_hops():
    x = sine_gap_sine(1.0)
    spans = detect_silence(AudioClip(x, RATE))
    assert len(spans) == 1
    sp = spans[0]
    assert abs(sp.start_sample - RATE) <= 2 * HOP
    assert abs(sp.end_sample - 2 * RATE) <= 2 * HOP
    # direct frame-energy oracle for the span frames
    p = StftParams()
    w = p.window
    for f in (sp.start_frame, sp.end_frame - 1):
        frame = x[f * HOP : f * HOP + p.fft_size] * w
        db = 10 * np.log10(max(np.sum(frame**2) / np.sum(w**2), 1e-20))
        assert db < -40
    assert sp.mean_energy < -40


def test_clip_silence_internal_gap_length():
    x = sine_gap_sine(2.0)
    clip = AudioClip(x, RATE)
    out = clip_silence(clip, detect_silence(clip), SilencePolicy(0.5, 0.2))
    expected = len(x) - (2.0 - 0.2) * RATE
    assert abs(len(out) - expected) <= 2 * HOP


def test_clip_silence_identity_and_all_silent():
    clip = AudioClip(sine(300, 0.5, RATE), RATE)
    assert np.array_equal(clip_silence(clip, []).samples, clip.samples)
    zero = AudioClip(np.zeros(RATE), RATE)
    assert len(clip_silence(zero, detect_silence(zero))) == 0


def test_clip_silence_preserves_speech_samples():
    x = np.concatenate([np.zeros(RATE), sine(440, 1.0, RATE, 0.8), np.zeros(RATE)])
    out = clip_silence(AudioClip(x, RATE), detect_silence(AudioClip(x, RATE))).samples
    # the retained region is a contiguous, unmodified slice of the input
    start = int(np.flatnonzero(np.isin(x, out[:1]))[0]) if out.size else 0
    for s in range(len(x) - len(out) + 1):
        if np.array_equal(x[s : s + len(out)], out):
            break
    else:
        pytest.fail(f"output is not a slice of the input (guess {start})")
    assert np.count_nonzero(out) >= np.count_nonzero(x) - 1


def test_clip_silence_rejects_bad_spans():
    clip = AudioClip(np.zeros(1000), RATE)
    bad = SilenceSpan(0, 2, -100.0, 0, 5000)
    with pytest.raises(SpanBoundsError):
        clip_silence(clip, [bad])


@settings(max_examples=30, deadline=None)
@given(
    parts=st.lists(st.tuples(st.booleans(), st.floats(0.05, 1.2)), min_size=1, max_size=5),
    seed=st.integers(0, 100),
)
def test_clip_silence_idempotent(parts, seed):
    rng = np.random.default_rng(seed)
    x = np.concatenate(
        [sine(rng.uniform(200, 900), d, RATE, 0.6) if loud else np.zeros(int(d * RATE)) for loud, d in parts]
    )
    clip = AudioClip(x, RATE)
    policy = SilencePolicy()
    once = clip_silence(clip, detect_silence(clip), policy)
    twice = clip_silence(once, detect_silence(once), policy)
    assert np.array_equal(once.samples, twice.samples)


def test_frame_energy_of_full_scale_sine_is_minus_3db():
    db = frame_energy_db(AudioClip(sine(441, 1.0, RATE), RATE))
    np.testing.assert_allclose(db, -3.01, atol=0.05)


# -- noise reduction --


def test_reduce_noise_keeps_pure_sine():
    x = sine(440, 1.0, RATE, 0.5)
    out = reduce_noise(AudioClip(x, RATE))
    assert len(out) == len(x)
    assert np.corrcoef(out.samples, x)[0, 1] >= 0.99


def test_reduce_noise_white_noise_matched_profile():
    rng = np.random.default_rng(5)
    amp = 10 ** (-30 / 20)
    noise = AudioClip(amp * rng.standard_normal(RATE), RATE)
    profile = AudioClip(amp * rng.standard_normal(RATE), RATE)
    out = reduce_noise(noise, profile)
    rms = lambda v: np.sqrt(np.mean(v**2))  # noqa: E731
    assert 20 * np.log10(rms(noise.samples) / rms(out.samples)) >= 10


def test_reduce_noise_zero_in_zero_out():
    z = AudioClip(np.zeros(RATE), RATE)
    assert not reduce_noise(z).samples.any()
    assert not reduce_noise(z, AudioClip(np.zeros(4096), RATE)).samples.any()


def test_reduce_noise_degenerate_profile_uses_floor():
    x = sine(440, 0.5, RATE, 0.5)
    out = reduce_noise(AudioClip(x, RATE), AudioClip(np.zeros(4096), RATE))
    assert np.all(np.isfinite(out.samples))
    assert np.corrcoef(out.samples, x)[0, 1] >= 0.99


def test_reduce_noise_needs_frames_without_profile():
    with pytest.raises(ValueError):
        reduce_noise(AudioClip(np.zeros(3000) + 0.1, RATE))


def test_reduce_noise_bin_energy_non_increasing():
    rng = np.random.default_rng(6)
    amp = 0.02
    x = amp * rng.standard_normal(RATE) + sine(1000, 1.0, RATE, 0.3)
    profile = AudioClip(amp * rng.standard_normal(RATE), RATE)
    out = reduce_noise(AudioClip(x, RATE), profile)
    p = StftParams()
    before = stft(AudioClip(x, RATE), p).power.sum(axis=0)
    after = stft(out, p).power.sum(axis=0)
    assert np.all(after <= before * 1.05)


def test_noise_gate_params_validation():
    with pytest.raises(ValueError):
        NoiseGateParams(mask_floor=1.5)

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from synthetic import FPS, constant_pair, correlated_pair

from preavatar.audio import AudioClip
from preavatar.lipsync import (
    MouthRegion,
    SyncConfig,
    TrackExtractor,
    audio_embed,
    frames_to_samples,
    mask_mouth,
    max_margin_loss,
    reconstruction_loss,
    sample_windows,
    sync_distance,
    sync_score_video,
    video_embed,
)

FULL = MouthRegion(-1, -1, 1, 1)
LEFT = MouthRegion(-1, -1, 0, 1)


# -- windows --


def test_window_audio_range():
    assert frames_to_samples(10, 25, 16000) == 6400
    assert frames_to_samples(15, 25, 16000) == 9600
    ws = sample_windows(100, 25, 64000, 16000, count=40, seed=3)
    for w in ws:
        assert w.audio_start == frames_to_samples(w.frame_start + w.offset, 25, 16000)
        assert w.audio_stop - w.audio_start == 3200
    starting_at_10 = [w for w in ws if w.synchronized and w.frame_start == 10]
    for w in starting_at_10:
        assert (w.audio_start, w.audio_stop) == (6400, 9600)


def test_window_sampling_contract():
    assert sample_windows(100, 25, 64000, 16000, count=0) == []
    a = sample_windows(100, 25, 64000, 16000, count=20, seed=5)
    assert a == sample_windows(100, 25, 64000, 16000, count=20, seed=5)
    assert sum(w.synchronized for w in a) == 10
    for w in a:
        assert 0 <= w.frame_start and w.frame_stop <= 100
        assert 0 <= w.audio_start and w.audio_stop <= 64000
        if not w.synchronized:
            assert 2 <= abs(w.offset) <= 15
    with pytest.raises(ValueError, match="too short"):
        sample_windows(3, 25, 64000, 16000, count=2)


# -- embeddings --


def test_audio_embed_hand_case():
    window = np.array([[1.0, 2.0], [3.0, 2.0]])  # 2 frames x 2 bands
    raw = np.array([2.0, 2.0, 1.0, 0.0])  # means then variances
    assert np.allclose(audio_embed(window), raw / 3.0)
    flat = audio_embed(np.full((4, 3), 0.7))
    assert np.all(flat[3:] == 0) and np.linalg.norm(flat) == pytest.approx(1.0)
    assert np.array_equal(audio_embed(window), audio_embed(window.copy()))
    assert np.all(audio_embed(np.zeros((3, 2))) == 0)


def test_video_embed_cases():
    black, white = np.zeros((8, 8, 3)), np.ones((8, 8, 3))
    e = video_embed([black, white], FULL)
    raw = np.array([0.0, 1.0, 1.0])  # two means and one |diff| of 1.0
    assert np.allclose(e, raw / np.linalg.norm(raw))
    same = video_embed([white, white, white], FULL)
    assert np.all(same[3:] == 0)
    with pytest.raises(ValueError):
        video_embed([black], MouthRegion(0.1, 0.1, 0.12, 0.12))
    with pytest.raises(ValueError):
        video_embed([black], MouthRegion(-2, 0, 0, 1))


def test_sync_distance_cases():
    assert sync_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(math.sqrt(2), rel=1e-15)
    assert sync_distance([0.3, 0.4], [0.3, 0.4]) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.normal(size=7), rng.normal(size=7)
        assert sync_distance(a, b) == pytest.approx(math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))))
    with pytest.raises(ValueError):
        sync_distance([1.0], [1.0, 2.0])


# -- losses --


def test_margin_loss_cases():
    assert max_margin_loss([(0.5, "sync"), (0.2, 3)], 1.0) == 0.445
    assert max_margin_loss([(0.0, 0), (0.0, True)]) == 0.0
    assert max_margin_loss([(1.0, 4), (2.5, -3)], margin=1.0) == 0.0
    with pytest.raises(ValueError):
        max_margin_loss([(0.1, 0)], margin=0)


@given(d1=st.floats(0, 5), d2=st.floats(0, 5), margin=st.floats(0.1, 3))
def test_margin_loss_monotone(d1, d2, margin):
    lo, hi = sorted((d1, d2))
    assert max_margin_loss([(lo, "sync")], margin) <= max_margin_loss([(hi, "sync")], margin)
    assert max_margin_loss([(lo, 5)], margin) >= max_margin_loss([(hi, 5)], margin) >= 0


def test_mask_cases():
    ones = np.ones((10, 10, 3))
    assert np.all(mask_mouth(ones, FULL) == 0)
    assert np.array_equal(mask_mouth(ones, MouthRegion(2, 2, 3, 3)), ones)
    half = MouthRegion(-1, -1, -0.01, 1)
    assert mask_mouth(ones, half).mean() == pytest.approx(0.5)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), x0=st.floats(-1, 0.5), y0=st.floats(-1, 0.5))
def test_mask_idempotent(seed, x0, y0):
    frame = np.random.default_rng(seed).random((9, 7, 3))
    m = MouthRegion(x0, y0, x0 + 0.5, y0 + 0.5)
    once = mask_mouth(frame, m)
    assert np.array_equal(mask_mouth(once, m), once)
    assert np.array_equal(once[~m.pixel_mask(9, 7)], frame[~m.pixel_mask(9, 7)])


def test_reconstruction_loss_cases():
    zeros, ones = np.zeros((2, 4, 4, 3)), np.ones((2, 4, 4, 3))
    assert reconstruction_loss(zeros, zeros, LEFT) == 0.0
    assert reconstruction_loss(zeros, ones, LEFT, mouth_weight=1) == 1.0
    # error only in the left half (the mouth) -> 2*8 / (2*8 + 8) per frame
    half = zeros.copy()
    half[:, :, :2] = 1.0
    assert reconstruction_loss(half, zeros, LEFT, mouth_weight=2) == pytest.approx(16 / 24)
    with pytest.raises(ValueError):
        reconstruction_loss(zeros, ones[:1], LEFT)
    with pytest.raises(ValueError):
        reconstruction_loss(zeros, zeros, LEFT, mouth_weight=0.5)


# -- video-level sync --


@pytest.mark.parametrize("offset", [0, 3, -4])
def test_sync_recovers_offset(offset):
    frames, audio = correlated_pair(offset)
    report = sync_score_video(frames, audio, FPS, SyncConfig())
    assert report.offset == offset
    assert 0 < report.score <= 1 and report.score == pytest.approx(1 / (1 + report.distance))
    assert set(report.per_offset) == set(range(-15, 16))


def test_sync_constant_media_ties_to_zero():
    frames, audio = constant_pair()
    assert sync_score_video(frames, audio, FPS).offset == 0


def test_sync_rgb_frames_and_report_json():
    frames, audio = correlated_pair(2)
    rgb = [np.repeat(f[:, :, None], 3, axis=2) for f in frames]
    report = sync_score_video(rgb, audio, FPS)
    assert report.offset == 2
    d = json.loads(json.dumps(report.to_dict()))
    assert set(d) == {"offset", "score", "distance", "per_offset_curve"}


def test_sync_deterministic_and_too_short():
    frames, audio = correlated_pair(1)
    assert sync_score_video(frames, audio, FPS) == sync_score_video(frames, audio, FPS)
    with pytest.raises(ValueError, match="too short"):
        sync_score_video(frames[:10], AudioClip(audio.samples[:6400], audio.sample_rate), FPS)


def test_track_extractor_zero_convention():
    assert np.all(TrackExtractor().audio(np.ones(5)) == 0)
    v = TrackExtractor().video(np.arange(5.0))
    assert np.linalg.norm(v) == pytest.approx(1.0) and abs(v.sum()) < 1e-12

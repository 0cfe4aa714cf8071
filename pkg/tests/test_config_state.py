import json
import threading

import pytest

from preavatar.config import ConfigError, ProjectConfig, ProviderSpec, load_config, parse_config
from preavatar.state import ProjectState, inputs_digest


def test_defaults():
    c = parse_config({})
    assert c == ProjectConfig(lipsync=c.lipsync) and c.target_rate == 22050
    assert load_config(None).seed == 0


def test_full_config_parses(tmp_path):
    p = tmp_path / "config.toml"
    p.write_text(
        """
target_rate = 16000
seed = 3
workers = 2
[silence]
threshold_db = -35
hop = 128
[noise]
profile = "self"
[calibration]
min_confidence = 0.6
[mel]
n_mels = 64
[search]
alpha = 1.5
top_n = 3
[motion]
sigma = 0.2
relative = false
[lipsync]
max_offset = 10
mouth = [-0.4, 0.1, 0.4, 0.8]
[assembly]
padding = 1
resolution = [640, 360]
[providers.synthesis]
kind = "external-command"
locator = "tts {phonemes} {out}"
"""
    )
    c = load_config(p)
    assert c.target_rate == 16000 and c.prepare.workers == 2 and c.prepare.noise_profile == "self"
    assert c.prepare.threshold_db == -35.0 and c.prepare.silence_stft.hop == 128
    assert c.search.alpha == 1.5 and c.search.top_n == 3 and c.search.mel.n_mels == 64
    assert c.search.workers == 2
    assert c.motion.sigma == 0.2 and c.motion.relative is False
    assert c.lipsync.max_offset == 10 and c.lipsync.seed == 3 and c.lipsync.mouth.x0 == -0.4
    assert c.assembly.padding == 1.0 and c.assembly.resolution == (640, 360)
    assert c.providers["synthesis"] == ProviderSpec("external-command", "tts {phonemes} {out}")


@pytest.mark.parametrize(
    "data,match",
    [
        ({"bogus": 1}, "unknown key"),
        ({"search": {"alpha": "x"}}, "search.alpha"),
        ({"motion": {"relative": 1}}, "motion.relative"),
        ({"seed": True}, "bool"),
        ({"noise": {"profile": "middle"}}, "profile"),
        ({"lipsync": {"mouth": [0, 0, 0]}}, "mouth"),
        ({"lipsync": {"mouth": [0.5, 0, 0.1, 1]}}, "mouth"),
        ({"assembly": {"overlay_corner": "centre"}}, "overlay_corner"),
        ({"assembly": {"resolution": [1280]}}, "resolution"),
        ({"providers": {"keypoints": {"kind": "magic", "locator": "x"}}}, "kind"),
        ({"providers": {"keypoints": {"kind": "stub-file"}}}, "locator"),
        ({"providers": {"camera": {}}}, "unknown key"),
    ],
)
def test_bad_config_rejected(data, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(data)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")
    (tmp_path / "bad.toml").write_text("x = [")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_provider_resolution(tmp_path):
    assert ProviderSpec("stub-file", "a/b.txt").resolve(tmp_path) == str((tmp_path / "a/b.txt").resolve())
    assert ProviderSpec("external-command", "run {out}").resolve(tmp_path) == "run {out}"


# -- state ledger --


def test_inputs_digest_tracks_content(tmp_path):
    f = tmp_path / "a.txt"
    f.write_text("one")
    d1 = inputs_digest([f], "cfg")
    assert d1 == inputs_digest([f], "cfg") and d1 != inputs_digest([f], "other")
    f.write_text("two")
    assert inputs_digest([f], "cfg") != d1
    assert inputs_digest([tmp_path / "missing"]) == inputs_digest([tmp_path / "missing"])


def test_stage_completion_requires_matching_outputs(tmp_path):
    out = tmp_path / "out.txt"
    out.write_text("result")
    with ProjectState.locked(tmp_path) as s:
        s.record("prepare", "abc", [out], pairs=2)
        s.select("ck")
    s = ProjectState.load(tmp_path)
    assert s.complete("prepare") and s.up_to_date("prepare", "abc") and not s.up_to_date("prepare", "x")
    assert s.entry("prepare")["pairs"] == 2 and s.selected_checkpoint == "ck"
    assert "out.txt" in s.entry("prepare")["outputs"]
    out.write_text("tampered")
    assert not s.complete("prepare")
    out.unlink()
    assert not s.complete("prepare") and not s.complete("rank")
    s.invalidate("prepare")
    assert s.entry("prepare") is None


def test_locked_discards_on_error(tmp_path):
    with pytest.raises(RuntimeError):
        with ProjectState.locked(tmp_path) as s:
            s.select("never")
            raise RuntimeError("boom")
    assert ProjectState.load(tmp_path).selected_checkpoint is None


def test_lock_serializes_writers(tmp_path):
    def bump(_):
        for _ in range(20):
            with ProjectState.locked(tmp_path) as s:
                s.data["count"] = s.data.get("count", 0) + 1

    threads = [threading.Thread(target=bump, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert json.loads((tmp_path / "state" / "state.json").read_text())["count"] == 80

"""Command-line driver over a project directory.

Layout::

    project/
      config.toml       optional; defaults apply when absent
      manuscript.txt    one paragraph per recording, blank-line separated
      recordings/       NNNN.wav in manuscript order
      checkpoints/<id>/ per-checkpoint synthesized utterances
      reference/        reference utterances (same file names)
      source.png        presenter photo
      deck.json         {"slides": [{"image": ..., "notes": ...}]}
      frames/           animated avatar frames (written by animate)
      assets/           derived artifacts
      state/            stage ledger
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import shutil
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from ._io import write_json
from .assembly import (
    AVATAR_ID,
    AssemblyError,
    EvalReport,
    SlideDeck,
    build_timeline,
    emit_manifest,
    render_command,
    run_encoder,
    segment_manuscript,
    slide_id,
    speech_id,
    utilization_report,
    word_error_rate,
)
from .audio import read_wav
from .config import ConfigError, ProjectConfig, ProviderSpec, load_config
from .lipsync import sync_score_video
from .motion import AnimateParams, Keypoint, animate, load_track, read_frames, read_image, write_frames
from .search import CheckpointScore, format_table, rank_checkpoints, score_checkpoints
from .state import ProjectState, inputs_digest
from .text import (
    CommandTranscriptProvider,
    IdentityTranscriptProvider,
    Lexicon,
    PreparationError,
    StubTranscriptProvider,
    format_phoneme_line,
    grapheme_to_phoneme,
    prepare_pairs,
)

log = logging.getLogger("preavatar")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_MISSING = 4


class CliError(Exception):
    def __init__(self, code: int, message: str, stage: str | None = None, **detail):
        super().__init__(message)
        self.code = code
        self.stage = stage
        self.detail = detail


def _need(path: Path, what: str, stage: str) -> Path:
    if not path.exists():
        raise CliError(EXIT_MISSING, f"missing {what}: {path}", stage)
    return path


def _config_path(project: Path, given: str | None) -> Path | None:
    if given:
        return Path(given)
    for name in ("config.toml", "config"):
        if (project / name).is_file():
            return project / name
    return None


def _provider(config: ProjectConfig, role: str) -> ProviderSpec | None:
    return config.providers.get(role)


def _fmt_cfg(obj) -> str:
    return repr(obj)


# -- subcommands; each returns a JSON-serializable result --


def cmd_prepare(args, project: Path, config: ProjectConfig) -> dict:
    manuscript = _need(project / "manuscript.txt", "manuscript", "prepare")
    rec_dir = _need(project / "recordings", "recordings directory", "prepare")
    recordings = sorted(rec_dir.glob("*.wav"))
    if not recordings:
        raise CliError(EXIT_MISSING, f"no WAV files in {rec_dir}", "prepare")

    spec = _provider(config, "transcript")
    extra_inputs = []
    if spec is None:
        asr = IdentityTranscriptProvider()
        log.info("no transcript provider configured; calibration echoes the expected phonemes")
    elif spec.kind == "stub-file":
        locator = Path(spec.resolve(project))
        extra_inputs.append(_need(locator, "transcript stub file", "prepare"))
        asr = StubTranscriptProvider(locator)
    else:
        asr = CommandTranscriptProvider(spec.locator)

    out_dir = project / "assets" / "prepared"
    digest = inputs_digest([manuscript, rec_dir, *extra_inputs], _fmt_cfg(config.prepare) + repr(spec))
    with ProjectState.locked(project) as state:
        if state.up_to_date("prepare", digest):
            log.info("prepare: inputs unchanged, nothing to do")
            return {"stage": "prepare", "status": "up-to-date", "out": str(out_dir)}
        if out_dir.exists():
            shutil.rmtree(out_dir)
        try:
            pairs, report = prepare_pairs(manuscript, recordings, asr, config.prepare, out_dir)
        except PreparationError as exc:
            raise CliError(EXIT_STAGE, str(exc), exc.stage or "prepare", index=exc.index) from exc
        state.record("prepare", digest, [out_dir], pairs=len(pairs), flags=report["total_flags"])
    return {"stage": "prepare", "status": "done", "pairs": len(pairs),
            "flags": report["total_flags"], "out": str(out_dir)}


def _choose(ranking, args) -> tuple[str, str]:
    ids = [s.checkpoint_id for s in ranking]
    if args.select is not None:
        if args.select not in ids:
            raise CliError(EXIT_STAGE, f"checkpoint {args.select!r} is not in the top {len(ids)}: {ids}", "rank")
        return args.select, "manual"
    if not args.non_interactive and sys.stdin.isatty():
        while True:
            answer = input(f"select checkpoint [1-{len(ids)} or id, default 1]: ").strip()
            if not answer:
                return ids[0], "manual"
            if answer in ids:
                return answer, "manual"
            if answer.isdigit() and 1 <= int(answer) <= len(ids):
                return ids[int(answer) - 1], "manual"
            print(f"not a listed choice: {answer}", file=sys.stderr)
    log.info("automatic selection of rank 1: %s", ids[0])
    return ids[0], "automatic"


def cmd_rank(args, project: Path, config: ProjectConfig) -> dict:
    ck_dir = _need(project / "checkpoints", "checkpoints directory", "rank")
    ref_dir = _need(project / "reference", "reference directory", "rank")
    out = project / "assets" / "rank.json"
    digest = inputs_digest([ck_dir, ref_dir], _fmt_cfg(config.search))

    with ProjectState.locked(project) as state:
        cached = state.up_to_date("rank", digest) and out.is_file()
        if cached:
            data = json.loads(out.read_text(encoding="utf-8"))
        else:
            try:
                scores = score_checkpoints(ck_dir, ref_dir, config.search)
            except (FileNotFoundError, ValueError) as exc:
                raise CliError(EXIT_STAGE, str(exc), "rank") from exc
            ranking, diagnostic = rank_checkpoints(scores, config.search)
            data = {
                "ranking": [s.to_dict() for s in ranking],
                "scores": [s.to_dict() for s in scores],
                "diagnostic": diagnostic,
            }
            write_json(out, data)
        ranking = [CheckpointScore(**d) for d in data["ranking"]]
        if not ranking:
            raise CliError(EXIT_STAGE, data["diagnostic"] or "no checkpoints to rank", "rank")
        if not args.json:
            print(format_table(ranking))
        chosen, how = _choose(ranking, args)
        state.select(chosen)
        state.record("rank", digest, [out], selected=chosen, selection=how)
    return {"stage": "rank", "status": "cached" if cached else "done", "selected": chosen,
            "selection": how, "ranking": data["ranking"]}


def _load_keypoints(path: Path):
    data = json.loads(path.read_text(encoding="utf-8"))
    track = load_track(path)
    source = None
    if isinstance(data, dict) and "source" in data:
        source = [Keypoint.from_dict(kp) for kp in data["source"]]
    return (source or track[0]) if track else source, track


def cmd_animate(args, project: Path, config: ProjectConfig) -> dict:
    source_path = _need(Path(args.source) if args.source else project / "source.png", "source image", "animate")
    if args.track:
        track_path = _need(Path(args.track), "keypoint track", "animate")
    else:
        spec = _provider(config, "keypoints")
        if spec is None:
            raise CliError(EXIT_CONFIG, "no keypoint track given and no keypoints provider configured", "animate")
        if spec.kind == "stub-file":
            track_path = _need(Path(spec.resolve(project)), "keypoint track", "animate")
        else:
            track_path = project / "assets" / "keypoints.json"
            track_path.parent.mkdir(parents=True, exist_ok=True)
            argv = [t.format(source=str(source_path), out=str(track_path)) for t in shlex.split(spec.locator)]
            proc = subprocess.run(argv, capture_output=True, text=True, check=False)
            if proc.returncode != 0 or not track_path.is_file():
                raise CliError(EXIT_STAGE, f"keypoint provider failed ({proc.returncode}): {proc.stderr.strip()[:300]}", "animate")

    frames_dir = project / "frames"
    m = config.motion
    digest = inputs_digest([source_path, track_path], _fmt_cfg(m))
    with ProjectState.locked(project) as state:
        if state.up_to_date("animate", digest):
            return {"stage": "animate", "status": "up-to-date", "frames": str(frames_dir)}
        try:
            src_kps, track = _load_keypoints(track_path)
            if not track:
                raise ValueError("keypoint track has no frames")
            frames = animate(read_image(source_path), src_kps, track,
                             AnimateParams(m.sigma, m.background_logit, m.relative))
        except (ValueError, KeyError) as exc:
            raise CliError(EXIT_STAGE, str(exc), "animate") from exc
        if frames_dir.exists():
            for old in frames_dir.glob("*.png"):
                old.unlink()
        write_frames(frames_dir, frames)
        state.record("animate", digest, [frames_dir], frames=len(frames), fps=m.fps)
    return {"stage": "animate", "status": "done", "frames": str(frames_dir), "count": len(frames)}


def cmd_lipsync(args, project: Path, config: ProjectConfig) -> dict:
    frames_dir = _need(Path(args.frames) if args.frames else project / "frames", "frames directory", "lipsync-score")
    audio_path = Path(args.audio) if args.audio else project / "assets" / "render" / "speech.wav"
    _need(audio_path, "audio", "lipsync-score")
    fps = args.fps or config.motion.fps
    frames = read_frames(frames_dir)
    try:
        report = sync_score_video(frames, read_wav(audio_path), fps, config.lipsync)
    except ValueError as exc:
        raise CliError(EXIT_STAGE, str(exc), "lipsync-score") from exc
    result = report.to_dict()
    write_json(project / "assets" / "lipsync.json", result)
    if not args.json:
        print(f"estimated offset {report.offset:+d} frames, score {report.score:.3f}")
    return result


def _synthesize(spec: ProviderSpec, project: Path, checkpoint: str, index: int,
                phonemes: Path, out: Path) -> None:
    if spec.kind == "stub-file":
        base = Path(spec.resolve(project))
        candidates = [base / checkpoint / f"{index:04d}.wav", base / f"{index:04d}.wav"]
        src = next((c for c in candidates if c.is_file()), None)
        if src is None:
            raise CliError(EXIT_MISSING, f"no prerecorded speech for slide {index} under {base}", "assemble")
        shutil.copyfile(src, out)
        return
    argv = [t.format(phonemes=str(phonemes), out=str(out), checkpoint=checkpoint)
            for t in shlex.split(spec.locator)]
    proc = subprocess.run(argv, capture_output=True, text=True, check=False)
    if proc.returncode != 0 or not out.is_file():
        raise CliError(EXIT_STAGE, f"synthesis backend failed on slide {index} ({proc.returncode}): "
                       f"{proc.stderr.strip()[:300]}", "assemble")


def cmd_assemble(args, project: Path, config: ProjectConfig) -> dict:
    state = ProjectState.load(project)
    for stage in ("rank", "animate"):
        if not state.complete(stage):
            raise CliError(EXIT_MISSING, f"missing prerequisite: ledger entry '{stage}' is not complete", "assemble",
                           missing=stage)
    checkpoint = state.selected_checkpoint
    if not checkpoint:
        raise CliError(EXIT_MISSING, "missing prerequisite: no checkpoint selected (run rank)", "assemble",
                       missing="rank")
    deck_path = _need(Path(args.deck) if args.deck else project / "deck.json", "slide deck", "assemble")
    spec = _provider(config, "synthesis")
    if spec is None:
        raise CliError(EXIT_CONFIG, "no synthesis provider configured", "assemble")
    try:
        deck = SlideDeck.load(deck_path)
    except ValueError as exc:
        raise CliError(EXIT_STAGE, str(exc), "assemble") from exc

    frames_dir = project / "frames"
    speech_dir = project / "assets" / "speech"
    render_dir = project / "assets" / "render"
    acfg = config.assembly
    extra = [Path(spec.resolve(project))] if spec.kind == "stub-file" else []
    digest = inputs_digest([deck_path, *[s.image for s in deck.slides], frames_dir, *extra],
                           _fmt_cfg(acfg) + checkpoint + repr(spec))

    t0 = time.perf_counter()
    with ProjectState.locked(project) as state:
        manifest = render_dir / "manifest.json"
        fresh = not state.up_to_date("assemble", digest)
        if fresh:
            speech_dir.mkdir(parents=True, exist_ok=True)
            lexicon = Lexicon.default()
            texts = segment_manuscript(deck)
            assets: dict[str, Path] = {AVATAR_ID: frames_dir}
            durations = []
            try:
                for i, (slide, text) in enumerate(zip(deck.slides, texts)):
                    assets[slide_id(i)] = slide.image
                    if not text:
                        durations.append(0.0)
                        continue
                    ph = speech_dir / f"{i:04d}.phonemes"
                    ph.write_text(format_phoneme_line(grapheme_to_phoneme(text, lexicon)) + "\n", encoding="utf-8")
                    wav = speech_dir / f"{i:04d}.wav"
                    _synthesize(spec, project, checkpoint, i, ph, wav)
                    assets[speech_id(i)] = wav
                    durations.append(read_wav(wav).duration)
                timeline = build_timeline(deck, durations, acfg)
                manifest = emit_manifest(timeline, assets, acfg, render_dir)
            except (AssemblyError, ValueError) as exc:
                raise CliError(EXIT_STAGE, str(exc), "assemble") from exc
            state.record("assemble", digest, [manifest], checkpoint=checkpoint)
    data = json.loads(manifest.read_text(encoding="utf-8"))
    result = {"stage": "assemble", "status": "done" if fresh else "up-to-date",
              "manifest": str(manifest), "total_duration": data["total_duration"],
              "warnings": data["metadata"]["warnings"]}

    try:
        argv = render_command(manifest, acfg.template)
    except AssemblyError as exc:
        raise CliError(EXIT_CONFIG, str(exc), "assemble") from exc
    result["command"] = argv
    if args.render:
        proc = run_encoder(argv)
        result["encoder_exit"] = proc.returncode
        if proc.returncode != 0:
            raise CliError(EXIT_STAGE, f"encoder exited with {proc.returncode}: {proc.stderr.strip()[:300]}",
                           "assemble", encoder_exit=proc.returncode)

    if args.reference_transcript or args.time_spent:
        report = EvalReport(timings={"assemble_seconds": round(time.perf_counter() - t0, 3)})
        if args.reference_transcript and args.hypothesis_transcript:
            report.wer = word_error_rate(Path(args.reference_transcript).read_text(encoding="utf-8"),
                                         Path(args.hypothesis_transcript).read_text(encoding="utf-8"))
        if args.time_spent:
            report.utilization = utilization_report([data["total_duration"]], args.time_spent)["utilization"]
        write_json(render_dir / "eval.json", report.to_dict())
        result["eval"] = report.to_dict()
    if not args.json:
        print(f"manifest: {manifest} ({data['total_duration']:.3f} s)")
        for w in data["metadata"]["warnings"]:
            print(f"warning: {w}")
        if not args.render:
            print("encoder: " + shlex.join(argv))
    return result


def _read_text_arg(value: str) -> str:
    p = Path(value)
    return p.read_text(encoding="utf-8") if p.is_file() else value


def cmd_eval(args, project: Path, config: ProjectConfig) -> dict:
    report = EvalReport()
    try:
        if args.reference is not None:
            if args.hypothesis is None:
                raise CliError(EXIT_CONFIG, "--reference needs --hypothesis", "eval")
            report.wer = word_error_rate(_read_text_arg(args.reference), _read_text_arg(args.hypothesis))
        if args.time_spent is not None:
            durations = list(args.durations or [])
            if args.manifest:
                durations.append(json.loads(Path(args.manifest).read_text(encoding="utf-8"))["total_duration"])
            util = utilization_report(durations, args.time_spent)
            report.utilization = util["utilization"]
            report.timings = {k: util[k] for k in ("output_seconds", "time_spent_seconds")}
    except ValueError as exc:
        raise CliError(EXIT_STAGE, str(exc), "eval") from exc
    result = report.to_dict()
    if args.out:
        write_json(args.out, result)
    if not args.json:
        if report.wer is not None:
            print(f"WER {report.wer:.4f}")
        if report.utilization is not None:
            print(f"utilization {report.utilization:.4f}")
    return result


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--project", default=".", help="project directory (default: cwd)")
    common.add_argument("--config", help="config file (default: <project>/config.toml if present)")
    common.add_argument("--json", action="store_true", help="machine-readable output; errors as JSON on stderr")
    common.add_argument("--seed", type=int, help="override the configured random seed")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="preavatar", description="Presentation avatar pipeline")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="build (phonemes, wav) training pairs")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("rank", parents=[common], help="score checkpoints and select one")
    p.add_argument("--select", help="checkpoint id to record (must be listed)")
    p.add_argument("--non-interactive", action="store_true", help="never prompt; default to rank 1")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("animate", parents=[common], help="animate the source photo from a keypoint track")
    p.add_argument("--source", help="source image (default: <project>/source.png)")
    p.add_argument("--track", help="keypoint track JSON (default: keypoints provider)")
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("lipsync-score", parents=[common], help="estimate audio/video offset and sync score")
    p.add_argument("--frames", help="PNG frame directory (default: <project>/frames)")
    p.add_argument("--audio", help="speech WAV (default: assembled speech track)")
    p.add_argument("--fps", type=float)
    p.set_defaults(func=cmd_lipsync)

    p = sub.add_parser("assemble", parents=[common], help="synthesize speech and emit the render manifest")
    p.add_argument("--deck", help="slide deck JSON (default: <project>/deck.json)")
    p.add_argument("--render", action="store_true", help="run the encoder command")
    p.add_argument("--reference-transcript")
    p.add_argument("--hypothesis-transcript")
    p.add_argument("--time-spent", type=float, help="user time spent, seconds")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("eval", parents=[common], help="WER and utilization")
    p.add_argument("--reference", help="reference transcript (file or text)")
    p.add_argument("--hypothesis", help="hypothesis transcript (file or text)")
    p.add_argument("--durations", type=float, nargs="*", help="output video durations, seconds")
    p.add_argument("--manifest", help="add the total duration of a render manifest")
    p.add_argument("--time-spent", type=float, help="user time spent, seconds")
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    project = Path(args.project)
    try:
        try:
            config = load_config(_config_path(project, args.config))
        except ConfigError as exc:
            raise CliError(EXIT_CONFIG, str(exc), "config") from exc
        if args.seed is not None:
            config = replace(config, seed=args.seed, lipsync=replace(config.lipsync, seed=args.seed))
        try:
            result = args.func(args, project, config)
        except (OSError, ValueError) as exc:
            raise CliError(EXIT_STAGE, str(exc), args.command) from exc
    except CliError as exc:
        if args.json:
            err = {"error": str(exc), "code": exc.code, "stage": exc.stage, **exc.detail}
            print(json.dumps(err, sort_keys=True), file=sys.stderr)
        else:
            print(f"error ({exc.stage or args.command}): {exc}", file=sys.stderr)
        return exc.code
    if args.json:
        print(json.dumps(result, sort_keys=True, indent=2))
    return EXIT_OK

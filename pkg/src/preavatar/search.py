"""Best Model Search: rank TTS checkpoints by HF noise, MCD and mel loss."""

from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import (
    AudioClip,
    MelConfig,
    StftParams,
    cepstra_from_mel,
    mel_spectrogram,
    read_wav,
    resample,
    stft,
)

log = logging.getLogger(__name__)

MCD_CONSTANT = 10.0 / math.log(10.0) * math.sqrt(2.0)


@dataclass(frozen=True)
class SearchConfig:
    stft: StftParams = field(default_factory=lambda: StftParams(1024, 256))
    mel: MelConfig = field(default_factory=MelConfig)
    n_cepstra: int = 13
    hf_cutoff: float = 8000.0
    alpha: float = 2.0
    epsilon: float = 0.01
    w_mcd: float = 0.5
    w_mel: float = 0.5
    # None: per-batch medians (see score_checkpoints)
    mcd_norm: float | None = None
    mel_norm: float | None = None
    top_n: int = 5
    workers: int = 1
    sample_rate: int | None = None  # resample everything to this rate first


@dataclass(frozen=True)
class CheckpointScore:
    checkpoint_id: str
    step: int
    hf_noise_ratio: float
    hf_flag: bool
    mcd: float
    mel_loss: float
    composite: float
    reference_hf_ratio: float = 0.0

    def __post_init__(self):
        if self.mcd < 0 or self.mel_loss < 0:
            raise ValueError("mcd and mel_loss must be non-negative")
        if not 0.0 <= self.hf_noise_ratio <= 1.0:
            raise ValueError("hf_noise_ratio must lie in [0, 1]")
        if not math.isfinite(self.composite):
            raise ValueError("composite must be finite")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DtwPath:
    pairs: tuple[tuple[int, int], ...]
    cost: float = 0.0

    def __post_init__(self):
        p = self.pairs
        if not p or p[0] != (0, 0):
            raise ValueError("DTW path must start at (0, 0)")
        for (i0, j0), (i1, j1) in zip(p, p[1:]):
            if (i1 - i0, j1 - j0) not in ((1, 0), (0, 1), (1, 1)):
                raise ValueError(f"illegal DTW step {(i0, j0)} -> {(i1, j1)}")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def indices(self) -> tuple[np.ndarray, np.ndarray]:
        arr = np.asarray(self.pairs, dtype=np.intp)
        return arr[:, 0], arr[:, 1]

    @classmethod
    def diagonal(cls, n: int) -> "DtwPath":
        return cls(tuple((i, i) for i in range(n)))


def hf_noise_ratio(clip: AudioClip, cutoff: float = 8000.0, params: StftParams = StftParams(1024, 256)) -> float:
    """Share of spectrogram power strictly above ``cutoff``; 0 for silent clips."""
    if not cutoff < clip.sample_rate / 2:
        raise ValueError(f"cutoff {cutoff} Hz must be below Nyquist {clip.sample_rate / 2} Hz")
    if len(clip) < params.fft_size:
        clip = clip.with_samples(np.pad(clip.samples, (0, params.fft_size - len(clip))))
    spec = stft(clip, params)
    per_bin = spec.power.sum(axis=0)
    total = per_bin.sum()
    if total <= 0.0:
        return 0.0
    return float(np.clip(per_bin[spec.frequencies > cutoff].sum() / total, 0.0, 1.0))


def _values(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(x, "values", x), dtype=np.float64))


def frame_distances(a, b, dims: Sequence[int] | None = None) -> np.ndarray:
    av, bv = _values(a), _values(b)
    if av.shape[1] != bv.shape[1]:
        raise ValueError(f"feature dimension mismatch: {av.shape[1]} vs {bv.shape[1]}")
    if dims is not None:
        idx = list(dims)
        av, bv = av[:, idx], bv[:, idx]
    diff = av[:, None, :] - bv[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def dtw_align(a, b, dims: Sequence[int] | None = None) -> DtwPath:
    """Minimum summed-Euclidean-distance monotone alignment.

    Steps are (1,0), (0,1), (1,1). When predecessors tie, the backtrack takes
    the diagonal first, then the step that advances ``a`` only.
    """
    av, bv = _values(a), _values(b)
    if av.shape[0] == 0 or bv.shape[0] == 0:
        raise ValueError("DTW needs two non-empty sequences")
    cost = frame_distances(av, bv, dims)
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row_cost = cost[i - 1]
        prev = acc[i - 1]
        cur = acc[i]
        # vertical/diagonal part in one shot, horizontal moves need a scan
        best = np.minimum(prev[:-1], prev[1:])
        for j in range(1, m + 1):
            c = best[j - 1] if best[j - 1] <= cur[j - 1] else cur[j - 1]
            cur[j] = row_cost[j - 1] + c

    pairs = []
    i, j = n, m
    while True:
        pairs.append((i - 1, j - 1))
        if i == 1 and j == 1:
            break
        diag = acc[i - 1, j - 1]
        up = acc[i - 1, j]
        left = acc[i, j - 1]
        if diag <= up and diag <= left:
            i, j = i - 1, j - 1
        elif up <= left:
            i -= 1
        else:
            j -= 1
    pairs.reverse()
    return DtwPath(tuple(pairs), float(acc[n, m]))


def _check_path(path: DtwPath, n: int, m: int) -> None:
    if path.pairs[-1] != (n - 1, m - 1):
        raise ValueError(f"path ends at {path.pairs[-1]}, expected {(n - 1, m - 1)}")


def mcd(a, b, path: DtwPath | None = None, dims: Sequence[int] | None = None) -> float:
    """Mel cepstral distortion in dB along ``path``; c0 excluded by default."""
    av, bv = _values(a), _values(b)
    if av.shape[1] != bv.shape[1]:
        raise ValueError(f"cepstral dimension mismatch: {av.shape[1]} vs {bv.shape[1]}")
    if dims is None:
        dims = range(1, av.shape[1])
    idx = list(dims)
    if path is None:
        path = dtw_align(av, bv, idx)
    _check_path(path, av.shape[0], bv.shape[0])
    ia, ib = path.indices
    diff = av[ia][:, idx] - bv[ib][:, idx]
    return float(MCD_CONSTANT * np.sqrt((diff ** 2).sum(axis=1)).mean())


def mel_loss(a, b, path: DtwPath | None = None) -> float:
    """Mean absolute log-mel difference over aligned frame pairs."""
    av, bv = _values(a), _values(b)
    if av.shape[1] != bv.shape[1]:
        raise ValueError(f"n_mels mismatch: {av.shape[1]} vs {bv.shape[1]}")
    if path is None:
        path = dtw_align(av, bv)
    _check_path(path, av.shape[0], bv.shape[0])
    ia, ib = path.indices
    return float(np.abs(av[ia] - bv[ib]).mean())


@dataclass(frozen=True)
class _UtteranceScore:
    hf_gen: float
    hf_ref: float
    mcd: float
    mel_loss: float


def _prepare_clip(clip: AudioClip, config: SearchConfig) -> AudioClip:
    if config.sample_rate is not None and clip.sample_rate != config.sample_rate:
        clip = resample(clip, config.sample_rate)
    if len(clip) < config.stft.fft_size:
        clip = clip.with_samples(np.pad(clip.samples, (0, config.stft.fft_size - len(clip))))
    return clip


def score_utterance(generated: AudioClip, reference: AudioClip, config: SearchConfig) -> _UtteranceScore:
    gen = _prepare_clip(generated, config)
    ref = _prepare_clip(reference, config)
    if gen.sample_rate != ref.sample_rate:
        raise ValueError(
            f"sample rates differ ({gen.sample_rate} vs {ref.sample_rate}); set SearchConfig.sample_rate"
        )
    mel_g = mel_spectrogram(gen, config.stft, config.mel)
    mel_r = mel_spectrogram(ref, config.stft, config.mel)
    cep_g = cepstra_from_mel(mel_g, config.n_cepstra)
    cep_r = cepstra_from_mel(mel_r, config.n_cepstra)
    dims = range(1, config.n_cepstra)
    path = dtw_align(cep_g, cep_r, dims)
    return _UtteranceScore(
        hf_noise_ratio(gen, config.hf_cutoff, config.stft),
        hf_noise_ratio(ref, config.hf_cutoff, config.stft),
        mcd(cep_g, cep_r, path, dims),
        mel_loss(mel_g, mel_r, path),
    )


def composite_score(mcd_value: float, mel_value: float, config: SearchConfig) -> float:
    mcd_norm = config.mcd_norm or 1.0
    mel_norm = config.mel_norm or 1.0
    return config.w_mcd * mcd_value / mcd_norm + config.w_mel * mel_value / mel_norm


def score_checkpoint(
    generated: Sequence[AudioClip],
    reference: Sequence[AudioClip],
    config: SearchConfig = SearchConfig(),
    checkpoint_id: str = "",
    step: int = 0,
) -> CheckpointScore:
    if len(generated) != len(reference):
        raise ValueError(
            f"{len(generated)} generated utterances vs {len(reference)} references"
        )
    if not generated:
        raise ValueError("no utterances to score")
    per = [score_utterance(g, r, config) for g, r in zip(generated, reference)]
    hf_gen = float(np.mean([u.hf_gen for u in per]))
    hf_ref = float(np.mean([u.hf_ref for u in per]))
    mcd_value = float(np.mean([u.mcd for u in per]))
    mel_value = float(np.mean([u.mel_loss for u in per]))
    return CheckpointScore(
        checkpoint_id=checkpoint_id,
        step=step,
        hf_noise_ratio=hf_gen,
        hf_flag=bool(hf_gen > config.alpha * hf_ref + config.epsilon),
        mcd=mcd_value,
        mel_loss=mel_value,
        composite=composite_score(mcd_value, mel_value, config),
        reference_hf_ratio=hf_ref,
    )


def normalize_batch(scores: Sequence[CheckpointScore], config: SearchConfig) -> list[CheckpointScore]:
    """Recompute composites with per-batch medians for any unset norm.

    A zero median (e.g. every checkpoint identical to the reference) falls
    back to a norm of 1.
    """
    if not scores:
        return []
    mcd_norm = config.mcd_norm or float(np.median([s.mcd for s in scores])) or 1.0
    mel_norm = config.mel_norm or float(np.median([s.mel_loss for s in scores])) or 1.0
    cfg = replace(config, mcd_norm=mcd_norm, mel_norm=mel_norm)
    return [replace(s, composite=composite_score(s.mcd, s.mel_loss, cfg)) for s in scores]


def rank_checkpoints(
    scores: Sequence[CheckpointScore], config: SearchConfig = SearchConfig()
) -> tuple[list[CheckpointScore], str | None]:
    """Drop HF-flagged checkpoints, sort by composite, keep ``top_n``.

    Equal composites go to the later training step. Returns the ranking and a
    diagnostic that is non-None only when the HF criterion removed everything.
    """
    if not scores:
        return [], None
    kept = [s for s in scores if not s.hf_flag]
    if not kept:
        return [], (
            f"all {len(scores)} checkpoints failed the high-frequency noise criterion "
            f"(ratio above {config.alpha} x reference + {config.epsilon} at cutoff {config.hf_cutoff:g} Hz)"
        )
    kept.sort(key=lambda s: (s.composite, -s.step))
    return kept[: config.top_n], None


# -- directory layout: checkpoints/<id>/<utt>.wav vs reference/<utt>.wav --

_STEP_RE = re.compile(r"(\d+)(?!.*\d)")


def checkpoint_step(checkpoint_dir: Path) -> int:
    meta = checkpoint_dir / "meta.json"
    if meta.is_file():
        step = json.loads(meta.read_text()).get("step")
        if step is not None:
            return int(step)
    m = _STEP_RE.search(checkpoint_dir.name)
    return int(m.group(1)) if m else 0


def load_utterances(directory: Path, names: Sequence[str]) -> list[AudioClip]:
    missing = [n for n in names if not (directory / f"{n}.wav").is_file()]
    if missing:
        raise FileNotFoundError(f"{directory} is missing utterances {missing}")
    return [read_wav(directory / f"{n}.wav") for n in names]


def score_checkpoints(
    checkpoints_dir: str | Path, reference_dir: str | Path, config: SearchConfig = SearchConfig()
) -> list[CheckpointScore]:
    """Score every checkpoint directory against the reference set."""
    checkpoints_dir, reference_dir = Path(checkpoints_dir), Path(reference_dir)
    names = sorted(p.stem for p in reference_dir.glob("*.wav"))
    if not names:
        raise FileNotFoundError(f"no reference WAVs in {reference_dir}")
    reference = load_utterances(reference_dir, names)
    dirs = sorted(p for p in checkpoints_dir.iterdir() if p.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no checkpoint directories in {checkpoints_dir}")

    def one(d: Path) -> CheckpointScore:
        log.info("scoring checkpoint %s", d.name)
        return score_checkpoint(
            load_utterances(d, names), reference, config, d.name, checkpoint_step(d)
        )

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            scores = list(pool.map(one, dirs))
    else:
        scores = [one(d) for d in dirs]
    return normalize_batch(scores, config)


def format_table(scores: Sequence[CheckpointScore]) -> str:
    header = f"{'rank':>4}  {'checkpoint':<24} {'step':>8} {'MCD dB':>8} {'mel':>8} {'HF':>7} {'score':>7}"
    lines = [header, "-" * len(header)]
    for i, s in enumerate(scores, 1):
        lines.append(
            f"{i:>4}  {s.checkpoint_id:<24} {s.step:>8d} {s.mcd:>8.3f} {s.mel_loss:>8.3f} "
            f"{s.hf_noise_ratio:>7.4f} {s.composite:>7.3f}"
        )
    return "\n".join(lines)

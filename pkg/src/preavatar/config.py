"""Project configuration: a TOML file parsed completely, with unknown keys rejected.

See docs/config.md for the full key reference.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .assembly import AssemblyConfig
from .audio import MelConfig, NoiseGateParams, SilencePolicy, StftParams
from .lipsync import MouthRegion, SyncConfig
from .search import SearchConfig
from .text import CalibrationPolicy, PrepConfig

PROVIDER_KINDS = ("stub-file", "external-command")
PROVIDER_ROLES = ("transcript", "synthesis", "keypoints")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProviderSpec:
    kind: str
    locator: str

    def resolve(self, base: Path) -> str:
        """Stub-file locators are relative to the project; commands are passed through."""
        if self.kind == "stub-file":
            return str((base / self.locator).resolve())
        return self.locator


@dataclass(frozen=True)
class MotionConfig:
    sigma: float = 0.1
    background_logit: float = 0.0
    relative: bool = True
    min_resolution: int = 256
    target_resolution: int = 256
    drift_limit: float | None = None
    fps: float = 25.0


@dataclass(frozen=True)
class ProjectConfig:
    seed: int = 0
    prepare: PrepConfig = field(default_factory=PrepConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    lipsync: SyncConfig = field(default_factory=SyncConfig)
    assembly: AssemblyConfig = field(default_factory=AssemblyConfig)
    providers: dict[str, ProviderSpec] = field(default_factory=dict)

    @property
    def target_rate(self) -> int:
        return self.prepare.target_rate


def _take(table: dict, path: str, allowed: dict[str, type | tuple]) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(f"[{path}] must be a table")
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{path}]: {', '.join(unknown)}")
    out = {}
    for key, value in table.items():
        types = allowed[key] if isinstance(allowed[key], tuple) else (allowed[key],)
        if float in types and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if isinstance(value, bool) and bool not in types:
            raise ConfigError(f"{path}.{key}: expected {'/'.join(t.__name__ for t in types)}, got bool")
        if not isinstance(value, types):
            raise ConfigError(
                f"{path}.{key}: expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}"
            )
        out[key] = value
    return out


def _stft(values: dict, default: StftParams) -> StftParams:
    return StftParams(values.pop("fft_size", default.fft_size), values.pop("hop", default.hop))


NUM = (int, float)


def _dataclass_keys(cls, skip=()) -> dict[str, Any]:
    kinds = {"int": int, "float": NUM, "bool": bool, "str": str}
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        base = t.split("|")[0].strip()
        out[f.name] = kinds.get(base, NUM)
    return out


def parse_config(data: dict) -> ProjectConfig:
    top = _take(
        data,
        "<root>",
        {
            "target_rate": int,
            "seed": int,
            "workers": int,
            "silence": dict,
            "noise": dict,
            "calibration": dict,
            "mel": dict,
            "search": dict,
            "motion": dict,
            "lipsync": dict,
            "assembly": dict,
            "providers": dict,
        },
    )
    try:
        sil = _take(top.get("silence", {}), "silence", {
            "fft_size": int, "hop": int, "threshold_db": NUM, "max_internal_gap": NUM,
            "kept_gap": NUM, "trim_edges": bool, "shorten_internal": bool,
        })
        sil_stft = _stft(sil, StftParams())
        threshold = sil.pop("threshold_db", -40.0)
        silence = SilencePolicy(**sil)

        noi = _take(top.get("noise", {}), "noise",
                    {**_dataclass_keys(NoiseGateParams, skip=("stft",)),
                     "fft_size": int, "hop": int, "profile": str})
        noise_stft = _stft(noi, StftParams())
        profile = noi.pop("profile", "edges")
        if profile not in ("edges", "self"):
            raise ConfigError("noise.profile must be 'edges' or 'self'")
        noise = NoiseGateParams(stft=noise_stft, **noi)

        cal = CalibrationPolicy(**_take(top.get("calibration", {}), "calibration",
                                        {"min_confidence": NUM, "flag_low_confidence": bool}))
        prep = PrepConfig(
            target_rate=top.get("target_rate", 22050),
            silence_stft=sil_stft,
            threshold_db=threshold,
            silence=silence,
            noise=noise,
            calibration=cal,
            noise_profile=profile,
            workers=top.get("workers", 1),
        )

        mel_t = _take(top.get("mel", {}), "mel",
                      {"n_mels": int, "f_min": NUM, "f_max": NUM, "epsilon": NUM})
        mel = MelConfig(**mel_t)

        se = _take(top.get("search", {}), "search",
                   {**_dataclass_keys(SearchConfig, skip=("stft", "mel")),
                    "fft_size": int, "hop": int, "sample_rate": int})
        search = SearchConfig(stft=_stft(se, SearchConfig().stft), mel=mel,
                              workers=se.pop("workers", top.get("workers", 1)), **se)

        motion = MotionConfig(**_take(top.get("motion", {}), "motion", _dataclass_keys(MotionConfig)))

        ls = _take(top.get("lipsync", {}), "lipsync",
                   {**_dataclass_keys(SyncConfig, skip=("stft", "mel", "mouth", "seed")),
                    "fft_size": int, "hop": int, "n_mels": int, "mouth": list})
        ls_default = SyncConfig()
        ls_stft = _stft(ls, ls_default.stft)
        n_mels = ls.pop("n_mels", ls_default.mel.n_mels)
        mouth = MouthRegion.from_list(ls.pop("mouth")) if "mouth" in ls else ls_default.mouth
        mouth.validate()
        lipsync = SyncConfig(stft=ls_stft, mel=replace(ls_default.mel, n_mels=n_mels),
                             mouth=mouth, seed=top.get("seed", 0), **ls)

        asm = _take(top.get("assembly", {}), "assembly",
                    {**_dataclass_keys(AssemblyConfig), "resolution": list})
        if "resolution" in asm:
            res = asm["resolution"]
            if len(res) != 2 or not all(isinstance(v, int) for v in res):
                raise ConfigError("assembly.resolution must be [width, height]")
            asm["resolution"] = tuple(res)
        assembly = AssemblyConfig(**asm)
        assembly.validate()

        providers = {}
        prov = _take(top.get("providers", {}), "providers", {r: dict for r in PROVIDER_ROLES})
        for role, spec in prov.items():
            spec = _take(spec, f"providers.{role}", {"kind": str, "locator": str})
            if set(spec) != {"kind", "locator"}:
                raise ConfigError(f"providers.{role} needs both 'kind' and 'locator'")
            if spec["kind"] not in PROVIDER_KINDS:
                raise ConfigError(f"providers.{role}.kind must be one of {PROVIDER_KINDS}")
            providers[role] = ProviderSpec(spec["kind"], spec["locator"])
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    return ProjectConfig(
        seed=top.get("seed", 0),
        prepare=prep,
        search=search,
        motion=motion,
        lipsync=lipsync,
        assembly=assembly,
        providers=providers,
    )


def load_config(path: str | Path | None) -> ProjectConfig:
    if path is None:
        return ProjectConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)

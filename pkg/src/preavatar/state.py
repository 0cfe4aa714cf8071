"""Per-project stage ledger with checksum-gated completion."""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from ._io import sha256_file, sha256_tree, write_json

# ledger entries, in pipeline order
STAGES = ("prepare", "rank", "animate", "assemble")


def digest(path: Path) -> str:
    return sha256_tree(path) if path.is_dir() else sha256_file(path)


def inputs_digest(paths: Iterable[Path], extra: str = "") -> str:
    """Combined digest of input files/directories (missing paths hash as absent)."""
    h = hashlib.sha256(extra.encode("utf-8"))
    for p in paths:
        p = Path(p)
        h.update(str(p.name).encode("utf-8"))
        h.update((digest(p) if p.exists() else "absent").encode("ascii"))
    return h.hexdigest()


class ProjectState:
    def __init__(self, project: Path, data: dict | None = None):
        self.project = Path(project)
        self.data = data or {"stages": {}, "selected_checkpoint": None}

    @property
    def path(self) -> Path:
        return self.project / "state" / "state.json"

    @classmethod
    def load(cls, project: str | Path) -> "ProjectState":
        state = cls(Path(project))
        if state.path.is_file():
            state.data = json.loads(state.path.read_text(encoding="utf-8"))
            state.data.setdefault("stages", {})
            state.data.setdefault("selected_checkpoint", None)
        return state

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        write_json(tmp, self.data)
        os.replace(tmp, self.path)

    @classmethod
    @contextmanager
    def locked(cls, project: str | Path) -> Iterator["ProjectState"]:
        """Exclusive advisory lock around load/modify/save."""
        lock_path = Path(project) / "state" / ".lock"
        lock_path.parent.mkdir(parents=True, exist_ok=True)
        with open(lock_path, "w") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                state = cls.load(project)
                yield state
                state.save()
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    @property
    def selected_checkpoint(self) -> str | None:
        return self.data.get("selected_checkpoint")

    def select(self, checkpoint_id: str) -> None:
        self.data["selected_checkpoint"] = checkpoint_id

    def _rel(self, p: Path) -> str:
        p = Path(p)
        try:
            return p.resolve().relative_to(self.project.resolve()).as_posix()
        except ValueError:
            return str(p.resolve())

    def record(self, stage: str, inputs: str, outputs: Iterable[Path], **info) -> None:
        outs = {self._rel(p): digest(Path(p)) for p in outputs}
        self.data["stages"][stage] = {
            "inputs": inputs,
            "outputs": outs,
            "completed_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            **info,
        }

    def entry(self, stage: str) -> dict | None:
        return self.data["stages"].get(stage)

    def complete(self, stage: str) -> bool:
        """True when every declared output exists and matches its checksum."""
        e = self.entry(stage)
        if not e:
            return False
        for rel, want in e["outputs"].items():
            p = Path(rel) if Path(rel).is_absolute() else self.project / rel
            if not p.exists() or digest(p) != want:
                return False
        return True

    def up_to_date(self, stage: str, inputs: str) -> bool:
        e = self.entry(stage)
        return bool(e) and e["inputs"] == inputs and self.complete(stage)

    def invalidate(self, stage: str) -> None:
        self.data["stages"].pop(stage, None)

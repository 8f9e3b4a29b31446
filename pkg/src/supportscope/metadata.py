"""Run provenance: what produced an artifact, with which inputs, seeds and estimator choices."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from supportscope import __version__
from supportscope._io import canonical_json, file_digest, read_json, sha256_text, write_json


@dataclass
class RunMetadata:
    command: list[str]
    config: dict[str, Any] = field(default_factory=dict)
    tool_version: str = __version__
    started_at: str | None = None
    finished_at: str | None = None
    endpoint: str | None = None
    seeds: dict[str, int] = field(default_factory=dict)
    sampling: dict[str, Any] = field(default_factory=dict)
    estimators: dict[str, str] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    notes: dict[str, Any] = field(default_factory=dict)

    def add_input(self, path: str | os.PathLike) -> str:
        digest = file_digest(path)
        self.inputs[Path(path).as_posix()] = digest
        return digest

    def stamp_start(self):
        self.started_at = _now()

    def stamp_end(self):
        self.finished_at = _now()

    @property
    def digest(self) -> str:
        """Content digest excluding wall-clock timestamps."""
        payload = asdict(self)
        payload.pop("started_at")
        payload.pop("finished_at")
        return "sha256:" + sha256_text(canonical_json(payload))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["digest"] = self.digest
        return d

    def save(self, path: str | os.PathLike) -> str:
        write_json(path, self.to_dict())
        return self.digest

    @classmethod
    def load(cls, path) -> "RunMetadata":
        d = read_json(path)
        d.pop("digest", None)
        return cls(**d)


def sidecar_path(out: str | os.PathLike) -> Path:
    out = Path(out)
    if out.is_dir():
        return out / "run.meta.json"
    return out.with_name(out.name + ".meta.json")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")

"""Run manifests: enough metadata to re-create every emitted file."""

from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    master_seed: int | None = None
    tool_version: str = __version__
    outputs: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    environment: dict[str, str] = field(
        default_factory=lambda: {"python": platform.python_version(), "numpy": np.__version__}
    )

    def add_output(self, path: Path) -> None:
        path = Path(path)
        self.outputs[path.name] = sha256_file(path)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))

    def verify(self, directory: Path) -> dict[str, bool]:
        """Compare recorded checksums against files in ``directory``."""
        directory = Path(directory)
        return {
            name: (directory / name).exists() and sha256_file(directory / name) == digest
            for name, digest in self.outputs.items()
        }

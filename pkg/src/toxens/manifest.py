"""Run manifests: every CLI command records what it did and what it wrote."""
from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .rng import fnv1a64

TOOL_VERSION = "0.1.0"


@dataclass
class RunManifest:
    command: str
    config_hash: int
    seeds: dict[str, int]
    artifacts: dict[str, str] = field(default_factory=dict)
    notes: dict[str, object] = field(default_factory=dict)
    started: float = field(default_factory=time.time)

    def add_artifact(self, name: str, path: str | Path) -> None:
        self.artifacts[name] = str(path)

    def write(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "command": self.command,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "artifacts": self.artifacts,
            "notes": self.notes,
            "wall_clock_seconds": time.time() - self.started,
            "versions": {
                "toxens": TOOL_VERSION,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
        }
        path = out_dir / f"manifest-{self.command.replace(' ', '-')}-{int(self.started)}.json"
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
        return path


def hash_config_text(text: str) -> int:
    return fnv1a64(text)

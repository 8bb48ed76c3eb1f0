"""Runtime knobs shared by the engine phases and the CLI."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from typing import Optional

from .mapreduce import DEFAULT_MEMORY_BUDGET

MODES = ("materialized", "backward", "hybrid")

# Environment variable overrides, e.g. PDSTAR_WORKERS=8.
_ENV_PREFIX = "PDSTAR_"


@dataclass
class RunConfig:
    workers: int = 1
    shuffle_budget_bytes: int = DEFAULT_MEMORY_BUDGET
    round_limit: int = 64
    depth_limit: int = 128
    mode: str = "hybrid"
    lenient_parse: bool = False
    canonicalize_sameas: bool = True
    tmp_dir: Optional[str] = None

    def __post_init__(self):
        for name in ("workers", "shuffle_budget_bytes", "round_limit", "depth_limit"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @classmethod
    def from_env(cls, **overrides) -> "RunConfig":
        values = {}
        for f in fields(cls):
            raw = os.environ.get(_ENV_PREFIX + f.name.upper())
            if raw is None:
                continue
            if f.type in ("int", int):
                values[f.name] = int(raw)
            elif f.type in ("bool", bool):
                values[f.name] = raw.lower() in ("1", "true", "yes", "on")
            else:
                values[f.name] = raw
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

"""Run configuration with every threshold pre-filled.

A single JSON file may supply defaults for any field; command-line flags
override it.  The resolved configuration is echoed next to every output so a
run can be replayed with ``--config <echo>``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

SCHEMA_VERSION = 1

# zlib.Z_DEFAULT_COMPRESSION resolves to level 6; pin it explicitly so ratios
# are stable across zlib builds.
ZLIB_LEVEL = 6

DEFAULT_C_GRID = (0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0)


@dataclass
class RunConfig:
    inputs: list[str] = field(default_factory=list)
    out: str = "out"

    # termination / loop heuristics
    max_tokens: int = 8192
    ngram_n: int = 4
    tail_fraction: float = 0.25
    unique_ngram_threshold: float = 0.5
    compression_threshold: float = 0.15
    zlib_level: int = ZLIB_LEVEL

    # grounding layers
    k_layers: int = 6
    layers: list[int] | None = None
    grounding_layers: dict[str, list[int]] = field(default_factory=dict)

    # probes / selective prediction
    levels: list[str] = field(default_factory=lambda: ["entropy_only", "entropy_plus_vision"])
    c_grid: list[float] = field(default_factory=lambda: list(DEFAULT_C_GRID))
    folds: int = 5
    repeats: int = 10
    train_fraction: float = 0.8
    alpha: float = 0.9
    veto_rate: float = 0.05
    ece_bins: int = 10
    q: float = 0.20
    interaction_C: float = 1.0
    interaction_bootstrap: int = 1000
    permutations: int = 20
    seed: int = 42

    # filters
    normal_stop_only: bool = True
    model_tags: list[str] | None = None
    dataset_tags: list[str] | None = None

    # synthetic generation (the synth command); keys are SynthConfig fields
    synth_kind: str = "corpus"
    synth: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def updated(self, **overrides: Any) -> "RunConfig":
        """Return a copy with the non-None overrides applied."""
        clean = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **clean)

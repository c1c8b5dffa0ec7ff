"""Plugin configuration, loaded from a single JSON file path argument."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class PluginConfig:
    dataset_root: str
    image_size: int = 32
    val_fraction: float = 0.2
    augmentations: dict = field(default_factory=lambda: {
        "hflip": True, "vflip": True, "noise": True, "rotation": True,
    })
    device: str = "cpu"
    seed: int = 0
    batch_size: int = 16
    learning_rate: float = 1e-3
    # Assumed magnitudes (unspecified upstream): rotation range +/-30 degrees,
    # gaussian noise sigma = 0.02 of dynamic range.
    rotation_degrees: float = 30.0
    noise_sigma: float = 0.02

    @classmethod
    def load(cls, path: str | Path) -> "PluginConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**doc)

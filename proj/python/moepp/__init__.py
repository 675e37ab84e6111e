"""MoE++ layer, formulas and a tiny trainer (C++ core)."""

import json

from ._core import (
    Layer,
    LayerConfig,
    NumericalError,
    adaptive_constant_count,
    capacity,
    complexity_ratio,
    route,
    tau_sweep,
)
from ._core import train as _train


def train(config):
    """Train from a config dict (same schema as the CLI's JSON files)."""
    if not isinstance(config, str):
        config = json.dumps(config)
    return _train(config)


__all__ = [
    "Layer",
    "LayerConfig",
    "NumericalError",
    "adaptive_constant_count",
    "capacity",
    "complexity_ratio",
    "route",
    "tau_sweep",
    "train",
]

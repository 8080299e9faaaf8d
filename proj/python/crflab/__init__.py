"""Periodic finite-difference curvature and flow laboratory."""

from ._core import (
    ConfigError,
    Error,
    GeometryError,
    NormalizationError,
    ricci,
    run_config,
    scalar_curvature,
    seeded_base_metric,
    verify,
    yamabe_normalize,
)

__all__ = [
    "ConfigError",
    "Error",
    "GeometryError",
    "NormalizationError",
    "ricci",
    "run_config",
    "scalar_curvature",
    "seeded_base_metric",
    "verify",
    "yamabe_normalize",
]

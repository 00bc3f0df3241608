"""Python access to the UniVarFL simulation core."""

from ._core import (
    ConfigError,
    canonical_config,
    config_digest,
    cross_entropy,
    gradcheck,
    hyperspherical_energy,
    normalize_rows,
    partition_report,
    run,
    singular_values,
    softmax_rows,
    spectral_entropy,
    variance_floor,
    variance_regularizer,
)

__all__ = [
    "ConfigError",
    "canonical_config",
    "config_digest",
    "cross_entropy",
    "gradcheck",
    "hyperspherical_energy",
    "normalize_rows",
    "partition_report",
    "run",
    "singular_values",
    "softmax_rows",
    "spectral_entropy",
    "variance_floor",
    "variance_regularizer",
]

from __future__ import annotations

from importlib.metadata import PackageNotFoundError, version


__all__ = [
    "archive",
    "classifier",
    "cli",
    "config",
    "data_source",
    "errors",
    "evolution",
    "ground_state",
    "models",
    "operator",
    "serialization",
    "spectral",
    "virial",
]


try:
    __version__ = version("nlslab")
except PackageNotFoundError:
    __version__ = "0.1.0"

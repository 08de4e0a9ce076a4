"""Bifurcation analysis and optimal flow control in a sudden-expansion channel."""

from ._core import (
    ConfigError,
    FormatError,
    InventoryError,
    ParameterError,
    SingularMatrixError,
    StructuralError,
    __version__,
    config_hash,
    fnv1a_hex,
    lu_solve,
    mesh_info,
    pod,
    preset_names,
    resolve_config,
    run,
    solve_state,
    verify,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "InventoryError",
    "ParameterError",
    "SingularMatrixError",
    "StructuralError",
    "__version__",
    "config_hash",
    "fnv1a_hex",
    "lu_solve",
    "mesh_info",
    "pod",
    "preset_names",
    "resolve_config",
    "run",
    "solve_state",
    "verify",
]

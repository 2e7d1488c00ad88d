"""Balanced truncation for stochastic systems with polynomial drift."""

from ._core import (
    ConfigError,
    DivergenceError,
    Error,
    NumericalError,
    balance,
    build_reaction_diffusion,
    classical_bound,
    compute_gramians,
    gap_scan,
    hankel_singular_values,
    relative_errors,
    run_pipeline,
    sha256_hex,
    spectral_abscissa,
)

__all__ = [
    "ConfigError",
    "DivergenceError",
    "Error",
    "NumericalError",
    "balance",
    "build_reaction_diffusion",
    "classical_bound",
    "compute_gramians",
    "gap_scan",
    "hankel_singular_values",
    "relative_errors",
    "run_pipeline",
    "sha256_hex",
    "spectral_abscissa",
]

"""Couplings of walks, Poisson processes and Brownian motions, and the full pipeline."""

from .dyadic import (
    CountingPath,
    couple_poisson_brownian,
    couple_sums_dyadic,
    independent_sums,
    walk_coupling_sups,
)
from .pipeline import (
    COUPLERS,
    CSV_HEADER,
    CoupledRealization,
    PipelineState,
    CouplingRun,
    phi_decomposition,
    phi_terms,
    pilot,
    realize,
    run_coupling,
    select_constants,
    total_deviation,
)
from .wstar import WStarPath, compose_limit_wiener, construct_wstar, wstar_conditional_variance

__all__ = [
    "COUPLERS",
    "CSV_HEADER",
    "CountingPath",
    "CoupledRealization",
    "PipelineState",
    "CouplingRun",
    "WStarPath",
    "compose_limit_wiener",
    "construct_wstar",
    "couple_poisson_brownian",
    "couple_sums_dyadic",
    "independent_sums",
    "phi_decomposition",
    "phi_terms",
    "pilot",
    "realize",
    "run_coupling",
    "select_constants",
    "total_deviation",
    "walk_coupling_sups",
    "wstar_conditional_variance",
]

"""Budgeted embedding-size search for streaming recommenders."""

from ._embudget import (
    EmbudgetError,
    InfeasibleBudgetError,
    MaskedEmbeddingTable,
    allocate,
    allocate_uniform,
    clamp_and_repair,
    comparison_csv,
    compute_reward,
    default_config,
    pooled_frequency,
    resolve_budget,
    run,
    sample_fractions,
    segment,
    state_length,
    synthesize_csv,
)

__all__ = [
    "EmbudgetError",
    "InfeasibleBudgetError",
    "MaskedEmbeddingTable",
    "allocate",
    "allocate_uniform",
    "clamp_and_repair",
    "comparison_csv",
    "compute_reward",
    "default_config",
    "pooled_frequency",
    "resolve_budget",
    "run",
    "sample_fractions",
    "segment",
    "state_length",
    "synthesize_csv",
]

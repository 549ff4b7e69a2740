from .events import (
    DriftSpec,
    InteractionEvent,
    PeriodDataset,
    UserSplit,
    build_periods,
    period_boundaries,
)
from .ingest import ingest_tsv, k_core
from .store import load_dataset, save_dataset
from .synthetic import generate_synthetic
from .windows import build_training_windows

__all__ = [
    "DriftSpec",
    "InteractionEvent",
    "PeriodDataset",
    "UserSplit",
    "build_periods",
    "build_training_windows",
    "generate_synthetic",
    "ingest_tsv",
    "k_core",
    "load_dataset",
    "period_boundaries",
    "save_dataset",
]

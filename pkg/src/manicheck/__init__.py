"""Retrieval-augmented manipulated-content detection toolkit."""

from .models import (
    ClaimKind,
    ClaimRecord,
    ManipulationSpan,
    Prediction,
    Veracity,
    Verdict,
    VerdictLabel,
)
from .pipeline import Mode, PipelineConfig, ProviderConfig, build_providers, detect

__all__ = [
    "ClaimKind",
    "ClaimRecord",
    "ManipulationSpan",
    "Mode",
    "PipelineConfig",
    "Prediction",
    "ProviderConfig",
    "Veracity",
    "Verdict",
    "VerdictLabel",
    "build_providers",
    "detect",
]

__version__ = "0.1.0"

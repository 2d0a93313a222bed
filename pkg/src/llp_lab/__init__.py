"""Learning from label proportions: debiased bag losses, MoM tournaments, SGD training."""

from .core import (
    Bag,
    BaggedDataset,
    ConfigError,
    DecomposedLoss,
    DomainError,
    EmptyDatasetError,
    Example,
    FiniteHypothesisClass,
    Hypothesis,
    InsufficientSamplesError,
    LLPError,
    MulticlassLoss,
    SyntheticDistribution,
    decompose_binary,
    decompose_total,
    instance_loss,
)

__version__ = "0.1.0"

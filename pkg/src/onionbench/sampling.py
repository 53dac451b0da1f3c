"""Class-balanced resampling for long-tailed training sets.

Each sample is drawn with probability proportional to 1/count(class), with
replacement, so the expected class marginal of an epoch is exactly uniform
(1/C) whatever the raw imbalance.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .dataset import ClassCatalog
from .errors import ConfigError, LabelError


def compute_sample_weights(catalog: ClassCatalog, labels: np.ndarray) -> np.ndarray:
    """Per-sample draw weights 1/count(class(i)), as float64."""
    counts = np.asarray(catalog.counts, dtype=np.int64)
    if (counts <= 0).any():
        raise ConfigError(f"all class counts must be positive, got {catalog.counts}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= len(counts)):
        raise LabelError(f"labels outside [0, {len(counts)})")
    return 1.0 / counts[labels].astype(np.float64)


def class_marginals(catalog: ClassCatalog) -> list[Fraction]:
    """Exact per-class draw probability under 1/count weighting.

    count_c * (1/count_c) / sum_k count_k * (1/count_k) = 1/C for every class,
    provided the label tally matches the catalog counts.
    """
    counts = [Fraction(c) for c in catalog.counts]
    if any(c <= 0 for c in counts):
        raise ConfigError(f"all class counts must be positive, got {catalog.counts}")
    mass = [c * (1 / c) for c in counts]
    total = sum(mass)
    return [m / total for m in mass]


def draw_epoch_indices(weights: np.ndarray, epoch_len: int | None, seed) -> np.ndarray:
    """Sample ``epoch_len`` dataset indices with replacement (default: len(weights))."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 1 or weights.size == 0:
        raise ConfigError("weights must be a non-empty 1-D array")
    if (weights < 0).any() or not np.isfinite(weights).all():
        raise ConfigError("weights must be finite and non-negative")
    total = weights.sum()
    if total <= 0:
        raise ConfigError("weights must not all be zero")
    if epoch_len is None:
        epoch_len = weights.size
    if epoch_len <= 0:
        raise ConfigError(f"epoch_len must be positive, got {epoch_len}")
    rng = np.random.default_rng(seed)
    return rng.choice(weights.size, size=epoch_len, replace=True, p=weights / total)

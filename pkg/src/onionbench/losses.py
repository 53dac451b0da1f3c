"""Classification losses for long-tailed targets.

Weighted cross-entropy scales each sample's negative log-likelihood by its
class weight max_count / count_class (most frequent class gets exactly 1.0).
Focal loss damps well-classified samples by (1 - p_t)^gamma. Mixed loss blends
two hard-label losses for region-mixed batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .dataset import ClassCatalog
from .errors import ConfigError, LabelError, ShapeError

_LOG_FLOOR = math.log(1e-12)


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss weights, float64, all positive."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size == 0:
            raise ShapeError(f"weights must be a non-empty vector, got shape {w.shape}")
        if (w <= 0).any() or not np.isfinite(w).all():
            raise ConfigError("class weights must be finite and positive")

    def __len__(self) -> int:
        return self.weights.size


def compute_class_weights(catalog: ClassCatalog) -> ClassWeights:
    """Inverse-frequency weights max_count/count_c; the modal class gets exactly 1.0."""
    counts = np.asarray(catalog.counts, dtype=np.int64)
    if (counts <= 0).any():
        raise ConfigError(f"all class counts must be positive, got {catalog.counts}")
    return ClassWeights(counts.max() / counts.astype(np.float64))


def uniform_weights(num_classes: int) -> ClassWeights:
    if num_classes < 1:
        raise ConfigError(f"need at least one class, got {num_classes}")
    return ClassWeights(np.ones(num_classes, dtype=np.float64))


def _as_weight_tensor(weights, logits: torch.Tensor) -> torch.Tensor:
    w = weights.weights if isinstance(weights, ClassWeights) else np.asarray(weights, dtype=np.float64)
    if w.shape != (logits.shape[1],):
        raise ShapeError(f"weights shape {w.shape} does not match {logits.shape[1]} classes")
    return torch.as_tensor(w, dtype=logits.dtype, device=logits.device)


def _check_targets(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (N, C), got {tuple(logits.shape)}")
    labels = labels.long()
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels shape {tuple(labels.shape)} does not match batch {logits.shape[0]}")
    if labels.numel() == 0:
        raise ShapeError("empty batch")
    if int(labels.min()) < 0 or int(labels.max()) >= logits.shape[1]:
        raise LabelError(f"labels outside [0, {logits.shape[1]})")
    return labels


def _floored_log_probs(logits: torch.Tensor) -> torch.Tensor:
    # floor at log(1e-12) so a confidently wrong sample cannot produce inf
    return torch.clamp(F.log_softmax(logits, dim=1), min=_LOG_FLOOR)


def weighted_cross_entropy(logits: torch.Tensor, labels: torch.Tensor, weights=None) -> torch.Tensor:
    """Mean over samples of -w_y * log p_y. ``weights=None`` means unweighted."""
    labels = _check_targets(logits, labels)
    nll = -_floored_log_probs(logits)[torch.arange(labels.shape[0]), labels]
    if weights is not None:
        nll = _as_weight_tensor(weights, logits)[labels] * nll
    return nll.mean()


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return weighted_cross_entropy(logits, labels, None)


def focal_loss(logits: torch.Tensor, labels: torch.Tensor,
               alpha=None, gamma: float = 2.0) -> torch.Tensor:
    """Mean over samples of -alpha_y * (1 - p_y)^gamma * log p_y.

    gamma = 0 with uniform alpha reduces exactly to cross-entropy.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    labels = _check_targets(logits, labels)
    log_pt = _floored_log_probs(logits)[torch.arange(labels.shape[0]), labels]
    loss = -log_pt
    if gamma != 0.0:
        loss = (1.0 - log_pt.exp()).pow(gamma) * loss
    if alpha is not None:
        loss = _as_weight_tensor(alpha, logits)[labels] * loss
    return loss.mean()


def mixed_loss(base, logits: torch.Tensor, labels_a: torch.Tensor,
               labels_b: torch.Tensor, lam: float) -> torch.Tensor:
    """lam * base(logits, labels_a) + (1 - lam) * base(logits, labels_b)."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    return lam * base(logits, labels_a) + (1.0 - lam) * base(logits, labels_b)


@dataclass(frozen=True)
class LossConfig:
    kind: str = "wce"            # "ce" | "wce" | "focal"
    gamma: float = 2.0
    focal_alpha: str = "uniform"  # "uniform" | "class-weights"

    def __post_init__(self):
        if self.kind not in ("ce", "wce", "focal"):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.focal_alpha not in ("uniform", "class-weights"):
            raise ConfigError(f"unknown focal_alpha {self.focal_alpha!r}")


def make_criterion(config: LossConfig, catalog: ClassCatalog):
    """Build a (logits, labels) -> scalar callable from the config and catalog."""
    if config.kind == "ce":
        return cross_entropy
    if config.kind == "wce":
        weights = compute_class_weights(catalog)
        return lambda logits, labels: weighted_cross_entropy(logits, labels, weights)
    alpha = compute_class_weights(catalog) if config.focal_alpha == "class-weights" else None
    gamma = config.gamma
    return lambda logits, labels: focal_loss(logits, labels, alpha, gamma)

"""Training and evaluation loops.

Everything random is keyed off (seed, epoch, position) tuples fed to fresh
numpy generators, plus one torch.manual_seed at model build, so a run is a
pure function of its config. Early stopping tracks validation macro-F1 and
the best epoch's weights are restored before the test pass.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .augment import PipelineConfig, cutmix_batch, eval_pipeline, pipeline_a, pipeline_c
from .dataset import ClassCatalog, FoldPlan, LabeledImage, SplitPlan
from .errors import ConfigError, DivergenceError, EvaluationError, StratificationError
from .losses import LossConfig, make_criterion, mixed_loss
from .metrics import ConfusionMatrix, MetricsReport, accumulate, report
from .model import ImageClassifier, ModelConfig, build_model, count_parameters
from .sampling import compute_sample_weights, draw_epoch_indices

AUG_KINDS = ("none", "A", "C", "D", "C+D")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    weight_decay: float = 1e-4
    patience: int = 10
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class RunRecord:
    experiment_id: str
    config: dict
    seed: int
    deterministic: bool
    param_count: int
    class_names: list[str]
    class_counts: list[int]
    train_losses: list[float]
    val_macro_f1: list[float]
    best_epoch: int
    test_report: dict
    confusion: list[list[int]]
    wall_seconds: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        d = json.loads(text)
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls)})

    def metrics(self) -> MetricsReport:
        return MetricsReport.from_dict(self.test_report)

    def confusion_matrix(self) -> ConfusionMatrix:
        return ConfusionMatrix(np.asarray(self.confusion, dtype=np.int64))


def _transform(image: LabeledImage, aug_kind: str, cfg: PipelineConfig, seed) -> np.ndarray:
    if aug_kind == "A":
        return pipeline_a(image, cfg, seed).pixels
    if aug_kind in ("C", "C+D"):
        return pipeline_c(image, cfg, seed).pixels
    # "none" and "D": plain resize + normalize (D mixes at batch level)
    return eval_pipeline(image, cfg).pixels


def _to_torch(batch: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2)))


def train_epoch(model: ImageClassifier, optimizer, images: list[LabeledImage],
                labels: np.ndarray, order: np.ndarray, pipeline_cfg: PipelineConfig,
                aug_kind: str, criterion, *, seed: int, epoch: int,
                batch_size: int) -> float:
    """One pass over ``order``; returns the mean batch loss."""
    if aug_kind not in AUG_KINDS:
        raise ConfigError(f"unknown augmentation kind {aug_kind!r}")
    if np.unique(labels[order]).size < 2:
        raise ConfigError("training requires at least two classes present")
    cutmix_on = aug_kind in ("D", "C+D")
    model.train()
    losses = []
    for b, start in enumerate(range(0, len(order), batch_size)):
        idx = order[start:start + batch_size]
        x_np = np.stack([
            _transform(images[i], aug_kind, pipeline_cfg, [seed, epoch, start + pos, 0])
            for pos, i in enumerate(idx)
        ])
        y = torch.from_numpy(labels[idx].astype(np.int64))
        batch_rng = np.random.default_rng([seed, epoch, b, 1])
        mixed = cutmix_on and len(idx) >= 2 and batch_rng.uniform() < pipeline_cfg.cutmix_prob
        if mixed:
            x_np, perm, lam = cutmix_batch(x_np, batch_rng)
        logits = model(_to_torch(x_np))
        if mixed:
            loss = mixed_loss(criterion, logits, y, y[perm], lam)
        else:
            loss = criterion(logits, y)
        if not torch.isfinite(loss):
            raise DivergenceError(f"non-finite loss in epoch {epoch}, batch {b}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))
    if not losses:
        raise ConfigError("epoch order was empty")
    return float(np.mean(losses))


def evaluate(model: ImageClassifier, images: list[LabeledImage], labels: np.ndarray,
             indices, pipeline_cfg: PipelineConfig,
             batch_size: int = 64) -> tuple[MetricsReport, ConfusionMatrix]:
    """Deterministic pass over ``indices``: resize+normalize, argmax, score."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise EvaluationError("no samples to evaluate")
    model.eval()
    cm = ConfusionMatrix.empty(model.class_count)
    with torch.no_grad():
        for start in range(0, len(indices), batch_size):
            idx = indices[start:start + batch_size]
            x_np = np.stack([eval_pipeline(images[i], pipeline_cfg).pixels for i in idx])
            preds = model(_to_torch(x_np)).argmax(dim=1).numpy()
            cm = accumulate(cm, labels[idx], preds)
    return report(cm), cm


def _make_optimizer(model, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                                weight_decay=cfg.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=cfg.learning_rate,
                           momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def _check_disjoint(split: SplitPlan) -> None:
    train = set(split.train_indices)
    if train & set(split.val_indices) or train & set(split.test_indices):
        raise StratificationError("training indices leak into an evaluation split")


def fit(images: list[LabeledImage], catalog: ClassCatalog, split: SplitPlan,
        model_cfg: ModelConfig, pipeline_cfg: PipelineConfig, loss_cfg: LossConfig,
        train_cfg: TrainConfig, *, aug_kind: str = "A", use_sampler: bool = False,
        experiment_id: str = "adhoc",
        config_snapshot: dict | None = None) -> tuple[RunRecord, ImageClassifier, ConfusionMatrix]:
    """Train with early stopping on validation macro-F1, then score the test split."""
    if aug_kind not in AUG_KINDS:
        raise ConfigError(f"unknown augmentation kind {aug_kind!r}")
    if use_sampler and loss_cfg.kind != "ce":
        raise ConfigError("the balancing sampler pairs with plain cross-entropy only")
    _check_disjoint(split)
    start = time.perf_counter()
    labels = np.array([im.label for im in images], dtype=np.int64)
    train_idx = np.asarray(split.train_indices, dtype=np.int64)
    if np.unique(labels[train_idx]).size < 2:
        raise ConfigError("training split must contain at least two classes")

    torch.use_deterministic_algorithms(train_cfg.deterministic)
    model = build_model(model_cfg, len(catalog), train_cfg.seed)
    optimizer = _make_optimizer(model, train_cfg)
    criterion = make_criterion(loss_cfg, catalog)

    sample_weights = None
    if use_sampler:
        subset_counts = np.bincount(labels[train_idx], minlength=len(catalog))
        subset_catalog = ClassCatalog(catalog.names, tuple(int(c) for c in subset_counts))
        sample_weights = compute_sample_weights(subset_catalog, labels[train_idx])

    train_losses: list[float] = []
    val_scores: list[float] = []
    best_f1 = -1.0
    best_epoch = 0
    best_state: dict[str, torch.Tensor] = {}
    for epoch in range(1, train_cfg.epochs + 1):
        if use_sampler:
            positions = draw_epoch_indices(sample_weights, None, [train_cfg.seed, epoch, 2])
            order = train_idx[positions]
        else:
            rng = np.random.default_rng([train_cfg.seed, epoch, 2])
            order = train_idx[rng.permutation(train_idx.size)]
        loss = train_epoch(model, optimizer, images, labels, order, pipeline_cfg,
                           aug_kind, criterion, seed=train_cfg.seed, epoch=epoch,
                           batch_size=train_cfg.batch_size)
        train_losses.append(loss)
        val_rep, _ = evaluate(model, images, labels, split.val_indices, pipeline_cfg,
                              train_cfg.batch_size)
        val_scores.append(val_rep.macro_f1)
        if val_rep.macro_f1 > best_f1:
            best_f1 = val_rep.macro_f1
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if epoch - best_epoch >= train_cfg.patience:
            break

    model.load_state_dict(best_state)
    test_rep, cm = evaluate(model, images, labels, split.test_indices, pipeline_cfg,
                            train_cfg.batch_size)
    record = RunRecord(
        experiment_id=experiment_id,
        config=config_snapshot or {},
        seed=train_cfg.seed,
        deterministic=train_cfg.deterministic,
        param_count=count_parameters(model),
        class_names=list(catalog.names),
        class_counts=list(catalog.counts),
        train_losses=train_losses,
        val_macro_f1=val_scores,
        best_epoch=best_epoch,
        test_report=test_rep.to_dict(),
        confusion=cm.counts.tolist(),
        wall_seconds=time.perf_counter() - start,
    )
    return record, model, cm


def derive_fold_seed(base_seed: int, fold_index: int) -> int:
    """Stable distinct seed per fold."""
    return int(np.random.SeedSequence([base_seed, fold_index]).generate_state(1)[0])


def run_cross_validation(images: list[LabeledImage], catalog: ClassCatalog,
                         folds: FoldPlan, model_cfg: ModelConfig,
                         pipeline_cfg: PipelineConfig, loss_cfg: LossConfig,
                         train_cfg: TrainConfig, *, aug_kind: str = "A",
                         use_sampler: bool = False, experiment_id: str = "adhoc",
                         config_snapshot: dict | None = None,
                         persist=None) -> tuple[list[RunRecord], float, float]:
    """Independent model per fold; each fold's held-out set doubles as its report set.

    ``persist(record, cm, fold_index)`` runs after each fold, so partial
    results survive a later fold's divergence. Returns (records, mean, std)
    of the held-out macro-F1.
    """
    records: list[RunRecord] = []
    for i, (fold_train, fold_val) in enumerate(folds.folds):
        fold_cfg = dataclasses.replace(train_cfg, seed=derive_fold_seed(train_cfg.seed, i))
        split = SplitPlan(train_indices=tuple(fold_train), val_indices=tuple(fold_val),
                          test_indices=tuple(fold_val), seed=fold_cfg.seed, stratified=True)
        snapshot = dict(config_snapshot or {})
        snapshot["cv_fold"] = i
        record, _, cm = fit(images, catalog, split, model_cfg, pipeline_cfg,
                            loss_cfg, train_cfg=fold_cfg, aug_kind=aug_kind,
                            use_sampler=use_sampler,
                            experiment_id=f"{experiment_id}-fold{i}",
                            config_snapshot=snapshot)
        records.append(record)
        if persist is not None:
            persist(record, cm, i)
    scores = np.array([r.metrics().macro_f1 for r in records])
    std = float(scores.std(ddof=1)) if scores.size > 1 else 0.0
    return records, float(scores.mean()), std

"""Experiment registry and orchestration.

Twelve registered configurations: four 9-class model/balancing cells, seven
8-class loss/attention/pipeline variants, and one binary coarsening run. Every
config serializes losslessly so a persisted snapshot can be re-run verbatim.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .augment import PipelineConfig
from .cbam import CbamConfig
from .dataset import (
    ClassCatalog,
    LabeledImage,
    coarsen_to_binary,
    load_manifest,
    make_folds,
    merge_classes,
    stratified_split,
)
from .errors import ConfigError
from .losses import LossConfig
from .model import BACKBONES, ModelConfig
from .reporting import write_run_artifacts
from .synthetic import SyntheticSpec, desk_spec
from .training import RunRecord, TrainConfig, fit, run_cross_validation


@dataclass(frozen=True)
class MergeRule:
    first: str
    second: str
    merged: str


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    description: str = ""
    synthetic: SyntheticSpec | None = None
    data_root: str | None = None
    manifest: str | None = None
    merges: tuple[MergeRule, ...] = ()
    binary_healthy: str | None = None
    backbone: str = "d121s"
    use_cbam: bool = False
    cbam: CbamConfig = field(default_factory=CbamConfig)
    head_hidden: tuple[int, ...] = (256,)
    head_dropout: float = 0.3
    aug_kind: str = "A"
    use_sampler: bool = False
    loss: LossConfig = field(default_factory=LossConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fractions: tuple[float, float, float] = (0.64, 0.16, 0.20)
    cv_folds: int = 5

    def __post_init__(self):
        if not self.id:
            raise ConfigError("experiment id must be non-empty")
        has_synth = self.synthetic is not None
        has_files = self.manifest is not None
        if has_synth == has_files:
            raise ConfigError(f"{self.id}: exactly one data source (synthetic or manifest) required")
        if has_files and self.data_root is None:
            raise ConfigError(f"{self.id}: manifest source needs data_root")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"{self.id}: unknown backbone {self.backbone!r}; known: {sorted(BACKBONES)}")
        if self.cv_folds < 2:
            raise ConfigError(f"{self.id}: cv_folds must be >= 2, got {self.cv_folds}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(backbone=BACKBONES[self.backbone], use_cbam=self.use_cbam,
                           cbam=self.cbam, head_hidden=self.head_hidden,
                           head_dropout=self.head_dropout)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        # TOML has no null: drop unset optionals from the snapshot
        return {k: v for k, v in d.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        def build(key, fn, default):
            if key not in d:
                return default
            try:
                return fn(d[key])
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"{key}: {exc}") from exc

        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            id=build("id", str, None) or "",
            description=build("description", str, ""),
            synthetic=build("synthetic", SyntheticSpec.from_dict, None),
            data_root=build("data_root", str, None),
            manifest=build("manifest", str, None),
            merges=build("merges", lambda ms: tuple(MergeRule(**m) for m in ms), ()),
            binary_healthy=build("binary_healthy", str, None),
            backbone=build("backbone", str, "d121s"),
            use_cbam=build("use_cbam", bool, False),
            cbam=build("cbam", lambda c: CbamConfig(**c), CbamConfig()),
            head_hidden=build("head_hidden", lambda w: tuple(int(x) for x in w), (256,)),
            head_dropout=build("head_dropout", float, 0.3),
            aug_kind=build("aug_kind", str, "A"),
            use_sampler=build("use_sampler", bool, False),
            loss=build("loss", lambda c: LossConfig(**c), LossConfig()),
            pipeline=build("pipeline", lambda c: PipelineConfig(**{k: tuple(v) if isinstance(v, list) else v
                                                                   for k, v in c.items()}), PipelineConfig()),
            train=build("train", lambda c: TrainConfig(**c), TrainConfig()),
            fractions=build("fractions", lambda f: tuple(float(x) for x in f), (0.64, 0.16, 0.20)),
            cv_folds=build("cv_folds", int, 5),
        )

    @classmethod
    def from_file(cls, path: Path | str) -> "ExperimentConfig":
        path = Path(path)
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                return cls.from_dict(tomllib.load(fh))
        if path.suffix == ".json":
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        raise ConfigError(f"config file must be .toml or .json, got {path.name}")


MERGE_LOOKALIKES = MergeRule("anthracnose", "twister", "anthracnose_twister")

# Shared desk-scale defaults for the registry. Seed 7 fixes the dataset;
# train.seed fixes initialization and batching.
_DESK = desk_spec(seed=7)
_PIPELINE = PipelineConfig(target_size=64)
_TRAIN = TrainConfig(epochs=60, batch_size=32, learning_rate=1e-3,
                     optimizer="adam", weight_decay=1e-4, patience=10,
                     seed=0, deterministic=True)


def _experiment(exp_id: str, description: str, **kw) -> ExperimentConfig:
    base = dict(synthetic=_DESK, pipeline=_PIPELINE, train=_TRAIN)
    base.update(kw)
    return ExperimentConfig(id=exp_id, description=description, **base)


def build_registry() -> dict[str, ExperimentConfig]:
    """The twelve registered runs: 4 model/balancing cells, 7 loss/pipeline
    variants on the merged 8-class set, 1 binary coarsening run."""
    merged = dict(merges=(MERGE_LOOKALIKES,))
    table2 = dict(merged, backbone="d121s")
    entries = [
        _experiment("table1-r50-sampler-ce", "9-class, residual backbone, balancing sampler + CE",
                    backbone="r50s", use_sampler=True, aug_kind="none", loss=LossConfig(kind="ce")),
        _experiment("table1-r50-wce-a", "9-class, residual backbone, WCE + geometric augmentation",
                    backbone="r50s", aug_kind="A", loss=LossConfig(kind="wce")),
        _experiment("table1-d121-sampler-ce", "9-class, dense backbone, balancing sampler + CE",
                    backbone="d121s", use_sampler=True, aug_kind="none", loss=LossConfig(kind="ce")),
        _experiment("table1-d121-wce-a", "9-class, dense backbone, WCE + geometric augmentation",
                    backbone="d121s", aug_kind="A", loss=LossConfig(kind="wce")),
        _experiment("table2-d121-wce-a", "8-class, WCE, geometric augmentation",
                    aug_kind="A", loss=LossConfig(kind="wce"), **table2),
        _experiment("table2-d121-cbam-wce-a", "8-class, attention, WCE, geometric augmentation",
                    use_cbam=True, aug_kind="A", loss=LossConfig(kind="wce"), **table2),
        _experiment("table2-d121-cbam-focal-a", "8-class, attention, focal loss, geometric augmentation",
                    use_cbam=True, aug_kind="A", loss=LossConfig(kind="focal", gamma=2.0), **table2),
        _experiment("table2-d121-wce-c", "8-class, WCE, one-of photometric menu",
                    aug_kind="C", loss=LossConfig(kind="wce"), **table2),
        _experiment("table2-d121-wce-d", "8-class, WCE, region mixing",
                    aug_kind="D", loss=LossConfig(kind="wce"), **table2),
        _experiment("table2-d121-cbam-wce-cd", "8-class, attention, WCE, menu + region mixing",
                    use_cbam=True, aug_kind="C+D", loss=LossConfig(kind="wce"), **table2),
        _experiment("table2-d121-cbam-wce-d", "8-class, attention, WCE, region mixing",
                    use_cbam=True, aug_kind="D", loss=LossConfig(kind="wce"), **table2),
        _experiment("table4-d121-cbam-wce-d-binary", "healthy-vs-rest coarsening of the best setup",
                    use_cbam=True, aug_kind="D", loss=LossConfig(kind="wce"),
                    binary_healthy="healthy", **table2),
    ]
    registry = {e.id: e for e in entries}
    if len(registry) != len(entries):
        raise ConfigError("duplicate experiment ids in registry")
    return registry


def registry_ids(group: str | None = None) -> list[str]:
    ids = list(build_registry())
    if group is None:
        return ids
    matches = [i for i in ids if i.startswith(group)]
    if not matches:
        raise ConfigError(f"no registered experiments match group {group!r}")
    return matches


def get_experiment(exp_id: str) -> ExperimentConfig:
    registry = build_registry()
    if exp_id not in registry:
        raise ConfigError(f"unknown experiment id {exp_id!r}; see `list` for registered ids")
    return registry[exp_id]


def prepare_data(cfg: ExperimentConfig) -> tuple[list[LabeledImage], ClassCatalog]:
    """Materialize the config's dataset, then apply merges and coarsening."""
    if cfg.synthetic is not None:
        from .synthetic import generate_synthetic
        images, catalog = generate_synthetic(cfg.synthetic)
    else:
        images, catalog = load_manifest(cfg.data_root, cfg.manifest)
    for rule in cfg.merges:
        catalog, images = merge_classes(catalog, images, (rule.first, rule.second), rule.merged)
    if cfg.binary_healthy is not None:
        catalog, images = coarsen_to_binary(catalog, images, cfg.binary_healthy)
    return images, catalog


def _unique_dir(root: Path, stem: str) -> Path:
    out = root / f"{stem}-{time.strftime('%Y%m%d-%H%M%S')}"
    n = 1
    while out.exists():
        out = root / f"{stem}-{time.strftime('%Y%m%d-%H%M%S')}-{n}"
        n += 1
    out.mkdir(parents=True)
    return out


def execute(cfg: ExperimentConfig, out_root: Path | str, *, cv: bool = False) -> Path:
    """Run one experiment end to end and persist its artifacts.

    Returns the created run directory. With ``cv`` the run trains one model
    per fold over the pooled train+val indices and writes per-fold artifacts
    plus an aggregate summary.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    images, catalog = prepare_data(cfg)
    split = stratified_split(catalog, images, cfg.fractions, cfg.train.seed)
    out_dir = _unique_dir(out_root, cfg.id)
    snapshot = cfg.to_dict()
    (out_dir / "config.json").write_text(json.dumps(snapshot, indent=2), encoding="utf-8")
    (out_dir / "split.json").write_text(split.to_json(), encoding="utf-8")

    common = dict(aug_kind=cfg.aug_kind, use_sampler=cfg.use_sampler,
                  experiment_id=cfg.id, config_snapshot=snapshot)
    if cv:
        pool = tuple(sorted(split.train_indices + split.val_indices))
        labels = [images[i].label for i in pool]
        folds = make_folds(pool, labels, cfg.cv_folds, cfg.train.seed)

        def persist(record: RunRecord, cm, fold_index: int) -> None:
            write_run_artifacts(record, out_dir / f"fold{fold_index}")

        records, mean, std = run_cross_validation(
            images, catalog, folds, cfg.model_config(), cfg.pipeline, cfg.loss,
            cfg.train, persist=persist, **common)
        summary = {"experiment_id": cfg.id, "folds": cfg.cv_folds,
                   "macro_f1_mean": mean, "macro_f1_std": std,
                   "fold_macro_f1": [r.metrics().macro_f1 for r in records]}
        (out_dir / "cv_summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    else:
        record, model, cm = fit(images, catalog, split, cfg.model_config(),
                                cfg.pipeline, cfg.loss, cfg.train, **common)
        write_run_artifacts(record, out_dir)
        from .model import save_checkpoint
        save_checkpoint(model, {"experiment_id": cfg.id, "model": dataclasses.asdict(cfg.model_config())},
                        out_dir / "checkpoint.ckpt")
    return out_dir


def gamma_grid(cfg: ExperimentConfig, gammas, out_root: Path | str) -> list[tuple[float, Path]]:
    """Re-run a focal-loss experiment across a gamma grid."""
    results = []
    for g in gammas:
        variant = dataclasses.replace(
            cfg, id=f"{cfg.id}-gamma{g:g}",
            loss=dataclasses.replace(cfg.loss, kind="focal", gamma=float(g)))
        results.append((float(g), execute(variant, out_root)))
    return results

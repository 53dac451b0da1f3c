"""Imbalanced leaf-image classification benchmark: data, models, training, CLI."""

from .augment import (
    MaskBox,
    PipelineConfig,
    SoftLabel,
    apply_cutmix,
    box_from_lambda,
    cutmix_batch,
    eval_pipeline,
    pipeline_a,
    pipeline_c,
    sample_cutmix_box,
)
from .cbam import Cbam, CbamConfig, ChannelAttention, SpatialAttention, cbam_param_count
from .dataset import (
    ClassCatalog,
    FoldPlan,
    LabeledImage,
    SplitPlan,
    coarsen_to_binary,
    load_manifest,
    make_folds,
    merge_classes,
    scan_directory,
    stratified_split,
    write_manifest,
)
from .experiments import ExperimentConfig, MergeRule, build_registry, execute, get_experiment
from .losses import (
    ClassWeights,
    LossConfig,
    compute_class_weights,
    cross_entropy,
    focal_loss,
    make_criterion,
    mixed_loss,
    uniform_weights,
    weighted_cross_entropy,
)
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    accumulate,
    coarsen_confusion,
    minority_mask,
    minority_mean_f1,
    per_class_table,
    report,
)
from .model import (
    BACKBONES,
    BackboneSpec,
    ImageClassifier,
    ModelConfig,
    build_model,
    count_parameters,
    load_checkpoint,
    parameter_breakdown,
    save_checkpoint,
)
from .sampling import class_marginals, compute_sample_weights, draw_epoch_indices
from .synthetic import SyntheticSpec, TextureParams, desk_spec, field_spec, generate_synthetic, write_dataset
from .training import RunRecord, TrainConfig, evaluate, fit, run_cross_validation, train_epoch

__version__ = "0.1.0"

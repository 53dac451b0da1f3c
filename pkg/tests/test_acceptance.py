"""Acceptance gate: one test per shipped criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s``. Criteria 6 and 7 train
twelve desk-scale models (four configurations, three seeds) and dominate the
runtime; everything else finishes in seconds.
"""

import dataclasses
import hashlib
import math

import numpy as np
import pytest
import torch

from onionbench.augment import SoftLabel, apply_cutmix, box_from_lambda, sample_cutmix_box
from onionbench.cbam import Cbam, CbamConfig, ChannelAttention, SpatialAttention, cbam_param_count
from onionbench.dataset import ClassCatalog, make_folds, stratified_split
from onionbench.experiments import build_registry, execute, get_experiment, prepare_data
from onionbench.losses import (
    LossConfig,
    compute_class_weights,
    cross_entropy,
    focal_loss,
    mixed_loss,
    uniform_weights,
    weighted_cross_entropy,
)
from onionbench.metrics import ConfusionMatrix, accumulate, coarsen_confusion, minority_mean_f1, report
from onionbench.model import BackboneSpec, ModelConfig, build_model, count_parameters
from onionbench.sampling import class_marginals, compute_sample_weights, draw_epoch_indices
from onionbench.training import fit
from tests._oracles import brute_force_scores, general_position, relative_error


def _verdict(num: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}: criterion {num} - {detail}"
    print(f"\n{line}")
    assert ok, line


# ---------------------------------------------------------------------------
# 1. loss correctness


def test_criterion_1_loss_correctness():
    torch.manual_seed(0)
    logits = torch.randn(64, 9)
    labels = torch.randint(0, 9, (64,))
    unit_gap = abs(weighted_cross_entropy(logits, labels, uniform_weights(9)).item()
                   - cross_entropy(logits, labels).item())
    focal_gap = abs(focal_loss(logits, labels, alpha=None, gamma=0.0).item()
                    - cross_entropy(logits, labels).item())
    uniform4 = cross_entropy(torch.zeros(3, 4), torch.tensor([0, 1, 3])).item()
    ln4_gap = abs(uniform4 - math.log(4.0))

    weights = compute_class_weights(ClassCatalog(("majority", "rarest"), (1072, 140)))
    rare_half = weighted_cross_entropy(torch.zeros(1, 2), torch.tensor([1]), weights).item()
    hand_gap = abs(rare_half - 7.657 * math.log(2.0))

    ok = unit_gap <= 1e-6 and focal_gap <= 1e-6 and ln4_gap <= 1e-4 and hand_gap <= 1e-4
    _verdict(1, ok, f"unit-weight gap {unit_gap:.2e}, focal(γ=0) gap {focal_gap:.2e}, "
                    f"ln4 gap {ln4_gap:.2e}, 7.657·ln2 gap {hand_gap:.2e}")


# ---------------------------------------------------------------------------
# 2. gradients vs. finite differences (single precision, rel err < 1e-3)


def _loss_grad_rel_errors(loss_fn, n_instances, rng):
    errs = []
    for _ in range(n_instances):
        n, c = int(rng.integers(2, 9)), int(rng.integers(2, 6))
        x = rng.normal(size=(n, c))
        labels = torch.tensor(rng.integers(0, c, n))
        t32 = torch.tensor(x, dtype=torch.float32, requires_grad=True)
        loss_fn(t32, labels).backward()
        analytic = t32.grad.numpy().astype(np.float64)

        fd = np.zeros_like(x)
        eps = 1e-5
        flat, gflat = x.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with torch.no_grad():
                flat[i] = orig + eps
                fp = float(loss_fn(torch.tensor(x, dtype=torch.float64), labels))
                flat[i] = orig - eps
                fm = float(loss_fn(torch.tensor(x, dtype=torch.float64), labels))
                flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
        errs.append(relative_error(analytic, fd))
    return errs


def _module_grad_rel_errors(make_module, in_channels, n_instances, rng, model_mode=False):
    errs = []
    for k in range(n_instances):
        torch.manual_seed(1000 + k)
        mod32 = general_position(make_module().eval(), rng)
        mod64 = make_module().double().eval()
        mod64.load_state_dict({n: v.double() for n, v in mod32.state_dict().items()})
        if model_mode:
            x = torch.tensor(rng.uniform(-1, 1, (2, 3, 16, 16)), dtype=torch.float32)
            labels = torch.tensor(rng.integers(0, 3, 2))
            loss32 = cross_entropy(mod32(x), labels)
            loss64 = lambda: cross_entropy(mod64(x.double()), labels)
        else:
            x = torch.tensor(rng.normal(size=(2, in_channels, 6, 6)), dtype=torch.float32)
            proj = torch.tensor(rng.normal(size=(2, in_channels, 6, 6)), dtype=torch.float32)
            loss32 = (mod32(x) * proj).sum()
            loss64 = lambda: (mod64(x.double()) * proj.double()).sum()
        mod32.zero_grad()
        loss32.backward()

        params32 = [p for p in mod32.parameters() if p.requires_grad]
        params64 = [p for p in mod64.parameters() if p.requires_grad]
        analytic, fd = [], []
        eps = 1e-5
        for _ in range(4):
            pi = int(rng.integers(len(params32)))
            idx = tuple(int(rng.integers(s)) for s in params32[pi].shape)
            analytic.append(float(params32[pi].grad[idx]))
            with torch.no_grad():
                orig = float(params64[pi][idx])
                params64[pi][idx] = orig + eps
                fp = float(loss64())
                params64[pi][idx] = orig - eps
                fm = float(loss64())
                params64[pi][idx] = orig
            fd.append((fp - fm) / (2 * eps))
        errs.append(relative_error(np.array(analytic), np.array(fd)))
    return errs


def test_criterion_2_gradient_checks():
    rng = np.random.default_rng(42)

    def wce(t, labels):
        return weighted_cross_entropy(t, labels, np.array([1.0 + 0.7 * i for i in range(t.shape[1])]))

    def focal(t, labels):
        return focal_loss(t, labels, None, gamma=2.0)

    def mixed(t, labels):
        other = torch.flip(labels, (0,))
        return mixed_loss(cross_entropy, t, labels, other, 0.37)

    tiny_spec = BackboneSpec(family="dense-small", stage_widths=(8,),
                             blocks_per_stage=(2,), growth_rate=4, out_channels=16)
    tiny_cfg = ModelConfig(backbone=tiny_spec, use_cbam=True,
                           cbam=CbamConfig(reduction=4, spatial_kernel=3),
                           head_hidden=(8,), head_dropout=0.0)

    suites = {
        "wce": _loss_grad_rel_errors(wce, 20, rng),
        "focal": _loss_grad_rel_errors(focal, 20, rng),
        "mixed": _loss_grad_rel_errors(mixed, 20, rng),
        "channel-attn": _module_grad_rel_errors(lambda: ChannelAttention(8, 4), 8, 20, rng),
        "spatial-attn": _module_grad_rel_errors(lambda: SpatialAttention(5), 8, 20, rng),
        "cbam": _module_grad_rel_errors(lambda: Cbam(8, CbamConfig(reduction=4, spatial_kernel=3)),
                                        8, 20, rng),
        "tiny-model": _module_grad_rel_errors(
            lambda: build_model(tiny_cfg, class_count=3, seed=7), 3, 20, rng, model_mode=True),
    }
    worst = {name: max(errs) for name, errs in suites.items()}
    ok = all(w < 1e-3 for w in worst.values()) and all(len(e) >= 20 for e in suites.values())
    _verdict(2, ok, "worst relative error per block: "
             + ", ".join(f"{n}={w:.1e}" for n, w in worst.items()))


# ---------------------------------------------------------------------------
# 3. cutmix invariants


def test_criterion_3_cutmix_invariants():
    rng = np.random.default_rng(7)
    zeros = np.zeros((48, 40, 3), np.float32)
    ones = np.ones((48, 40, 3), np.float32)
    la, lb = SoftLabel.one_hot(0, 3), SoftLabel.one_hot(1, 3)
    provenance_exact = True
    label_mass_ok = True
    for _ in range(1000):
        box = sample_cutmix_box(40, 48, rng)
        mixed, lab = apply_cutmix(zeros, la, ones, lb, box)
        from_b = int((mixed[..., 0] == 1.0).sum())
        provenance_exact &= (1.0 - from_b / (40 * 48)) == box.lambda_effective
        label_mass_ok &= abs(float(lab.probs.sum()) - 1.0) <= 1e-6

    a_img = np.random.default_rng(0).uniform(0, 1, (32, 32, 3)).astype(np.float32)
    b_img = np.random.default_rng(1).uniform(0, 1, (32, 32, 3)).astype(np.float32)
    keep_all = box_from_lambda(32, 32, 1.0, 16, 16)
    take_all = box_from_lambda(32, 32, 0.0, 16, 16)
    img1, lab1 = apply_cutmix(a_img, la, b_img, lb, keep_all)
    img0, lab0 = apply_cutmix(a_img, la, b_img, lb, take_all)
    boundaries_ok = (np.array_equal(img1, a_img) and np.array_equal(lab1.probs, la.probs)
                     and np.array_equal(img0, b_img) and np.array_equal(lab0.probs, lb.probs))

    lam_mean = float(np.mean([sample_cutmix_box(64, 64, rng).lambda_effective
                              for _ in range(10_000)]))
    ok = provenance_exact and label_mass_ok and boundaries_ok and 0.45 <= lam_mean <= 0.55
    _verdict(3, ok, f"provenance exact on 1000 boxes: {provenance_exact}, "
                    f"label mass ≤1e-6: {label_mass_ok}, λ∈{{0,1}} bit-exact: {boundaries_ok}, "
                    f"mean λ_eff {lam_mean:.4f} ∈ [0.45, 0.55]")


# ---------------------------------------------------------------------------
# 4. sampler uniformity


def test_criterion_4_sampler_marginals():
    catalog = ClassCatalog(("majority", "rarest"), (228, 30))  # 7.6:1
    marginals = class_marginals(catalog)
    from fractions import Fraction
    analytic_ok = all(m == Fraction(1, 2) for m in marginals)

    labels = np.repeat([0, 1], catalog.counts)
    weights = compute_sample_weights(catalog, labels)
    draws = draw_epoch_indices(weights, 100_000, seed=0)
    freq_rare = float(np.mean(labels[draws] == 1))
    empirical_ok = abs(freq_rare - 0.5) <= 0.02
    ok = analytic_ok and empirical_ok
    _verdict(4, ok, f"analytic per-class probability exactly 1/2: {analytic_ok}, "
                    f"empirical rare-class frequency {freq_rare:.4f} within ±0.02 of 0.5")


# ---------------------------------------------------------------------------
# 5. metrics oracle


def test_criterion_5_metrics_oracle():
    rng = np.random.default_rng(11)
    exact = 0
    for _ in range(1000):
        c = int(rng.integers(2, 11))
        n = int(rng.integers(1, 201))
        truths = rng.integers(0, c, n)
        preds = rng.integers(0, c, n)
        rep = report(accumulate(ConfusionMatrix.empty(c), truths, preds))
        oracle = brute_force_scores(truths, preds, c)
        same = (np.array_equal(rep.per_class_f1, oracle["per_class_f1"])
                and np.array_equal(rep.per_class_precision, oracle["per_class_precision"])
                and np.array_equal(rep.per_class_recall, oracle["per_class_recall"])
                and np.array_equal(rep.per_class_accuracy, oracle["per_class_accuracy"])
                and rep.overall_accuracy == oracle["overall_accuracy"]
                and rep.macro_f1 == oracle["macro_f1"]
                and rep.macro_precision == oracle["macro_precision"]
                and rep.macro_recall == oracle["macro_recall"])
        exact += bool(same)
    _verdict(5, exact == 1000, f"report() equals brute-force rational recomputation "
                               f"on {exact}/1000 random instances (C ≤ 10, N ≤ 200)")


# ---------------------------------------------------------------------------
# 6 + 7. synthetic benchmark directions (twelve desk-scale trainings)

SEEDS = (0, 1, 2)
VARIANTS = ("ce", "wce", "wce_d", "cbam_wce_d")


def _variant_config(name: str):
    base = get_experiment("table2-d121-wce-a")
    if name == "ce":
        return dataclasses.replace(base, id="accept-ce", loss=LossConfig(kind="ce"))
    if name == "wce":
        return base
    if name == "wce_d":
        return get_experiment("table2-d121-wce-d")
    return get_experiment("table2-d121-cbam-wce-d")


@pytest.fixture(scope="module")
def benchmark_runs():
    """Train every variant at every seed once; criteria 6 and 7 share these."""
    runs = {}
    for name in VARIANTS:
        for seed in SEEDS:
            cfg = _variant_config(name)
            cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=seed))
            images, catalog = prepare_data(cfg)
            split = stratified_split(catalog, images, cfg.fractions, seed)
            record, model, cm = fit(images, catalog, split, cfg.model_config(),
                                    cfg.pipeline, cfg.loss, cfg.train,
                                    aug_kind=cfg.aug_kind, use_sampler=cfg.use_sampler,
                                    experiment_id=f"{cfg.id}-s{seed}")
            rep = record.metrics()
            runs[(name, seed)] = {
                "macro_f1": rep.macro_f1,
                "minority_f1": minority_mean_f1(rep, catalog.counts),
                "healthy_acc": rep.per_class_accuracy[catalog.names.index("healthy")],
                "confusion": cm,
                "healthy_index": catalog.names.index("healthy"),
            }
            print(f"  [criterion 6] {name:10s} seed {seed}: macro F1 {rep.macro_f1:.4f}, "
                  f"minority mean F1 {runs[(name, seed)]['minority_f1']:.4f}")
    return runs


def test_criterion_6_synthetic_benchmark_directions(benchmark_runs):
    mean = {name: float(np.mean([benchmark_runs[(name, s)]["macro_f1"] for s in SEEDS]))
            for name in VARIANTS}
    mino = {name: float(np.mean([benchmark_runs[(name, s)]["minority_f1"] for s in SEEDS]))
            for name in VARIANTS}
    margin_a = mino["wce"] - mino["ce"]
    margin_b = mean["wce_d"] - mean["wce"]
    best = max(mean.values())

    gated = get_experiment("table2-d121-cbam-wce-a").model_config()
    plain = dataclasses.replace(gated, use_cbam=False)
    delta = (count_parameters(build_model(gated, 8, seed=0))
             - count_parameters(build_model(plain, 8, seed=0)))
    closed = cbam_param_count(gated.backbone.out_channels, gated.cbam.reduction,
                              gated.cbam.spatial_kernel)

    ok = margin_a >= 0.03 and margin_b >= 0.01 and best >= 0.90 and delta == closed
    _verdict(6, ok, f"3-seed means: (a) WCE−CE minority F1 {margin_a:+.4f} ≥ 0.03, "
                    f"(b) WCE+CutMix−WCE macro F1 {margin_b:+.4f} ≥ 0.01, "
                    f"(c) best macro F1 {best:.4f} ≥ 0.90, "
                    f"(d) attention parameter delta {delta} == closed form {closed}")


def test_criterion_7_binary_coarsening(benchmark_runs):
    mean = {name: float(np.mean([benchmark_runs[(name, s)]["macro_f1"] for s in SEEDS]))
            for name in VARIANTS}
    best_name = max(mean, key=mean.get)
    ok = True
    details = []
    for seed in SEEDS:
        run = benchmark_runs[(best_name, seed)]
        cm = run["confusion"]
        two = coarsen_confusion(cm, run["healthy_index"])
        multi_acc = report(cm).per_class_accuracy[run["healthy_index"]]
        binary_acc = report(two).per_class_accuracy[0]
        ok &= binary_acc >= multi_acc
        details.append(f"seed {seed}: binary {binary_acc:.4f} ≥ multi {multi_acc:.4f}")
    _verdict(7, ok, f"best={best_name}; healthy-class accuracy after coarsening: "
                    + "; ".join(details))


# ---------------------------------------------------------------------------
# 8. protocol integrity


def test_criterion_8_protocol_integrity():
    splits_ok = True
    folds_ok = True
    leakage_free = True
    for exp_id, cfg in build_registry().items():
        images, catalog = prepare_data(cfg)
        labels = np.array([im.label for im in images])
        split = stratified_split(catalog, images, cfg.fractions, cfg.train.seed)
        parts = {"train": split.train_indices, "val": split.val_indices,
                 "test": split.test_indices}
        for frac, idx in zip(cfg.fractions, parts.values()):
            got = np.bincount(labels[list(idx)], minlength=len(catalog.names))
            target = np.array(catalog.counts) * frac
            if np.abs(got - target).max() > 1.0 + 1e-9:
                splits_ok = False
        all_idx = sorted(split.train_indices + split.val_indices + split.test_indices)
        if all_idx != list(range(len(images))):
            leakage_free = False
        if (set(split.train_indices) & set(split.val_indices)
                or set(split.train_indices) & set(split.test_indices)
                or set(split.val_indices) & set(split.test_indices)):
            leakage_free = False

        plan = make_folds(split.train_indices, labels[list(split.train_indices)],
                          cfg.cv_folds, cfg.train.seed)
        val_union = sorted(i for _, fold_val in plan.folds for i in fold_val)
        if val_union != sorted(split.train_indices):
            folds_ok = False
    ok = splits_ok and folds_ok and leakage_free
    _verdict(8, ok, f"per-class split counts within ±1: {splits_ok}, "
                    f"5-fold val sets partition the train split exactly: {folds_ok}, "
                    f"train/val/test disjoint and exhaustive on all 12 experiments: {leakage_free}")


# ---------------------------------------------------------------------------
# 9. determinism


def test_criterion_9_deterministic_reruns(tmp_path):
    cfg = get_experiment("table2-d121-wce-d")
    out1 = execute(cfg, tmp_path / "runs")
    out2 = execute(cfg, tmp_path / "runs")
    h1 = hashlib.sha256((out1 / "metrics.csv").read_bytes()).hexdigest()
    h2 = hashlib.sha256((out2 / "metrics.csv").read_bytes()).hexdigest()
    ok = h1 == h2
    _verdict(9, ok, f"metrics.csv sha256 identical across reruns: {h1[:16]}… == {h2[:16]}…")

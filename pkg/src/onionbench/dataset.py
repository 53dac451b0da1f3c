"""Dataset ingestion, class catalog maintenance, label merging and split planning.

Images are numpy float32 arrays of shape (H, W, 3) with values in [0, 1].
The class catalog fixes class order to first appearance in the manifest so
confusion-matrix axes are reproducible across runs.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    EmptyDatasetError,
    IngestionError,
    DecodeError,
    StratificationError,
    UnknownClassError,
)

MANIFEST_HEADER = ("path", "class")
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class LabeledImage:
    """One ingested image: pixels in [0, 1], a hard class index and its origin."""

    pixels: np.ndarray  # (H, W, 3) float32
    label: int
    source_id: str

    def validate(self, num_classes: int) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise DecodeError(f"{self.source_id}: expected (H, W, 3) pixels, got {self.pixels.shape}")
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if lo < 0.0 or hi > 1.0:
            raise DecodeError(f"{self.source_id}: pixel values outside [0, 1] (min {lo}, max {hi})")
        if not (0 <= self.label < num_classes):
            raise UnknownClassError(f"{self.source_id}: label {self.label} >= {num_classes} classes")


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered class names with per-class counts and a record of any fusions."""

    names: tuple[str, ...]
    counts: tuple[int, ...]
    merged_from: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise UnknownClassError(f"duplicate class names in catalog: {self.names}")
        if len(self.counts) != len(self.names):
            raise ValueError("counts length must equal names length")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be non-negative")

    def __len__(self) -> int:
        return len(self.names)

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @property
    def imbalance_ratio(self) -> float:
        if min(self.counts) == 0:
            return float("inf")
        return max(self.counts) / min(self.counts)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownClassError(f"class {name!r} not in catalog {list(self.names)}") from None

    def to_json(self) -> str:
        return json.dumps(
            {"names": list(self.names), "counts": list(self.counts),
             "merged_from": {k: list(v) for k, v in self.merged_from.items()}},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ClassCatalog":
        d = json.loads(text)
        return cls(tuple(d["names"]), tuple(d["counts"]),
                   {k: tuple(v) for k, v in d.get("merged_from", {}).items()})


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/val/test index lists over one dataset."""

    train_indices: tuple[int, ...]
    val_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    seed: int
    stratified: bool = True

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        d = json.loads(text)
        return cls(tuple(d["train_indices"]), tuple(d["val_indices"]),
                   tuple(d["test_indices"]), d["seed"], d["stratified"])


@dataclass(frozen=True)
class FoldPlan:
    """k (train, val) index pairs whose val sets partition the training set."""

    folds: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]
    k: int

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "folds": [[list(t), list(v)] for t, v in self.folds]})

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        d = json.loads(text)
        return cls(tuple((tuple(t), tuple(v)) for t, v in d["folds"]), d["k"])


def _decode_image(path: Path, source_id: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            return np.asarray(rgb, dtype=np.float32) / 255.0
    except UnidentifiedImageError as exc:
        raise DecodeError(f"cannot decode {source_id}: {exc}") from exc


def load_manifest(root: Path | str, manifest: Path | str) -> tuple[list[LabeledImage], ClassCatalog]:
    """Read a `path,class` CSV manifest and decode every referenced image.

    Class order in the returned catalog is first-appearance order of class
    names in the manifest. Paths are POSIX-relative to ``root``.
    """
    root = Path(root)
    manifest = Path(manifest)
    with open(manifest, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise IngestionError(f"{manifest}: expected header {','.join(MANIFEST_HEADER)}, got {header}")
        rows = [(r[0], r[1]) for r in reader if r]
    if not rows:
        raise EmptyDatasetError(f"{manifest}: manifest has no rows")

    names: list[str] = []
    index: dict[str, int] = {}
    counts: list[int] = []
    images: list[LabeledImage] = []
    for rel_path, class_name in rows:
        if class_name not in index:
            index[class_name] = len(names)
            names.append(class_name)
            counts.append(0)
        label = index[class_name]
        counts[label] += 1
        full = root / rel_path
        if not full.is_file():
            raise IngestionError(f"missing image file: {full}")
        images.append(LabeledImage(_decode_image(full, rel_path), label, rel_path))

    catalog = ClassCatalog(tuple(names), tuple(counts))
    for image in images:
        image.validate(len(catalog))
    return images, catalog


def write_manifest(rows: list[tuple[str, str]], manifest: Path | str) -> None:
    """Write (relative_path, class_name) rows as a canonical manifest CSV."""
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)


def scan_directory(root: Path | str, manifest: Path | str) -> int:
    """Emit a manifest for a directory-per-class tree; returns row count.

    Convenience wrapper: the manifest stays the canonical ingestion format.
    Class subdirectories are visited in sorted order, files within each in
    sorted order, so the emitted manifest is reproducible.
    """
    root = Path(root)
    rows: list[tuple[str, str]] = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for img in sorted(class_dir.iterdir()):
            if img.suffix.lower() in IMAGE_EXTENSIONS:
                rows.append(((class_dir.name + "/" + img.name), class_dir.name))
    if not rows:
        raise EmptyDatasetError(f"no images found under {root}")
    write_manifest(rows, manifest)
    return len(rows)


def merge_classes(
    catalog: ClassCatalog,
    images: list[LabeledImage],
    fuse: tuple[str, str],
    new_name: str,
) -> tuple[ClassCatalog, list[LabeledImage]]:
    """Fuse two classes into one; the merged class takes the earlier position."""
    ia, ib = catalog.index_of(fuse[0]), catalog.index_of(fuse[1])
    keep, drop = min(ia, ib), max(ia, ib)

    names = list(catalog.names)
    counts = list(catalog.counts)
    names[keep] = new_name
    counts[keep] = counts[ia] + counts[ib]
    del names[drop], counts[drop]
    if new_name in names[:keep] or new_name in names[keep + 1:]:
        raise UnknownClassError(f"merged name {new_name!r} collides with an existing class")

    remap = {}
    for old in range(len(catalog)):
        if old in (ia, ib):
            remap[old] = keep
        else:
            remap[old] = old - (1 if old > drop else 0)

    merged_from = dict(catalog.merged_from)
    merged_from[new_name] = fuse
    new_catalog = ClassCatalog(tuple(names), tuple(counts), merged_from)
    relabeled = [dataclasses.replace(im, label=remap[im.label]) for im in images]
    return new_catalog, relabeled


def coarsen_to_binary(
    catalog: ClassCatalog,
    images: list[LabeledImage],
    healthy_name: str,
) -> tuple[ClassCatalog, list[LabeledImage]]:
    """Collapse to {healthy, unhealthy}: class 0 keeps the healthy count."""
    healthy = catalog.index_of(healthy_name)
    others = tuple(n for i, n in enumerate(catalog.names) if i != healthy)
    unhealthy_count = catalog.total - catalog.counts[healthy]
    merged_from = dict(catalog.merged_from)
    merged_from["unhealthy"] = others
    new_catalog = ClassCatalog(
        (healthy_name, "unhealthy"),
        (catalog.counts[healthy], unhealthy_count),
        merged_from,
    )
    relabeled = [dataclasses.replace(im, label=0 if im.label == healthy else 1) for im in images]
    return new_catalog, relabeled


def _apportion(total: int, fractions: tuple[float, ...]) -> list[int]:
    """Largest-remainder rounding of total*fractions to integers summing to total."""
    quotas = [total * f for f in fractions]
    base = [int(np.floor(q)) for q in quotas]
    short = total - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: quotas[i] - base[i], reverse=True)
    for i in order[:short]:
        base[i] += 1
    return base


def _allocate(counts: list[int], totals: list[int]) -> np.ndarray:
    """Round the quota matrix counts[ci] * totals[p] / n to integers.

    Row sums equal the class counts, column sums equal the partition totals,
    and every cell stays within one of its exact quota (cells only ever hold
    floor(quota) or floor(quota) + 1). A largest-remainder pass settles
    nearly every input; extras it strands (their class's partitions already
    full) are placed by augmenting paths that shift earlier round-ups to
    other open partitions. Such paths always exist because the quota matrix
    has integer row and column sums, so a full rounding is a feasible flow.
    """
    n = sum(counts)
    num = np.outer(np.asarray(counts, dtype=np.int64), np.asarray(totals, dtype=np.int64))
    base = num // n
    rem = num % n
    alloc = base.copy()
    extras = np.asarray(counts, dtype=np.int64) - alloc.sum(axis=1)
    capacity = np.asarray(totals, dtype=np.int64) - alloc.sum(axis=0)

    order = sorted(((ci, p) for ci in range(len(counts)) for p in range(len(totals))),
                   key=lambda cp: rem[cp], reverse=True)
    for ci, p in order:
        if extras[ci] > 0 and capacity[p] > 0:
            alloc[ci, p] += 1
            extras[ci] -= 1
            capacity[p] -= 1

    for ci in np.nonzero(extras)[0]:
        for _ in range(int(extras[ci])):
            _shift_allocation(alloc, base, capacity, int(ci))
    return alloc


def _shift_allocation(alloc: np.ndarray, base: np.ndarray, capacity: np.ndarray,
                      start_class: int) -> None:
    """Give ``start_class`` one more sample without breaking any invariant.

    BFS over the residual graph: class -> partition along unraised cells
    (alloc == base), partition -> class along raised cells (alloc == base+1),
    ending at a partition with spare capacity. Applying the path raises and
    lowers cells alternately, so each stays in {base, base + 1}.
    """
    c_n, p_n = alloc.shape
    parent_of_part: dict[int, int] = {}   # partition -> class we raised into it
    parent_of_class: dict[int, int] = {}  # class -> partition we lowered to reach it
    queue = [start_class]
    seen_classes = {start_class}
    goal = None
    while queue and goal is None:
        ci = queue.pop(0)
        for p in range(p_n):
            if p in parent_of_part or alloc[ci, p] != base[ci, p]:
                continue
            parent_of_part[p] = ci
            if capacity[p] > 0:
                goal = p
                break
            for cj in range(c_n):
                if cj not in seen_classes and alloc[cj, p] == base[cj, p] + 1:
                    seen_classes.add(cj)
                    parent_of_class[cj] = p
                    queue.append(cj)
    if goal is None:
        raise StratificationError("no feasible stratified allocation")
    capacity[goal] -= 1
    p = goal
    while True:
        ci = parent_of_part[p]
        alloc[ci, p] += 1
        if ci == start_class:
            return
        p = parent_of_class[ci]
        alloc[ci, p] -= 1


def stratified_split(
    catalog: ClassCatalog,
    images: list[LabeledImage],
    fractions: tuple[float, float, float],
    seed: int,
) -> SplitPlan:
    """Partition indices into train/val/test preserving per-class proportions.

    Per-class allocation is a capacity-constrained largest-remainder rounding
    of count_c * |partition| / N, so each class lands within one sample of its
    exact proportional share in every partition, while partition totals equal
    the largest-remainder rounding of N * fraction.
    """
    if any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")

    labels = np.array([im.label for im in images], dtype=np.int64)
    n = len(labels)
    if n != catalog.total:
        raise ValueError(f"{n} images but catalog total {catalog.total}")
    n_parts = len(fractions)
    for name, count in zip(catalog.names, catalog.counts):
        if count < n_parts:
            raise StratificationError(
                f"class {name!r} has {count} samples; needs >= {n_parts} for a {n_parts}-way stratified split"
            )

    totals = _apportion(n, fractions)
    c = len(catalog)
    alloc = _allocate(list(catalog.counts), totals)

    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[], [], []]
    for ci in range(c):
        idx = np.nonzero(labels == ci)[0]
        rng.shuffle(idx)
        offset = 0
        for p in range(n_parts):
            take = int(alloc[ci, p])
            parts[p].extend(int(i) for i in idx[offset:offset + take])
            offset += take

    return SplitPlan(
        train_indices=tuple(sorted(parts[0])),
        val_indices=tuple(sorted(parts[1])),
        test_indices=tuple(sorted(parts[2])),
        seed=seed,
        stratified=True,
    )


def make_folds(
    train_indices: tuple[int, ...] | list[int],
    labels: np.ndarray | list[int],
    k: int,
    seed: int,
) -> FoldPlan:
    """Stratified k-fold plan over the training indices.

    ``labels`` is parallel to ``train_indices``. Val sets partition the
    training set; per-class val counts across folds differ by at most one.
    """
    train_indices = list(train_indices)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != len(train_indices):
        raise ValueError("labels must be parallel to train_indices")
    if k < 2:
        raise StratificationError(f"k must be >= 2, got {k}")
    classes, class_counts = np.unique(labels, return_counts=True)
    if class_counts.min() < k:
        small = classes[np.argmin(class_counts)]
        raise StratificationError(
            f"k={k} exceeds the {class_counts.min()} samples of class index {small}"
        )

    rng = np.random.default_rng(seed)
    val_sets: list[list[int]] = [[] for _ in range(k)]
    for offset, ci in enumerate(classes):
        pos = np.nonzero(labels == ci)[0]
        rng.shuffle(pos)
        for j, chunk in enumerate(np.array_split(pos, k)):
            val_sets[(j + offset) % k].extend(train_indices[p] for p in chunk)

    all_train = set(train_indices)
    folds = []
    for val in val_sets:
        val_set = set(val)
        train = tuple(sorted(all_train - val_set))
        folds.append((train, tuple(sorted(val))))
    return FoldPlan(folds=tuple(folds), k=k)

"""Image pipelines: geometric baseline, one-of photometric menu, and CutMix.

All transforms take and return (H, W, 3) float32 arrays. Randomness always
comes in through an explicit seed or generator so a pipeline invocation is a
pure function of (image, config, seed).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import cv2
import numpy as np

from .dataset import LabeledImage
from .errors import ConfigError, ShapeError

TRANSFORM_NAMES = (
    "horizontal_flip",
    "vertical_flip",
    "motion_blur",
    "median_blur",
    "gaussian_blur",
    "hue_shift",
    "grid_shuffle",
    "coarse_dropout",
)


@dataclass(frozen=True)
class PipelineConfig:
    target_size: int = 64
    flip_prob: float = 0.5
    rotation_limit: float = 30.0            # degrees, uniform in [-limit, limit]
    one_of: tuple[str, ...] = TRANSFORM_NAMES
    one_of_weights: tuple[float, ...] | None = None   # None = uniform
    gaussian_kernels: tuple[int, ...] = (3, 5, 7)
    median_kernels: tuple[int, ...] = (3, 5)          # cv2 float32 path caps at 5
    motion_kernels: tuple[int, ...] = (5, 7)
    hue_limit: float = 18.0                 # degrees on the hue circle
    grid_size: int = 3
    dropout_max_holes: int = 8
    dropout_max_side_frac: float = 0.08
    dropout_fill: float = 0.0
    norm_mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    norm_std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    cutmix_prob: float = 0.5

    def __post_init__(self):
        if self.target_size <= 0:
            raise ConfigError(f"target_size must be positive, got {self.target_size}")
        for name, p in (("flip_prob", self.flip_prob), ("cutmix_prob", self.cutmix_prob)):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        unknown = set(self.one_of) - set(TRANSFORM_NAMES)
        if unknown:
            raise ConfigError(f"unknown transforms in one_of: {sorted(unknown)}")
        if not self.one_of:
            raise ConfigError("one_of must not be empty")
        if self.one_of_weights is not None:
            if len(self.one_of_weights) != len(self.one_of):
                raise ConfigError("one_of_weights length must match one_of")
            if any(w < 0 for w in self.one_of_weights) or sum(self.one_of_weights) <= 0:
                raise ConfigError("one_of_weights must be non-negative with positive sum")
        for k in (*self.gaussian_kernels, *self.median_kernels, *self.motion_kernels):
            if k % 2 == 0 or not 3 <= k <= 7:
                raise ConfigError(f"blur kernels must be odd and within [3, 7], got {k}")
        if any(k > 5 for k in self.median_kernels):
            raise ConfigError("median blur on float32 supports kernels 3 and 5 only")
        if self.grid_size < 1:
            raise ConfigError(f"grid_size must be >= 1, got {self.grid_size}")
        if self.dropout_max_holes < 1 or not 0.0 < self.dropout_max_side_frac <= 1.0:
            raise ConfigError("dropout needs >= 1 hole and side fraction in (0, 1]")
        if any(s <= 0 for s in self.norm_std):
            raise ConfigError(f"norm_std must be positive, got {self.norm_std}")

    def one_of_probs(self) -> np.ndarray:
        if self.one_of_weights is None:
            return np.full(len(self.one_of), 1.0 / len(self.one_of))
        w = np.asarray(self.one_of_weights, dtype=np.float64)
        return w / w.sum()


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got shape {img.shape}")
    return img.astype(np.float32, copy=False)


def resize(img: np.ndarray, size: int) -> np.ndarray:
    img = _check_image(img)
    if img.shape[0] == size and img.shape[1] == size:
        return img.copy()
    return cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)


def normalize(img: np.ndarray, mean, std) -> np.ndarray:
    img = _check_image(img)
    std = np.asarray(std, dtype=np.float32)
    if (std <= 0).any():
        raise ConfigError(f"normalization std must be positive, got {std.tolist()}")
    return (img - np.asarray(mean, dtype=np.float32)) / std


def horizontal_flip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(_check_image(img)[:, ::-1])


def vertical_flip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(_check_image(img)[::-1])


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    img = _check_image(img)
    h, w = img.shape[:2]
    m = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), degrees, 1.0)
    return cv2.warpAffine(img, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101)


def gaussian_blur(img: np.ndarray, kernel: int) -> np.ndarray:
    return cv2.GaussianBlur(_check_image(img), (kernel, kernel), 0)


def median_blur(img: np.ndarray, kernel: int) -> np.ndarray:
    if kernel not in (3, 5):
        raise ConfigError(f"median blur kernel must be 3 or 5 for float32, got {kernel}")
    return cv2.medianBlur(_check_image(img), kernel)


def motion_blur(img: np.ndarray, kernel: int, angle: float) -> np.ndarray:
    """Average along a line of length ``kernel`` at ``angle`` degrees."""
    img = _check_image(img)
    k = np.zeros((kernel, kernel), dtype=np.float32)
    c = (kernel - 1) / 2.0
    rad = math.radians(angle)
    dx, dy = math.cos(rad), math.sin(rad)
    x0 = int(round(c - dx * c)), int(round(c - dy * c))
    x1 = int(round(c + dx * c)), int(round(c + dy * c))
    cv2.line(k, x0, x1, 1.0, thickness=1)
    k /= k.sum()
    return cv2.filter2D(img, -1, k, borderType=cv2.BORDER_REFLECT_101)


def hue_shift(img: np.ndarray, degrees: float) -> np.ndarray:
    img = np.clip(_check_image(img), 0.0, 1.0)
    hsv = cv2.cvtColor(img, cv2.COLOR_RGB2HSV)      # H in [0, 360) for float32
    hsv[..., 0] = (hsv[..., 0] + degrees) % 360.0
    return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)


def grid_shuffle(img: np.ndarray, grid: int, permutation: np.ndarray) -> np.ndarray:
    """Shuffle the grid x grid cell tiling by ``permutation`` (identity = no-op)."""
    img = _check_image(img)
    permutation = np.asarray(permutation)
    if permutation.shape != (grid * grid,) or sorted(permutation.tolist()) != list(range(grid * grid)):
        raise ConfigError(f"permutation must rearrange {grid * grid} cells")
    h, w = img.shape[:2]
    ch, cw = h // grid, w // grid
    if ch == 0 or cw == 0:
        raise ShapeError(f"grid {grid} too fine for image {img.shape[:2]}")
    out = img.copy()
    for dst, src in enumerate(permutation):
        dr, dc = divmod(dst, grid)
        sr, sc = divmod(int(src), grid)
        out[dr * ch:(dr + 1) * ch, dc * cw:(dc + 1) * cw] = \
            img[sr * ch:(sr + 1) * ch, sc * cw:(sc + 1) * cw]
    return out


def coarse_dropout(img: np.ndarray, holes: list[tuple[int, int, int, int]], fill: float = 0.0) -> np.ndarray:
    """Fill each (y0, x0, h, w) hole with a constant. Holes must fit the image."""
    img = _check_image(img)
    out = img.copy()
    H, W = img.shape[:2]
    for y0, x0, h, w in holes:
        if h <= 0 or w <= 0 or y0 < 0 or x0 < 0 or y0 + h > H or x0 + w > W:
            raise ShapeError(f"hole {(y0, x0, h, w)} does not fit image {(H, W)}")
        out[y0:y0 + h, x0:x0 + w] = fill
    return out


def _draw_holes(shape: tuple[int, int], cfg: PipelineConfig, rng: np.random.Generator):
    H, W = shape
    max_side = max(1, int(round(cfg.dropout_max_side_frac * min(H, W))))
    holes = []
    for _ in range(int(rng.integers(1, cfg.dropout_max_holes + 1))):
        side = int(rng.integers(1, max_side + 1))
        y0 = int(rng.integers(0, H - side + 1))
        x0 = int(rng.integers(0, W - side + 1))
        holes.append((y0, x0, side, side))
    return holes


def apply_named(name: str, img: np.ndarray, cfg: PipelineConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply one menu transform by name, drawing its parameters from ``rng``."""
    if name == "horizontal_flip":
        return horizontal_flip(img)
    if name == "vertical_flip":
        return vertical_flip(img)
    if name == "motion_blur":
        k = int(rng.choice(np.asarray(cfg.motion_kernels)))
        return motion_blur(img, k, float(rng.uniform(0.0, 180.0)))
    if name == "median_blur":
        return median_blur(img, int(rng.choice(np.asarray(cfg.median_kernels))))
    if name == "gaussian_blur":
        return gaussian_blur(img, int(rng.choice(np.asarray(cfg.gaussian_kernels))))
    if name == "hue_shift":
        return hue_shift(img, float(rng.uniform(-cfg.hue_limit, cfg.hue_limit)))
    if name == "grid_shuffle":
        return grid_shuffle(img, cfg.grid_size, rng.permutation(cfg.grid_size ** 2))
    if name == "coarse_dropout":
        return coarse_dropout(img, _draw_holes(img.shape[:2], cfg, rng), cfg.dropout_fill)
    raise ConfigError(f"unknown transform {name!r}")


def pipeline_a(image: LabeledImage, cfg: PipelineConfig, seed) -> LabeledImage:
    """Geometric baseline: resize, maybe h-flip, small rotation, normalize."""
    rng = np.random.default_rng(seed)
    img = resize(image.pixels, cfg.target_size)
    if rng.uniform() < cfg.flip_prob:
        img = horizontal_flip(img)
    img = rotate(img, float(rng.uniform(-cfg.rotation_limit, cfg.rotation_limit)))
    img = normalize(img, cfg.norm_mean, cfg.norm_std)
    return dataclasses.replace(image, pixels=img)


def pipeline_c(image: LabeledImage, cfg: PipelineConfig, seed) -> LabeledImage:
    """Menu pipeline: exactly one transform drawn from one_of, then resize+normalize."""
    rng = np.random.default_rng(seed)
    name = cfg.one_of[int(rng.choice(len(cfg.one_of), p=cfg.one_of_probs()))]
    img = apply_named(name, image.pixels, cfg, rng)
    img = resize(img, cfg.target_size)
    img = normalize(img, cfg.norm_mean, cfg.norm_std)
    return dataclasses.replace(image, pixels=img)


def eval_pipeline(image: LabeledImage, cfg: PipelineConfig) -> LabeledImage:
    """Deterministic inference path: resize + normalize only."""
    img = normalize(resize(image.pixels, cfg.target_size), cfg.norm_mean, cfg.norm_std)
    return dataclasses.replace(image, pixels=img)


# ---------------------------------------------------------------------------
# CutMix

@dataclass(frozen=True)
class SoftLabel:
    """Probability vector over classes; entries >= 0 and sum within 1e-6 of 1."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or p.size == 0:
            raise ShapeError(f"probs must be a non-empty vector, got shape {p.shape}")
        if (p < 0).any() or abs(float(p.sum()) - 1.0) > 1e-6:
            raise ConfigError(f"probs must be non-negative and sum to 1, got sum {p.sum()!r}")

    @classmethod
    def one_hot(cls, label: int, num_classes: int) -> "SoftLabel":
        if not 0 <= label < num_classes:
            raise ConfigError(f"label {label} outside [0, {num_classes})")
        p = np.zeros(num_classes, dtype=np.float64)
        p[label] = 1.0
        return cls(p)


@dataclass(frozen=True)
class MaskBox:
    """Half-open pixel rectangle [x0, x1) x [y0, y1) plus its exact area share."""

    x0: int
    y0: int
    x1: int
    y1: int
    lambda_effective: float

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height


def box_from_lambda(width: int, height: int, lam: float, cx: float, cy: float) -> MaskBox:
    """Build the clipped cut box for mix ratio ``lam`` centered at (cx, cy).

    lambda_effective is recomputed from the integer pixel area after clipping,
    so it is exact even when the box spills over the border.
    """
    if width <= 0 or height <= 0:
        raise ConfigError(f"image extent must be positive, got {(width, height)}")
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    cut_w = width * math.sqrt(1.0 - lam)
    cut_h = height * math.sqrt(1.0 - lam)
    x0 = int(np.clip(round(cx - cut_w / 2.0), 0, width))
    x1 = int(np.clip(round(cx + cut_w / 2.0), 0, width))
    y0 = int(np.clip(round(cy - cut_h / 2.0), 0, height))
    y1 = int(np.clip(round(cy + cut_h / 2.0), 0, height))
    area = (x1 - x0) * (y1 - y0)
    lam_eff = 1.0 - area / (width * height)
    return MaskBox(x0, y0, x1, y1, lam_eff)


def sample_cutmix_box(width: int, height: int, seed) -> MaskBox:
    """Draw lambda ~ U(0, 1) and a center uniform over feasible positions.

    The center range keeps the box inside the image, so lambda_effective
    stays within rounding distance of the drawn lambda (mean ~0.5 instead of
    the ~0.68 a fully uniform center plus clipping would give).
    """
    rng = np.random.default_rng(seed)
    lam = float(rng.uniform(0.0, 1.0))
    cut_w = width * math.sqrt(1.0 - lam)
    cut_h = height * math.sqrt(1.0 - lam)
    cx = float(rng.uniform(cut_w / 2.0, width - cut_w / 2.0))
    cy = float(rng.uniform(cut_h / 2.0, height - cut_h / 2.0))
    return box_from_lambda(width, height, lam, cx, cy)


def apply_cutmix(pixels_a: np.ndarray, label_a: SoftLabel,
                 pixels_b: np.ndarray, label_b: SoftLabel,
                 box: MaskBox) -> tuple[np.ndarray, SoftLabel]:
    """Paste box region of b into a; mix labels by the box's exact area share."""
    pixels_a = np.asarray(pixels_a)
    pixels_b = np.asarray(pixels_b)
    if pixels_a.shape != pixels_b.shape:
        raise ShapeError(f"image shapes differ: {pixels_a.shape} vs {pixels_b.shape}")
    if label_a.probs.shape != label_b.probs.shape:
        raise ShapeError("label vectors differ in length")
    out = pixels_a.copy()
    out[box.y0:box.y1, box.x0:box.x1] = pixels_b[box.y0:box.y1, box.x0:box.x1]
    lam = box.lambda_effective
    mixed = SoftLabel(lam * label_a.probs + (1.0 - lam) * label_b.probs)
    return out, mixed


def cutmix_batch(batch: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
    """Mix a (B, H, W, C) batch against a random permutation of itself.

    One box is drawn per batch. Returns (mixed batch, partner permutation,
    lambda_effective) so the caller can mix the per-sample losses.
    """
    batch = np.asarray(batch)
    if batch.ndim != 4:
        raise ShapeError(f"expected (B, H, W, C) batch, got shape {batch.shape}")
    n, h, w = batch.shape[:3]
    if n < 2:
        raise ShapeError("cutmix needs at least two samples")
    perm = rng.permutation(n)
    box = sample_cutmix_box(w, h, rng)
    mixed = batch.copy()
    mixed[:, box.y0:box.y1, box.x0:box.x1] = batch[perm][:, box.y0:box.y1, box.x0:box.x1]
    return mixed, perm, box.lambda_effective

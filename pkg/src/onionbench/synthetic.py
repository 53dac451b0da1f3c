"""Synthetic long-tailed leaf-texture dataset generator.

Stands in for the private field-image dataset: each class renders a distinct
parametric pattern (stripe angle/frequency, spot density, hue, blur) on a low
frequency background, with per-image jitter so classes overlap enough to make
the imbalance bite. Generation is keyed per image as (seed, class, index), so
identical spec + seed reproduces byte-identical pixels regardless of order.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image

from .dataset import ClassCatalog, LabeledImage, write_manifest
from .errors import ConfigError


@dataclass(frozen=True)
class TextureParams:
    """Per-class pattern descriptors. Jitters are per-image uniform half-widths."""

    hue: float                  # base hue in [0, 1)
    saturation: float = 0.65
    hue_jitter: float = 0.025
    stripe_angle: float = 0.0   # degrees
    stripe_freq: float = 5.0    # cycles across the image
    stripe_strength: float = 0.0
    angle_jitter: float = 8.0
    spot_density: float = 0.0   # expected spot count per image
    spot_depth: float = 0.45
    blur_sigma: float = 0.7
    noise_sigma: float = 0.04


@dataclass(frozen=True)
class SyntheticSpec:
    class_names: tuple[str, ...]
    counts: tuple[int, ...]
    image_size: int
    seed: int
    textures: tuple[TextureParams, ...]

    def __post_init__(self):
        if len(self.counts) != len(self.class_names) or len(self.textures) != len(self.class_names):
            raise ConfigError("class_names, counts and textures must have equal length")
        if any(c <= 0 for c in self.counts):
            raise ConfigError(f"every class needs a positive count, got {self.counts}")
        if self.image_size < 8:
            raise ConfigError(f"image_size must be >= 8, got {self.image_size}")

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @property
    def imbalance_ratio(self) -> float:
        return max(self.counts) / min(self.counts)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(
            class_names=tuple(d["class_names"]),
            counts=tuple(int(c) for c in d["counts"]),
            image_size=int(d["image_size"]),
            seed=int(d["seed"]),
            textures=tuple(TextureParams(**t) for t in d["textures"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        return cls.from_dict(json.loads(text))


# Reference class tallies of the original field-image dataset (private; only
# the healthy/basal-rot extremes and the 5330 total are published — middle
# counts here are a long-tail interpolation).
FIELD_COUNTS = {
    "healthy": 1072,
    "purple_blotch": 810,
    "thrips": 715,
    "iysv": 620,
    "stemphylium": 530,
    "anthracnose": 497,
    "twister": 489,
    "bulb_rot": 457,
    "basal_rot": 140,
}

# Desk-scale analog: same 7.6:1 ratio (228/30 exactly), ~1100 images.
DESK_COUNTS = {
    "healthy": 228,
    "purple_blotch": 185,
    "thrips": 150,
    "iysv": 125,
    "anthracnose": 112,
    "twister": 104,
    "stemphylium": 92,
    "bulb_rot": 74,
    "basal_rot": 30,
}

# Classes come in look-alike pairs that share hue and differ in one cue
# (spots vs. none, stripe angle), so the rare member of each pair is what an
# unweighted learner sacrifices first.
DEFAULT_TEXTURES = {
    "healthy":       TextureParams(hue=0.30, saturation=0.72, stripe_angle=10, stripe_freq=4.0,
                                   stripe_strength=0.06, spot_density=0.0, blur_sigma=0.8),
    "purple_blotch": TextureParams(hue=0.83, saturation=0.60, stripe_angle=150, stripe_freq=4.0,
                                   stripe_strength=0.03, spot_density=12.0, spot_depth=0.50, blur_sigma=0.6),
    "thrips":        TextureParams(hue=0.14, saturation=0.70, stripe_angle=25, stripe_freq=7.0,
                                   stripe_strength=0.22, spot_density=0.0, blur_sigma=0.6),
    "iysv":          TextureParams(hue=0.47, saturation=0.58, stripe_angle=80, stripe_freq=5.0,
                                   stripe_strength=0.14, spot_density=4.0, spot_depth=0.38, blur_sigma=0.7),
    "anthracnose":   TextureParams(hue=0.55, saturation=0.58, stripe_angle=45, stripe_freq=6.0,
                                   stripe_strength=0.16, spot_density=2.0, spot_depth=0.35, blur_sigma=0.7),
    "twister":       TextureParams(hue=0.56, saturation=0.58, stripe_angle=55, stripe_freq=6.0,
                                   stripe_strength=0.16, spot_density=2.0, spot_depth=0.35, blur_sigma=0.7),
    "stemphylium":   TextureParams(hue=0.83, saturation=0.60, stripe_angle=120, stripe_freq=4.5,
                                   stripe_strength=0.26, spot_density=2.5, spot_depth=0.32, blur_sigma=0.6),
    "bulb_rot":      TextureParams(hue=0.14, saturation=0.70, stripe_angle=80, stripe_freq=7.0,
                                   stripe_strength=0.22, spot_density=0.0, blur_sigma=0.6),
    "basal_rot":     TextureParams(hue=0.30, saturation=0.72, stripe_angle=10, stripe_freq=4.0,
                                   stripe_strength=0.06, spot_density=7.0, spot_depth=0.45, blur_sigma=0.8),
}


def _spec_from_counts(counts: dict[str, int], image_size: int, seed: int) -> SyntheticSpec:
    names = tuple(counts)
    return SyntheticSpec(
        class_names=names,
        counts=tuple(counts[n] for n in names),
        image_size=image_size,
        seed=seed,
        textures=tuple(DEFAULT_TEXTURES[n] for n in names),
    )


def desk_spec(seed: int = 7, image_size: int = 64) -> SyntheticSpec:
    """The ~1100-image, 9-class, 7.6:1 benchmark spec used by the registry."""
    return _spec_from_counts(DESK_COUNTS, image_size, seed)


def field_spec(seed: int = 7, image_size: int = 64) -> SyntheticSpec:
    """Full 5330-image analog of the field dataset's class tallies."""
    return _spec_from_counts(FIELD_COUNTS, image_size, seed)


def render_image(size: int, tp: TextureParams, rng: np.random.Generator) -> np.ndarray:
    """Render one (size, size, 3) float32 image in [0, 1] from the given RNG."""
    s = size
    small = rng.standard_normal((max(2, s // 8), max(2, s // 8))).astype(np.float32)
    base = cv2.resize(small, (s, s), interpolation=cv2.INTER_CUBIC)
    base = (base - base.mean()) / (base.std() + 1e-6)

    coords = np.arange(s, dtype=np.float32) / s
    xx, yy = np.meshgrid(coords, coords)
    angle = np.deg2rad(tp.stripe_angle + rng.uniform(-tp.angle_jitter, tp.angle_jitter))
    freq = tp.stripe_freq * (1.0 + rng.uniform(-0.15, 0.15))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    stripes = np.sin(2.0 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) + phase)

    value = 0.55 + 0.12 * base + 0.5 * tp.stripe_strength * stripes.astype(np.float32)

    # nuisance illumination gradient, uncorrelated with class
    g_angle = rng.uniform(0.0, 2.0 * np.pi)
    g_strength = rng.uniform(0.0, 0.12)
    value = value + g_strength * ((xx - 0.5) * np.cos(g_angle) + (yy - 0.5) * np.sin(g_angle)).astype(np.float32)

    for _ in range(rng.poisson(tp.spot_density)):
        cx, cy = rng.uniform(0, s, size=2)
        radius = rng.uniform(s / 24, s / 9)
        depth = tp.spot_depth * rng.uniform(0.7, 1.3)
        d2 = (np.arange(s, dtype=np.float32)[None, :] - cx) ** 2 + (np.arange(s, dtype=np.float32)[:, None] - cy) ** 2
        value = value - depth * np.exp(-d2 / (2.0 * (radius / 2.0) ** 2))
    value = np.clip(value, 0.05, 0.95)

    hue = (tp.hue + rng.uniform(-tp.hue_jitter, tp.hue_jitter)) % 1.0
    sat = float(np.clip(tp.saturation * rng.uniform(0.85, 1.15), 0.0, 1.0))
    hsv = np.stack([np.full_like(value, hue), np.full_like(value, sat), value], axis=-1)
    img = hsv_to_rgb(hsv).astype(np.float32)

    if tp.blur_sigma > 0:
        img = cv2.GaussianBlur(img, (0, 0), tp.blur_sigma)
    img = img + rng.normal(0.0, tp.noise_sigma, img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[LabeledImage], ClassCatalog]:
    """Render the full dataset described by ``spec``. Deterministic per (seed, class, index)."""
    images: list[LabeledImage] = []
    for ci, (name, count, tp) in enumerate(zip(spec.class_names, spec.counts, spec.textures)):
        for j in range(count):
            rng = np.random.default_rng([spec.seed, ci, j])
            pixels = render_image(spec.image_size, tp, rng)
            images.append(LabeledImage(pixels, ci, f"{name}/{j:05d}"))
    return images, ClassCatalog(tuple(spec.class_names), tuple(spec.counts))


def write_dataset(spec: SyntheticSpec, out_dir: Path | str) -> tuple[Path, ClassCatalog]:
    """Write PNGs + manifest.csv + catalog.json + spec.json; returns the manifest path."""
    out_dir = Path(out_dir)
    images, catalog = generate_synthetic(spec)
    rows = []
    for im in images:
        rel = f"images/{im.source_id}.png"
        full = out_dir / rel
        full.parent.mkdir(parents=True, exist_ok=True)
        arr = np.round(im.pixels * 255.0).astype(np.uint8)
        Image.fromarray(arr).save(full)
        rows.append((rel, catalog.names[im.label]))
    manifest = out_dir / "manifest.csv"
    write_manifest(rows, manifest)
    (out_dir / "catalog.json").write_text(catalog.to_json(), encoding="utf-8")
    (out_dir / "spec.json").write_text(spec.to_json(), encoding="utf-8")
    return manifest, catalog

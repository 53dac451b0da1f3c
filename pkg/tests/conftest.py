import numpy as np
import pytest
from PIL import Image

from onionbench.augment import PipelineConfig
from onionbench.synthetic import SyntheticSpec, TextureParams
from onionbench.training import TrainConfig


@pytest.fixture
def png_factory(tmp_path):
    """Write a small solid-color PNG under tmp_path and return its path."""

    def make(rel_path: str, size: int = 8, color=(120, 200, 90)):
        path = tmp_path / rel_path
        path.parent.mkdir(parents=True, exist_ok=True)
        arr = np.zeros((size, size, 3), dtype=np.uint8)
        arr[:] = color
        Image.fromarray(arr).save(path)
        return path

    return make


def micro_spec(seed: int = 3, counts=(12, 9, 6), size: int = 16) -> SyntheticSpec:
    """Tiny three-class spec for fast end-to-end tests."""
    names = ("alpha", "beta", "gamma")[: len(counts)]
    textures = (
        TextureParams(hue=0.02, stripe_strength=0.2, stripe_freq=3.0),
        TextureParams(hue=0.35, stripe_strength=0.2, stripe_freq=5.0, stripe_angle=90.0),
        TextureParams(hue=0.68, spot_density=3.0),
    )[: len(counts)]
    return SyntheticSpec(class_names=names, counts=tuple(counts), image_size=size,
                         seed=seed, textures=textures)


def micro_pipeline(size: int = 16) -> PipelineConfig:
    return PipelineConfig(target_size=size)


def micro_train(**kw) -> TrainConfig:
    base = dict(epochs=2, batch_size=16, learning_rate=1e-3, patience=10,
                seed=0, deterministic=True)
    base.update(kw)
    return TrainConfig(**base)

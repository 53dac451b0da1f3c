"""Desk-scale convolutional classifiers with optional attention.

Two backbone families: a densely connected stack with transitions and a plain
residual stack. Both are sized for 64 px inputs and a 0.1M-1M parameter
budget; attention (when enabled) sits once after the final feature map.
Checkpoints use a self-describing container: a JSON header listing tensor
names/shapes/dtypes followed by raw little-endian buffers.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .cbam import Cbam, CbamConfig
from .errors import ConfigError, NumericError, ShapeError


@dataclass(frozen=True)
class BackboneSpec:
    family: str                         # "dense-small" | "residual-small"
    stage_widths: tuple[int, ...]       # stem width, then transition/stage widths
    blocks_per_stage: tuple[int, ...]
    growth_rate: int                    # dense family only
    out_channels: int                   # declared; verified against a real forward

    def __post_init__(self):
        if self.family not in ("dense-small", "residual-small"):
            raise ConfigError(f"unknown backbone family {self.family!r}")
        if len(self.stage_widths) != len(self.blocks_per_stage):
            raise ConfigError("stage_widths and blocks_per_stage must align")
        if not self.stage_widths:
            raise ConfigError("backbone needs at least one stage")
        if any(w <= 0 for w in self.stage_widths) or any(b <= 0 for b in self.blocks_per_stage):
            raise ConfigError("stage widths and block counts must be positive")
        if self.family == "dense-small" and self.growth_rate <= 0:
            raise ConfigError("dense family needs a positive growth_rate")


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneSpec
    use_cbam: bool = False
    cbam: CbamConfig = field(default_factory=CbamConfig)
    head_hidden: tuple[int, ...] = (256,)
    head_dropout: float = 0.3

    def __post_init__(self):
        if any(w <= 0 for w in self.head_hidden):
            raise ConfigError(f"head widths must be positive, got {self.head_hidden}")
        if not 0.0 <= self.head_dropout < 1.0:
            raise ConfigError(f"head_dropout must lie in [0, 1), got {self.head_dropout}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            backbone=BackboneSpec(
                family=d["backbone"]["family"],
                stage_widths=tuple(d["backbone"]["stage_widths"]),
                blocks_per_stage=tuple(d["backbone"]["blocks_per_stage"]),
                growth_rate=int(d["backbone"]["growth_rate"]),
                out_channels=int(d["backbone"]["out_channels"]),
            ),
            use_cbam=bool(d["use_cbam"]),
            cbam=CbamConfig(**d["cbam"]),
            head_hidden=tuple(d["head_hidden"]),
            head_dropout=float(d["head_dropout"]),
        )


# Known-good presets; out_channels verified at build time.
BACKBONES = {
    "d121s": BackboneSpec(family="dense-small", stage_widths=(24, 48, 64),
                          blocks_per_stage=(4, 4, 4), growth_rate=12, out_channels=112),
    "r50s": BackboneSpec(family="residual-small", stage_widths=(16, 32, 64),
                         blocks_per_stage=(2, 2, 2), growth_rate=0, out_channels=64),
}


class _DenseLayer(nn.Module):
    def __init__(self, in_ch: int, growth: int):
        super().__init__()
        self.norm = nn.BatchNorm2d(in_ch)
        self.conv = nn.Conv2d(in_ch, growth, 3, padding=1, bias=False)

    def forward(self, x):
        return torch.cat([x, self.conv(torch.relu(self.norm(x)))], dim=1)


class _Transition(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.norm = nn.BatchNorm2d(in_ch)
        self.conv = nn.Conv2d(in_ch, out_ch, 1, bias=False)
        self.pool = nn.AvgPool2d(2)

    def forward(self, x):
        return self.pool(self.conv(torch.relu(self.norm(x))))


class _ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.norm1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.norm2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        h = torch.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return torch.relu(h + self.shortcut(x))


def _build_dense(spec: BackboneSpec) -> tuple[nn.Sequential, int]:
    stem_width = spec.stage_widths[0]
    layers: list[nn.Module] = [
        nn.Conv2d(3, stem_width, 3, stride=2, padding=1, bias=False),
        nn.BatchNorm2d(stem_width),
        nn.ReLU(inplace=True),
    ]
    ch = stem_width
    n_stages = len(spec.blocks_per_stage)
    for si, n_layers in enumerate(spec.blocks_per_stage):
        for _ in range(n_layers):
            layers.append(_DenseLayer(ch, spec.growth_rate))
            ch += spec.growth_rate
        if si + 1 < n_stages:
            layers.append(_Transition(ch, spec.stage_widths[si + 1]))
            ch = spec.stage_widths[si + 1]
    layers += [nn.BatchNorm2d(ch), nn.ReLU(inplace=True)]
    return nn.Sequential(*layers), ch


def _build_residual(spec: BackboneSpec) -> tuple[nn.Sequential, int]:
    stem_width = spec.stage_widths[0]
    layers: list[nn.Module] = [
        nn.Conv2d(3, stem_width, 3, stride=2, padding=1, bias=False),
        nn.BatchNorm2d(stem_width),
        nn.ReLU(inplace=True),
    ]
    ch = stem_width
    for si, (width, n_blocks) in enumerate(zip(spec.stage_widths, spec.blocks_per_stage)):
        for bi in range(n_blocks):
            stride = 2 if si > 0 and bi == 0 else 1
            layers.append(_ResidualBlock(ch, width, stride))
            ch = width
    return nn.Sequential(*layers), ch


class ImageClassifier(nn.Module):
    """Backbone -> optional attention -> global average pool -> MLP head."""

    def __init__(self, config: ModelConfig, class_count: int):
        super().__init__()
        if class_count < 2:
            raise ConfigError(f"need at least 2 classes, got {class_count}")
        self.config = config
        self.class_count = class_count
        build = _build_dense if config.backbone.family == "dense-small" else _build_residual
        self.backbone, feat_ch = build(config.backbone)
        if feat_ch != config.backbone.out_channels:
            raise ConfigError(
                f"backbone declares {config.backbone.out_channels} output channels "
                f"but produces {feat_ch}")
        self.attention = Cbam(feat_ch, config.cbam) if config.use_cbam else None
        head: list[nn.Module] = []
        in_w = feat_ch
        for w in config.head_hidden:
            head += [nn.Linear(in_w, w), nn.ReLU(inplace=True), nn.Dropout(config.head_dropout)]
            in_w = w
        head.append(nn.Linear(in_w, class_count))
        self.head = nn.Sequential(*head)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        feats = self.backbone(x)
        if not torch.isfinite(feats).all():
            raise NumericError("non-finite activations in backbone")
        if self.attention is not None:
            feats = self.attention(feats)
            if not torch.isfinite(feats).all():
                raise NumericError("non-finite activations in attention block")
        pooled = feats.mean(dim=(2, 3))
        logits = self.head(pooled)
        if not torch.isfinite(logits).all():
            raise NumericError("non-finite logits in head")
        return logits


def build_model(config: ModelConfig, class_count: int, seed: int) -> ImageClassifier:
    """Construct with seeded initialization and verify the declared feature width."""
    torch.manual_seed(seed)
    model = ImageClassifier(config, class_count)
    with torch.no_grad():
        probe = torch.zeros(1, 3, 64, 64)
        logits = model.eval()(probe)
    if logits.shape != (1, class_count):
        raise ConfigError(f"head produced shape {tuple(logits.shape)}, expected (1, {class_count})")
    model.train()
    return model


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def parameter_breakdown(model: ImageClassifier) -> dict[str, int]:
    parts = {"backbone": count_parameters(model.backbone), "head": count_parameters(model.head)}
    parts["attention"] = count_parameters(model.attention) if model.attention is not None else 0
    parts["total"] = parts["backbone"] + parts["attention"] + parts["head"]
    return parts


# ---------------------------------------------------------------------------
# Checkpoint container

_MAGIC = b"OBCK\x01"
_DTYPES = {"float32": torch.float32, "float64": torch.float64, "int64": torch.int64}


def save_checkpoint(model: nn.Module, extra: dict, path: Path | str) -> None:
    """Write JSON header + raw little-endian tensor payload."""
    path = Path(path)
    state = model.state_dict()
    entries = []
    payload = bytearray()
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise ConfigError(f"unsupported checkpoint dtype {dtype} for {name}")
        buf = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype, "bytes": len(buf)})
        payload += buf
    header = json.dumps({"tensors": entries, "extra": extra}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(bytes(payload))


def load_checkpoint(path: Path | str) -> tuple[dict[str, torch.Tensor], dict]:
    """Read a checkpoint back into a state dict plus the stored extra config."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:len(_MAGIC)] != _MAGIC:
        raise ConfigError(f"{path} is not a recognized checkpoint")
    off = len(_MAGIC)
    (hlen,) = struct.unpack("<Q", raw[off:off + 8])
    off += 8
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    state: dict[str, torch.Tensor] = {}
    for entry in header["tensors"]:
        nbytes = entry["bytes"]
        arr = np.frombuffer(raw[off:off + nbytes], dtype=np.dtype(entry["dtype"]).newbyteorder("<"))
        arr = arr.reshape(entry["shape"]).astype(entry["dtype"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
        off += nbytes
    return state, header["extra"]

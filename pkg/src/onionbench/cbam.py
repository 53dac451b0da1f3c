"""Convolutional block attention: channel gate then spatial gate.

The channel gate pools the feature map two ways (average and max), pushes both
through one shared bottleneck MLP, and sigmoids the sum. The spatial gate
stacks channel-wise average and max maps and convolves them down to a single
mask. Both multiply the features they gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError


@dataclass(frozen=True)
class CbamConfig:
    reduction: int = 8
    spatial_kernel: int = 7

    def __post_init__(self):
        if self.reduction < 1:
            raise ConfigError(f"reduction must be >= 1, got {self.reduction}")
        if self.spatial_kernel % 2 == 0 or self.spatial_kernel < 1:
            raise ConfigError(f"spatial_kernel must be odd, got {self.spatial_kernel}")


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int):
        super().__init__()
        if channels % reduction != 0:
            raise ConfigError(f"channels {channels} not divisible by reduction {reduction}")
        hidden = channels // reduction
        # one MLP shared by both pooling branches, bias-free
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden, bias=False),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, channels, bias=False),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c = x.shape[:2]
        avg = x.mean(dim=(2, 3))
        mx = x.amax(dim=(2, 3))
        gate = torch.sigmoid(self.mlp(avg) + self.mlp(mx)).view(b, c, 1, 1)
        return x * gate


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        if kernel_size % 2 == 0 or kernel_size < 1:
            raise ConfigError(f"kernel_size must be odd, got {kernel_size}")
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        avg = x.mean(dim=1, keepdim=True)
        mx = x.amax(dim=1, keepdim=True)
        gate = torch.sigmoid(self.conv(torch.cat([avg, mx], dim=1)))
        return x * gate


class Cbam(nn.Module):
    """Channel attention followed by spatial attention; preserves shape."""

    def __init__(self, channels: int, config: CbamConfig = CbamConfig()):
        super().__init__()
        self.channel = ChannelAttention(channels, config.reduction)
        self.spatial = SpatialAttention(config.spatial_kernel)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.spatial(self.channel(x))


def cbam_param_count(channels: int, reduction: int, spatial_kernel: int) -> int:
    """Closed-form parameter count: 2*C*(C/r) for the shared MLP plus the 2->1 conv."""
    if channels % reduction != 0:
        raise ConfigError(f"channels {channels} not divisible by reduction {reduction}")
    hidden = channels // reduction
    return 2 * channels * hidden + (2 * spatial_kernel * spatial_kernel + 1)

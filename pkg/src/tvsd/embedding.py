"""Feature embedding: backbone + atrous spatial pyramid pooling.

``Embedding`` maps a normalized image batch ``(B, 3, S, S)`` to

* ``E`` -- the ASPP output, ``(B, C, S/stride, S/stride)``
* ``L`` -- a shallow backbone feature at a finer stride, used by the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError


@dataclass(frozen=True)
class BackboneConfig:
    variant: str = "tiny"  # "tiny" | "reference"
    channels: tuple[int, ...] = (8, 12, 16, 24)  # stem, stage1, stage2, stage3 (tiny only)
    depths: tuple[int, ...] = (1, 1, 1)  # residual blocks per stage (tiny only)
    low_level_stage: int = 1
    aspp_channels: int = 16
    aspp_rates: tuple[int, ...] = (12, 24, 36)
    pretrained: bool = False
    weights_path: str | None = None

    def __post_init__(self):
        if self.variant not in ("tiny", "reference"):
            raise ValueError(f"unknown backbone variant {self.variant!r}")
        if self.variant == "tiny" and (len(self.channels) != 4 or len(self.depths) != 3):
            raise ValueError("tiny backbone needs 4 channel widths and 3 stage depths")

    @property
    def feature_stride(self) -> int:
        return 8 if self.variant == "tiny" else 16

    @property
    def low_level_stride(self) -> int:
        return 4


REFERENCE_BACKBONE = BackboneConfig(variant="reference", aspp_channels=256)


def _norm(channels: int) -> nn.GroupNorm:
    groups = 4 if channels % 4 == 0 else 1
    return nn.GroupNorm(groups, channels)


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1, dilation: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation, dilation=dilation)
        self.norm1 = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=dilation, dilation=dilation)
        self.norm2 = _norm(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride), _norm(cout))

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + skip)


class TinyBackbone(nn.Module):
    """Small residual net: stride 2 stem, stages at strides 4, 8 and 8 (dilated)."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        c0, c1, c2, c3 = cfg.channels
        self.stem = nn.Sequential(nn.Conv2d(3, c0, 3, stride=2, padding=1), _norm(c0), nn.ReLU())

        def stage(cin, cout, depth, stride, dilation):
            blocks = [ResidualBlock(cin, cout, stride, dilation)]
            blocks += [ResidualBlock(cout, cout, 1, dilation) for _ in range(depth - 1)]
            return nn.Sequential(*blocks)

        self.stages = nn.ModuleList(
            [
                stage(c0, c1, cfg.depths[0], 2, 1),
                stage(c1, c2, cfg.depths[1], 2, 1),
                stage(c2, c3, cfg.depths[2], 1, 2),
            ]
        )
        self.out_channels = c3
        self.low_channels = cfg.channels[cfg.low_level_stage]
        self.low_level_stage = cfg.low_level_stage

    def forward(self, x):
        x = self.stem(x)
        low = None
        for i, stage in enumerate(self.stages, start=1):
            x = stage(x)
            if i == self.low_level_stage:
                low = x
        return x, low


class ReferenceBackbone(nn.Module):
    """ResNeXt-101 (32x8d) with the last stage dilated (rate 2) instead of strided.

    The first convolution of the last stage runs at stride 1, which keeps
    the output stride at 16 (26x26 features for a 416x416 input). Batch norm
    is frozen so that externally supplied ImageNet weights can be loaded.
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        from torchvision.models import resnext101_32x8d
        from torchvision.ops import FrozenBatchNorm2d

        net = resnext101_32x8d(
            weights=None, replace_stride_with_dilation=[False, False, True], norm_layer=FrozenBatchNorm2d
        )
        if cfg.weights_path:
            state = torch.load(cfg.weights_path, map_location="cpu", weights_only=True)
            net.load_state_dict(state, strict=False)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.stages = nn.ModuleList([net.layer1, net.layer2, net.layer3, net.layer4])
        self.out_channels = 2048
        self.low_channels = (256, 512, 1024, 2048)[cfg.low_level_stage - 1]
        self.low_level_stage = cfg.low_level_stage

    def forward(self, x):
        x = self.stem(x)
        low = None
        for i, stage in enumerate(self.stages, start=1):
            x = stage(x)
            if i == self.low_level_stage:
                low = x
        return x, low


class ASPP(nn.Module):
    """1x1 branch, three dilated 3x3 branches and a pooled branch, fused by a 1x1 projection.

    Each branch is conv + ReLU; the projection is linear. All branches keep
    the spatial size (zero padding equal to the dilation).
    """

    def __init__(self, in_channels: int, out_channels: int, rates=(12, 24, 36)):
        super().__init__()
        self.rates = tuple(rates)
        self.point = nn.Conv2d(in_channels, out_channels, 1)
        self.atrous = nn.ModuleList(
            nn.Conv2d(in_channels, out_channels, 3, padding=r, dilation=r) for r in self.rates
        )
        self.pool = nn.Conv2d(in_channels, out_channels, 1)
        self.project = nn.Conv2d(out_channels * (len(self.rates) + 2), out_channels, 1)

    def forward(self, x):
        if x.shape[1] != self.point.in_channels:
            raise ShapeError(f"ASPP expects {self.point.in_channels} channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        branches = [F.relu(self.point(x))]
        branches += [F.relu(conv(x)) for conv in self.atrous]
        pooled = F.relu(self.pool(x.mean(dim=(2, 3), keepdim=True)))
        branches.append(pooled.expand(-1, -1, h, w))
        return self.project(torch.cat(branches, dim=1))


def aspp(features: torch.Tensor, module: ASPP) -> torch.Tensor:
    return module(features)


class Embedding(nn.Module):
    def __init__(self, cfg: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.cfg = cfg
        self.backbone = TinyBackbone(cfg) if cfg.variant == "tiny" else ReferenceBackbone(cfg)
        self.aspp = ASPP(self.backbone.out_channels, cfg.aspp_channels, cfg.aspp_rates)

    @property
    def out_channels(self) -> int:
        return self.cfg.aspp_channels

    @property
    def low_channels(self) -> int:
        return self.backbone.low_channels

    def forward(self, x):
        stride = self.cfg.feature_stride
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected images of shape (B, 3, H, W), got {tuple(x.shape)}")
        if x.shape[-1] % stride or x.shape[-2] % stride:
            raise ShapeError(f"input size {tuple(x.shape[-2:])} is not divisible by feature stride {stride}")
        feats, low = self.backbone(x)
        return self.aspp(feats), low


def embed(image: torch.Tensor, model: Embedding) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(E, L)`` for a single image ``(3,S,S)`` or a batch ``(B,3,S,S)``."""
    if image.ndim == 3:
        e, low = model(image.unsqueeze(0))
        return e[0], low[0]
    return model(image)

"""Dual gated co-attention between two frames of the same video.

Feature maps are ``(B, C, H, W)`` tensors. Spatial positions are flattened
row-major, so position ``i`` is ``(i // W, i % W)``.

Pipeline, applied symmetrically to both frames::

    A   = E1^ M E2^T                       affinity, (B, HW, HW)
    H1  = softmax_rows(A)   E2^            partner summary on frame 1's grid
    H2  = softmax_rows(A^T) E1^
    Q   = conv3x3([H1, H2])                fused feature
    K_i = sigmoid(conv1x1_i(Q))            spatial gates, (B, 1, H, W)
    U_i = sigmoid(fc_i(GAP(Q)))            channel gates, (B, C, 1, 1)
    C_i = conv3x3([E_i, H_i * K_i * U_i])  refined output
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import NumericError, ShapeError


def flatten_spatial(e: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) -> (B, HW, C)"""
    return e.flatten(2).transpose(1, 2)


def unflatten_spatial(t: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """(B, HW, C) -> (B, C, H, W)"""
    return t.transpose(1, 2).reshape(t.shape[0], t.shape[2], height, width)


def affinity(e1: torch.Tensor, e2: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    if e1.shape != e2.shape:
        raise ShapeError(f"feature shapes differ: {tuple(e1.shape)} vs {tuple(e2.shape)}")
    c = e1.shape[1]
    if weight.shape != (c, c):
        raise ShapeError(f"weight matrix must be {c}x{c}, got {tuple(weight.shape)}")
    return flatten_spatial(e1) @ weight @ flatten_spatial(e2).transpose(1, 2)


def coattend(a: torch.Tensor, e1: torch.Tensor, e2: torch.Tensor):
    """Attend each frame over its partner; returns ``(H1, H2)`` shaped like ``e1``."""
    n = e1.shape[-2] * e1.shape[-1]
    if a.shape[-2:] != (n, n):
        raise ShapeError(f"affinity must be {n}x{n}, got {tuple(a.shape[-2:])}")
    if not torch.isfinite(a).all():
        raise NumericError("affinity matrix contains non-finite entries")
    h, w = e1.shape[-2:]
    t1 = torch.softmax(a, dim=-1) @ flatten_spatial(e2)
    t2 = torch.softmax(a.transpose(-1, -2), dim=-1) @ flatten_spatial(e1)
    return unflatten_spatial(t1, h, w), unflatten_spatial(t2, h, w)


def fuse(h1: torch.Tensor, h2: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None) -> torch.Tensor:
    if h1.shape != h2.shape:
        raise ShapeError(f"co-attention features differ: {tuple(h1.shape)} vs {tuple(h2.shape)}")
    return F.conv2d(torch.cat([h1, h2], dim=1), weight, bias, padding=weight.shape[-1] // 2)


def spatial_gate(q: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None) -> torch.Tensor:
    return torch.sigmoid(F.conv2d(q, weight, bias))


def channel_gate(q: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None) -> torch.Tensor:
    pooled = q.mean(dim=(2, 3))
    return torch.sigmoid(F.linear(pooled, weight, bias))[:, :, None, None]


def refine(
    e: torch.Tensor,
    h: torch.Tensor,
    k: torch.Tensor | None,
    u: torch.Tensor | None,
    weight: torch.Tensor,
    bias: torch.Tensor | None,
) -> torch.Tensor:
    """Conv3x3(concat(E, H * K * U)); ``None`` gates act as all-ones."""
    if e.shape != h.shape:
        raise ShapeError(f"E and H differ: {tuple(e.shape)} vs {tuple(h.shape)}")
    gated = h
    if k is not None:
        gated = gated * k
    if u is not None:
        gated = gated * u
    return F.conv2d(torch.cat([e, gated], dim=1), weight, bias, padding=weight.shape[-1] // 2)


@dataclass
class GateMaps:
    spatial: torch.Tensor  # (B, 1, H, W)
    channel: torch.Tensor  # (B, C, 1, 1)


@dataclass
class DGCOutput:
    c1: torch.Tensor
    c2: torch.Tensor
    affinity: torch.Tensor
    h1: torch.Tensor
    h2: torch.Tensor
    fused: torch.Tensor | None = None
    gates1: GateMaps | None = None
    gates2: GateMaps | None = None


class DualGatedCoAttention(nn.Module):
    """Parameters and forward pass for the co-attention + dual gate block.

    ``share_refine`` ties the output convolution of both frames (siamese).
    Gates always have separate parameters per frame.
    """

    def __init__(self, channels: int, share_refine: bool = True):
        super().__init__()
        self.channels = channels
        c = channels
        bound = math.sqrt(6.0 / (2 * c))
        self.weight = nn.Parameter(torch.empty(c, c).uniform_(-bound, bound))
        self.fuse = nn.Conv2d(2 * c, c, 3, padding=1)
        self.spatial_a1 = nn.Conv2d(c, 1, 1)
        self.spatial_a2 = nn.Conv2d(c, 1, 1)
        self.channel_a1 = nn.Linear(c, c)
        self.channel_a2 = nn.Linear(c, c)
        self.refine_a1 = nn.Conv2d(2 * c, c, 3, padding=1)
        self.refine_a2 = self.refine_a1 if share_refine else nn.Conv2d(2 * c, c, 3, padding=1)
        self.share_refine = share_refine

    def gates(self, q: torch.Tensor) -> tuple[GateMaps, GateMaps]:
        g1 = GateMaps(
            spatial_gate(q, self.spatial_a1.weight, self.spatial_a1.bias),
            channel_gate(q, self.channel_a1.weight, self.channel_a1.bias),
        )
        g2 = GateMaps(
            spatial_gate(q, self.spatial_a2.weight, self.spatial_a2.bias),
            channel_gate(q, self.channel_a2.weight, self.channel_a2.bias),
        )
        return g1, g2

    def forward(self, e1: torch.Tensor, e2: torch.Tensor, dual_gate: bool = True) -> DGCOutput:
        a = affinity(e1, e2, self.weight)
        h1, h2 = coattend(a, e1, e2)
        r1, r2 = self.refine_a1, self.refine_a2
        if not dual_gate:
            c1 = refine(e1, h1, None, None, r1.weight, r1.bias)
            c2 = refine(e2, h2, None, None, r2.weight, r2.bias)
            return DGCOutput(c1, c2, a, h1, h2)
        q = fuse(h1, h2, self.fuse.weight, self.fuse.bias)
        g1, g2 = self.gates(q)
        c1 = refine(e1, h1, g1.spatial, g1.channel, r1.weight, r1.bias)
        c2 = refine(e2, h2, g2.spatial, g2.channel, r2.weight, r2.bias)
        return DGCOutput(c1, c2, a, h1, h2, q, g1, g2)


def dgc_forward(e1, e2, module: DualGatedCoAttention, dual_gate: bool = True):
    out = module(e1, e2, dual_gate=dual_gate)
    return out.c1, out.c2

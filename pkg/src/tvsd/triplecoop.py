"""Similarity loss between pooled descriptors of a frame triple."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class TempConfig:
    tau: float = 0.7
    epsilon: float = 1e-12
    beta: float = 10.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.beta < 0:
            raise ConfigError(f"beta must be non-negative, got {self.beta}")


@dataclass
class SimilarityPair:
    same_video: torch.Tensor
    cross_video: torch.Tensor


def pool_normalize(e: torch.Tensor, epsilon: float = 1e-12) -> torch.Tensor:
    """Spatial mean per channel, divided by ``max(||P||_2, epsilon)``.

    ``e`` is ``(B, C, H, W)`` or ``(C, H, W)``; returns ``(B, C)`` or ``(C,)``.
    Below ``epsilon`` the denominator is the constant ``epsilon``.
    """
    p = e.mean(dim=(-2, -1))
    norm = torch.linalg.vector_norm(p, dim=-1, keepdim=True)
    return p / torch.clamp_min(norm, epsilon)


def similarities(n_a1: torch.Tensor, n_a2: torch.Tensor, n_b: torch.Tensor) -> SimilarityPair:
    if not (n_a1.shape == n_a2.shape == n_b.shape):
        raise ShapeError(
            f"descriptor shapes differ: {tuple(n_a1.shape)}, {tuple(n_a2.shape)}, {tuple(n_b.shape)}"
        )
    return SimilarityPair((n_a1 * n_a2).sum(-1), (n_a1 * n_b).sum(-1))


def softplus(x: torch.Tensor) -> torch.Tensor:
    """log(1 + exp(x)) without overflow and without a linear cut-off."""
    return torch.clamp_min(x, 0) + torch.log1p(torch.exp(-torch.abs(x)))


def aux_loss(same_video, cross_video, tau: float = 0.7) -> torch.Tensor:
    """Two-way temperature softmax cross-entropy with target (1, 0).

    Equals ``-log(exp(s/tau) / (exp(s/tau) + exp(c/tau)))``, evaluated as
    ``softplus((c - s) / tau)``. Batched inputs give per-sample losses.
    """
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    s = torch.as_tensor(same_video, dtype=torch.float64) if not torch.is_tensor(same_video) else same_video
    c = torch.as_tensor(cross_video, dtype=s.dtype) if not torch.is_tensor(cross_video) else cross_video
    return softplus((c - s) / tau)


def triple_aux_loss(e_a1, e_a2, e_b, cfg: TempConfig = TempConfig()) -> torch.Tensor:
    """Mean auxiliary loss of a batch of feature triples."""
    n1, n2, nb = (pool_normalize(e, cfg.epsilon) for e in (e_a1, e_a2, e_b))
    v = similarities(n1, n2, nb)
    return aux_loss(v.same_video, v.cross_video, cfg.tau).mean()

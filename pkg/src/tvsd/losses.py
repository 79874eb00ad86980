"""Segmentation losses on logits: BCE plus Lovasz hinge, and the total objective.

Logits and masks are ``(H, W)`` for one image or ``(B, H, W)`` for a batch;
batched losses are computed per image and averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ShapeError


def _check(logits: torch.Tensor, target: torch.Tensor):
    if logits.shape != target.shape:
        raise ShapeError(f"logits {tuple(logits.shape)} and mask {tuple(target.shape)} differ")
    if logits.ndim not in (2, 3):
        raise ShapeError("expected (H, W) or (B, H, W)")


def bce_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check(logits, target)
    return F.binary_cross_entropy_with_logits(logits, target.to(logits.dtype))


def lovasz_grad(sorted_labels: torch.Tensor) -> torch.Tensor:
    """Discrete gradient of the Jaccard loss along a sorted label sequence.

    Entry ``i`` is ``J(first i+1 errors) - J(first i errors)`` where ``J`` is
    the Jaccard loss of the misclassified set.
    """
    gts = sorted_labels.sum()
    intersection = gts - sorted_labels.cumsum(0)
    union = gts + (1 - sorted_labels).cumsum(0)
    jaccard = 1.0 - intersection / union
    if len(sorted_labels) > 1:
        jaccard = torch.cat([jaccard[:1], jaccard[1:] - jaccard[:-1]])
    return jaccard


def lovasz_hinge_flat(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Lovasz hinge of one flattened image; ``labels`` in {0, 1}."""
    labels = labels.to(logits.dtype)
    signs = 2.0 * labels - 1.0
    errors = 1.0 - logits * signs
    errors_sorted, perm = torch.sort(errors, descending=True)
    grad = lovasz_grad(labels[perm])
    return torch.dot(F.relu(errors_sorted), grad)


def lovasz_hinge(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check(logits, target)
    if logits.ndim == 2:
        return lovasz_hinge_flat(logits.reshape(-1), target.reshape(-1))
    losses = [lovasz_hinge_flat(l.reshape(-1), t.reshape(-1)) for l, t in zip(logits, target)]
    return torch.stack(losses).mean()


def branch_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return bce_loss(logits, target) + lovasz_hinge(logits, target)


@dataclass
class LossBreakdown:
    l_a1: torch.Tensor
    l_a2: torch.Tensor
    l_b: torch.Tensor
    seg: torch.Tensor
    aux: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: v.detach().item() for k, v in self.__dict__.items()}


def total_loss(l_a1, l_a2, l_b, aux, beta: float = 10.0) -> LossBreakdown:
    if beta < 0:
        raise ValueError("beta must be non-negative")
    as_t = lambda x: x if torch.is_tensor(x) else torch.tensor(float(x), dtype=torch.float64)  # noqa: E731
    l_a1, l_a2, l_b, aux = map(as_t, (l_a1, l_a2, l_b, aux))
    seg = l_a1 + l_a2 + l_b
    return LossBreakdown(l_a1, l_a2, l_b, seg, aux, seg + beta * aux)

"""Three-branch network: shared embedding, co-attention on the same-video pair,
shared decoder, and the auxiliary descriptors of the similarity loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..dgc import DGCOutput, DualGatedCoAttention
from ..embedding import BackboneConfig, Embedding
from ..losses import LossBreakdown, branch_loss, total_loss
from ..triplecoop import SimilarityPair, TempConfig, aux_loss, pool_normalize, similarities
from .config import AblationFlags, Config, ModelConfig


@dataclass
class ForwardOutput:
    logits_a1: torch.Tensor  # (B, S, S)
    logits_a2: torch.Tensor
    logits_b: torch.Tensor
    e_a1: torch.Tensor
    e_a2: torch.Tensor
    e_b: torch.Tensor
    descriptors: tuple[torch.Tensor, torch.Tensor, torch.Tensor] | None = None
    similarity: SimilarityPair | None = None
    dgc: DGCOutput | None = None

    def shadow_maps(self):
        return tuple(torch.sigmoid(x) for x in (self.logits_a1, self.logits_a2, self.logits_b))


def _group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(4 if channels % 4 == 0 else 1, channels)


class TVSDNet(nn.Module):
    def __init__(self, backbone: BackboneConfig = BackboneConfig(), model: ModelConfig = ModelConfig()):
        super().__init__()
        self.embedding = Embedding(backbone)
        c = self.embedding.out_channels
        # Built even when co-attention is disabled so that initialization
        # does not depend on the ablation flags.
        self.dgc = DualGatedCoAttention(c, share_refine=model.share_refine)
        self.low_proj = nn.Sequential(
            nn.Conv2d(self.embedding.low_channels, model.low_channels, 1),
            _group_norm(model.low_channels),
            nn.ReLU(),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(c + model.low_channels, model.decoder_channels, 3, padding=1),
            _group_norm(model.decoder_channels),
            nn.ReLU(),
            nn.Conv2d(model.decoder_channels, 1, 1),
        )

    @classmethod
    def from_config(cls, cfg: Config) -> "TVSDNet":
        return cls(cfg.backbone, cfg.model)

    def backbone_parameters(self):
        return list(self.embedding.backbone.parameters())

    def scratch_parameters(self):
        backbone = {id(p) for p in self.backbone_parameters()}
        return [p for p in self.parameters() if id(p) not in backbone]

    def decode(self, c: torch.Tensor, low: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
        c = F.interpolate(c, size=low.shape[-2:], mode="bilinear", align_corners=False)
        x = self.decoder(torch.cat([c, self.low_proj(low)], dim=1))
        return F.interpolate(x, size=size, mode="bilinear", align_corners=False)[:, 0]

    def forward_triple(
        self,
        x_a1: torch.Tensor,
        x_a2: torch.Tensor,
        x_b: torch.Tensor,
        flags: AblationFlags = AblationFlags(),
        temp: TempConfig = TempConfig(),
    ) -> ForwardOutput:
        size = x_a1.shape[-2:]
        n = x_a1.shape[0]
        e, low = self.embedding(torch.cat([x_a1, x_a2, x_b]))
        e_a1, e_a2, e_b = e.split(n)
        l_a1, l_a2, l_b = low.split(n)

        dgc_out = None
        c_a1, c_a2 = e_a1, e_a2
        if flags.enable_coattention:
            dgc_out = self.dgc(e_a1, e_a2, dual_gate=flags.enable_dual_gate)
            c_a1, c_a2 = dgc_out.c1, dgc_out.c2

        logits = self.decode(torch.cat([c_a1, c_a2, e_b]), torch.cat([l_a1, l_a2, l_b]), size)
        out = ForwardOutput(*logits.split(n), e_a1, e_a2, e_b, dgc=dgc_out)
        if flags.enable_tmodule:
            out.descriptors = tuple(pool_normalize(x, temp.epsilon) for x in (e_a1, e_a2, e_b))
            out.similarity = similarities(*out.descriptors)
        return out

    def predict_pair(self, x_a1: torch.Tensor, x_a2: torch.Tensor, flags: AblationFlags = AblationFlags()):
        """Logits of the first branch for a batch of (target, partner) pairs."""
        n = x_a1.shape[0]
        e, low = self.embedding(torch.cat([x_a1, x_a2]))
        e_a1, e_a2 = e.split(n)
        c_a1 = e_a1
        if flags.enable_coattention:
            c_a1 = self.dgc(e_a1, e_a2, dual_gate=flags.enable_dual_gate).c1
        return self.decode(c_a1, low[:n], x_a1.shape[-2:])


def forward_triple(model: TVSDNet, x_a1, x_a2, x_b, flags=AblationFlags(), temp=TempConfig()):
    return model.forward_triple(x_a1, x_a2, x_b, flags, temp)


def compute_losses(out: ForwardOutput, masks, temp: TempConfig = TempConfig()) -> LossBreakdown:
    """Segmentation loss per branch plus the weighted auxiliary loss.

    ``masks`` is ``(G_a1, G_a2, G_b)``; without descriptors the auxiliary term is 0.
    """
    g_a1, g_a2, g_b = masks
    l_a1 = branch_loss(out.logits_a1, g_a1)
    l_a2 = branch_loss(out.logits_a2, g_a2)
    l_b = branch_loss(out.logits_b, g_b)
    if out.similarity is None:
        aux = torch.zeros((), dtype=l_a1.dtype)
    else:
        aux = aux_loss(out.similarity.same_video, out.similarity.cross_video, temp.tau).mean()
    return total_loss(l_a1, l_a2, l_b, aux, temp.beta)

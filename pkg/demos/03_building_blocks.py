"""A tour of the numerical building blocks, each on inputs small enough to read.

    python demos/03_building_blocks.py
"""

import math

import numpy as np
import torch

from tvsd.dgc import DualGatedCoAttention, affinity, coattend, dgc_forward
from tvsd.losses import bce_loss, lovasz_hinge
from tvsd.metrics import ber, confusion, f_measure, iou, mae
from tvsd.triplecoop import aux_loss, pool_normalize, similarities

torch.manual_seed(0)
D = torch.float64

print("== co-attention on two 2x2 maps with 3 channels ==")
e1, e2 = torch.randn(1, 3, 2, 2, dtype=D), torch.randn(1, 3, 2, 2, dtype=D)
m = DualGatedCoAttention(3).double()
a = affinity(e1, e2, m.weight.detach())
print("affinity (4 positions of frame 1 x 4 positions of frame 2):")
print(np.array2string(a[0].detach().numpy(), precision=3))
h1, h2 = coattend(a, e1, e2)
# Each attended vector is a convex mix of the partner's features.
lo, hi = e2.amin(dim=(2, 3)), e2.amax(dim=(2, 3))
print("frame-1 attended values within partner range:",
      bool(((h1.amin(dim=(2, 3)) >= lo) & (h1.amax(dim=(2, 3)) <= hi)).all()))
c1, c2 = dgc_forward(e1, e2, m)
print("gated outputs keep the input shape:", tuple(c1.shape), tuple(c2.shape))

print("\n== similarity term ==")
print("equal similarities cost ln 2 at any temperature:",
      [round(aux_loss(0.3, 0.3, t).item(), 12) for t in (0.1, 0.7, 3.0)], "ln2 =", round(math.log(2), 12))
for same, cross in ((1.0, 0.0), (0.5, 0.5), (0.0, 1.0)):
    print(f"  same-video {same:.1f}  cross-video {cross:.1f}  ->  {aux_loss(same, cross, 0.7).item():.6f}")
e = torch.randn(1, 8, 4, 4, dtype=D)
n = [pool_normalize(x) for x in (e, e + 0.1 * torch.randn_like(e), torch.randn_like(e))]
v = similarities(*n)
print(f"near-duplicate frame similarity {v.same_video.item():.3f}, unrelated frame {v.cross_video.item():.3f}")

print("\n== segmentation losses on one 4-pixel image ==")
labels = torch.tensor([[1.0, 1.0, 0.0, 0.0]], dtype=D)
for logits in ([3.0, 3.0, -3.0, -3.0], [0.5, -0.5, 0.5, -0.5], [-3.0, -3.0, 3.0, 3.0]):
    x = torch.tensor([logits], dtype=D)
    print(f"  logits {logits}:  BCE {bce_loss(x, labels).item():.4f}  Lovasz {lovasz_hinge(x, labels).item():.4f}")

print("\n== metrics on a 2x2 frame ==")
pred = np.array([[1.0, 1.0], [0.0, 0.0]])
gt = np.array([[1, 0], [1, 0]], np.uint8)
c = confusion(pred, gt)
print(f"tp {c.tp} fp {c.fp} fn {c.fn} tn {c.tn}:  MAE {mae(pred, gt):.3f}  IoU {iou(c):.4f}  "
      f"BER {ber(c):.1f}  F_beta {f_measure(pred, gt):.4f}")

"""Synthesize a toy video dataset, train the tiny network on it, then score it.

Everything runs on CPU in well under a minute:

    python demos/01_train_and_evaluate.py [workdir]

The synthetic fixture has two videos of eight 64x64 frames. Moving shadows
darken a textured background multiplicatively, while flat dark blobs act as
distractors, so darkness alone is not enough to find the shadow.
"""

import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import torch

from tvsd.datamodel import SynthConfig, generate_synthetic, validate_dataset
from tvsd.metrics import aggregate, frame_metrics
from tvsd.pipeline import fixture_config, predict_index, train

torch.set_num_threads(1)
work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="tvsd-demo-"))

# 1. Data. The generator is deterministic in its seed.
index = generate_synthetic(work / "data", SynthConfig(seed=1))
report = validate_dataset(index)
print(f"dataset at {work / 'data'}: {report.n_videos} videos, {report.n_frames} frames")

# 2. Training. Each step draws triples: two frames of one video plus a frame
# of another. The loss is three segmentation terms plus the weighted
# similarity term that pulls same-video descriptors together.
cfg = fixture_config(seed=1)
started = time.perf_counter()
result = train(cfg, index, out_dir=work / "run")
print(f"trained {len(result.log)} steps in {time.perf_counter() - started:.1f}s")
for row in result.log[:: len(result.log) // 5] + result.log[-1:]:
    print(f"  step {row['step']:3d}  seg {row['seg']:.4f}  aux {row['aux']:.4f}  total {row['total']:.4f}")

# 3. Inference averages each frame's map over several partner frames of the
# same video, then we score against the ground truth.
frames = [frame_metrics(prob, gt, rec.video_id, rec.stem)
          for rec, prob, gt in predict_index(result.model, index, cfg)]
metrics = aggregate(frames)
print(f"MAE {metrics.mae:.4f}  F_beta {metrics.f_beta:.4f}  IoU {metrics.iou:.4f}  BER {metrics.ber:.2f}")

# A trivial all-background predictor for scale.
blank = aggregate([frame_metrics(np.zeros_like(gt, dtype=float), gt) for _, _, gt in predict_index(result.model, index, cfg)])
print(f"all-background baseline: IoU {blank.iou:.4f}  BER {blank.ber:.2f}")
print(f"checkpoint and loss log in {work / 'run'}")

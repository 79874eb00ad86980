"""Train every component ablation on the same fixture and compare.

    python demos/02_ablations.py [epochs]

The six variants toggle the co-attention block, its dual gates and the
similarity term. On a dataset this small all variants fit the training set
well; the point is that each topology trains from the same seed and data,
and that the toggles change what is learned, not whether it runs.
"""

import dataclasses
import sys
import tempfile
import time
from pathlib import Path

import torch

from tvsd.datamodel import SynthConfig, generate_synthetic
from tvsd.metrics import aggregate, frame_metrics
from tvsd.pipeline import ABLATIONS, fixture_config, predict_index, train

torch.set_num_threads(1)
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
index = generate_synthetic(Path(tempfile.mkdtemp(prefix="tvsd-abl-")) / "data", SynthConfig(seed=1))

print(f"{'variant':<18} {'co-att':>6} {'gates':>6} {'sim':>6} {'loss':>8} {'IoU':>7} {'BER':>7} {'sec':>5}")
for name, flags in ABLATIONS.items():
    cfg = dataclasses.replace(fixture_config(seed=1, epochs=epochs), flags=flags)
    started = time.perf_counter()
    result = train(cfg, index)
    seconds = time.perf_counter() - started
    m = aggregate([frame_metrics(p, g) for _, p, g in predict_index(result.model, index, cfg)])
    print(f"{name:<18} {flags.enable_coattention!s:>6} {flags.enable_dual_gate!s:>6} {flags.enable_tmodule!s:>6} "
          f"{result.log[-1]['total']:8.4f} {m.iou:7.4f} {m.ber:7.2f} {seconds:5.1f}")

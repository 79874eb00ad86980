"""Training loop: triple sampling, Adam with two parameter groups, warm-up + cosine schedule."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..datamodel import DatasetIndex, FrameRecord, load_frame, sample_triple
from ..errors import NumericError, SamplingError, TrainingError
from .checkpoint import Checkpoint
from .config import Config
from .model import TVSDNet, compute_losses

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "lr", "seg", "aux", "total")


def lr_factor(step: int, total_steps: int, warmup_steps: int, start_factor: float = 0.01) -> float:
    """Multiplier on the peak rate: linear warm-up, then cosine decay reaching 0 at the last step."""
    if warmup_steps > 0 and step < warmup_steps:
        return start_factor + (1.0 - start_factor) * step / warmup_steps
    span = total_steps - 1 - warmup_steps
    if span <= 0:
        return 1.0
    progress = min((step - warmup_steps) / span, 1.0)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def steps_per_epoch(n_frames: int, batch_size: int) -> int:
    return math.ceil(n_frames / batch_size)


def schedule(cfg: Config, n_frames: int) -> tuple[int, int]:
    """(total_steps, warmup_steps) for a dataset of ``n_frames``."""
    per_epoch = steps_per_epoch(n_frames, cfg.train.batch_size)
    return cfg.train.epochs * per_epoch, round(cfg.train.warmup_epochs * per_epoch)


def make_optimizer(model: TVSDNet, cfg: Config) -> torch.optim.Adam:
    """Adam with a 'scratch' and a 'pretrained' group.

    The backbone is only treated as pretrained when the backbone config says so;
    a backbone trained from scratch shares the scratch rate.
    """
    t = cfg.train
    if cfg.backbone.pretrained:
        groups = [
            {"params": model.scratch_parameters(), "lr": t.lr_scratch, "base_lr": t.lr_scratch, "name": "scratch"},
            {"params": model.backbone_parameters(), "lr": t.lr_pretrained, "base_lr": t.lr_pretrained, "name": "pretrained"},
        ]
    else:
        groups = [
            {"params": list(model.parameters()), "lr": t.lr_scratch, "base_lr": t.lr_scratch, "name": "scratch"},
            {"params": [], "lr": t.lr_pretrained, "base_lr": t.lr_pretrained, "name": "pretrained"},
        ]
    return torch.optim.Adam(groups, weight_decay=t.weight_decay)


def set_lr(optimizer: torch.optim.Optimizer, factor: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = group["base_lr"] * factor


class FrameCache:
    """Memoizes ``load_frame`` for the small datasets trained at desk scale."""

    def __init__(self, cfg: Config):
        self.size = cfg.data.input_size
        self.mean, self.std = cfg.data.mean, cfg.data.std
        self._cache: dict[FrameRecord, tuple[np.ndarray, np.ndarray]] = {}

    def __call__(self, record: FrameRecord):
        if record not in self._cache:
            self._cache[record] = load_frame(record, self.size, self.mean, self.std)
        return self._cache[record]


def collate(triples, dtype=torch.float32):
    images = [torch.from_numpy(np.stack([getattr(t, f"image_{k}") for t in triples])).to(dtype) for k in ("a1", "a2", "b")]
    masks = [torch.from_numpy(np.stack([getattr(t, f"mask_{k}") for t in triples])).to(dtype) for k in ("a1", "a2", "b")]
    return images, masks


@dataclass
class TrainResult:
    model: TVSDNet
    checkpoint: Checkpoint
    log: list[dict] = field(default_factory=list)


def configure_determinism(enabled: bool) -> None:
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def train(
    cfg: Config,
    index: DatasetIndex,
    out_dir=None,
    max_steps: int | None = None,
    loader=None,
) -> TrainResult:
    """Train from scratch on ``index`` and return the final model and checkpoint.

    Writes ``loss.csv`` (and a diagnostic dump on a non-finite loss) to
    ``out_dir`` when given. ``max_steps`` truncates the run without changing
    the schedule.
    """
    if len(index.videos) < 2:
        raise SamplingError("training needs at least 2 videos")
    t = cfg.train
    configure_determinism(t.deterministic)
    dtype = getattr(torch, t.dtype)
    device = torch.device(t.device)

    torch.manual_seed(t.seed)
    model = TVSDNet.from_config(cfg).to(device=device, dtype=dtype)
    model.train()
    optimizer = make_optimizer(model, cfg)
    rng = np.random.default_rng(t.seed)
    loader = loader or FrameCache(cfg)

    total_steps, warmup = schedule(cfg, index.n_frames)
    n_steps = total_steps if max_steps is None else min(max_steps, total_steps)
    per_epoch = steps_per_epoch(index.n_frames, t.batch_size)

    out_dir = Path(out_dir) if out_dir is not None else None
    writer = csv_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_file = open(out_dir / "loss.csv", "w", newline="")
        writer = csv.writer(csv_file)
        writer.writerow(LOG_FIELDS)

    rows = []
    try:
        for step in range(n_steps):
            factor = lr_factor(step, total_steps, warmup, t.warmup_start_factor)
            set_lr(optimizer, factor)
            triples = [
                sample_triple(index, rng, cfg.data.max_offset, cfg.data.input_size, loader)
                for _ in range(t.batch_size)
            ]
            (x1, x2, xb), masks = collate(triples, dtype)
            x1, x2, xb = x1.to(device), x2.to(device), xb.to(device)
            masks = [m.to(device) for m in masks]

            optimizer.zero_grad(set_to_none=True)
            try:
                with torch.autocast(device.type, dtype=torch.bfloat16, enabled=t.mixed_precision):
                    out = model.forward_triple(x1, x2, xb, cfg.flags, cfg.tmodule)
                losses = compute_losses(_to_float(out, dtype) if t.mixed_precision else out, masks, cfg.tmodule)
                finite = bool(torch.isfinite(losses.total))
                detail = None if finite else losses.as_floats()
            except NumericError as exc:
                finite, losses, detail = False, None, str(exc)
            if not finite:
                _dump_nan(out_dir, step, triples, detail)
                raise TrainingError(
                    f"non-finite loss at step {step}: {detail}; "
                    f"frames {[str(r.image_path) for tr in triples for r in tr.records]}"
                )
            losses.total.backward()
            if t.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), t.grad_clip)
            optimizer.step()

            row = {
                "step": step,
                "lr": optimizer.param_groups[0]["lr"],
                "seg": losses.seg.item(),
                "aux": losses.aux.item(),
                "total": losses.total.item(),
            }
            rows.append(row)
            if writer is not None:
                writer.writerow([row[k] if k == "step" else repr(row[k]) for k in LOG_FIELDS])
            if step % 20 == 0 or step == n_steps - 1:
                log.info("step %d/%d lr %.2e total %.4f", step, n_steps, row["lr"], row["total"])
    finally:
        if csv_file is not None:
            csv_file.close()

    model.eval()
    ckpt = Checkpoint(
        params={k: v.detach().clone() for k, v in model.state_dict().items()},
        config=cfg,
        optimizer_state=optimizer.state_dict(),
        epoch=math.ceil(n_steps / per_epoch),
        step=n_steps,
        rng_state=rng.bit_generator.state,
    )
    return TrainResult(model, ckpt, rows)


def _to_float(out, dtype):
    out.logits_a1, out.logits_a2, out.logits_b = (x.to(dtype) for x in (out.logits_a1, out.logits_a2, out.logits_b))
    if out.similarity is not None:
        out.similarity.same_video = out.similarity.same_video.to(dtype)
        out.similarity.cross_video = out.similarity.cross_video.to(dtype)
    return out


def _dump_nan(out_dir, step, triples, detail) -> None:
    """``detail`` is the loss breakdown, or the error message when the forward pass failed."""
    if out_dir is None:
        return
    dump = {
        "step": step,
        "losses": detail,
        "frames": [[str(r.image_path) for r in tr.records] for tr in triples],
    }
    (out_dir / "nan_batch.json").write_text(json.dumps(dump, indent=2) + "\n")


def read_loss_log(path) -> list[dict]:
    with open(path, newline="") as f:
        return [
            {k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(f)
        ]

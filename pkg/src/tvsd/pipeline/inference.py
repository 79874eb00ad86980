"""Five-frame averaged inference and mask export."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from ..datamodel import DatasetIndex, VideoSequence, load_frame
from .config import AblationFlags, Config


def partner_indices(n_frames: int, t: int, k: int = 5) -> list[int]:
    """Partners of frame ``t``: the next ``k`` frames, topped up with the
    nearest preceding frames when the video ends early."""
    if not 0 <= t < n_frames:
        raise IndexError(f"frame {t} out of range for a video of {n_frames} frames")
    if k < 1:
        raise ValueError("k must be >= 1")
    partners = list(range(t + 1, min(t + k, n_frames - 1) + 1))
    back = t - 1
    while len(partners) < k and back >= 0:
        partners.append(back)
        back -= 1
    return partners


def running_mean(maps) -> np.ndarray:
    """Incremental mean; identical inputs come back bit-for-bit unchanged."""
    mean = None
    for i, m in enumerate(maps, start=1):
        m = np.asarray(m, dtype=np.float64)
        mean = m.copy() if mean is None else mean + (m - mean) / i
    if mean is None:
        raise ValueError("no maps to average")
    return mean


@torch.no_grad()
def infer_frame(model, video: VideoSequence, t: int, k: int = 5, loader=None, flags=AblationFlags(), size: int = 416):
    """Shadow probability map of frame ``t`` at the network input size.

    Frame ``t`` is paired with each partner as the second input and the
    first-branch sigmoid outputs are averaged.
    """
    partners = partner_indices(len(video), t, k)
    loader = loader or (lambda rec: load_frame(rec, size))
    dtype = next(model.parameters()).dtype
    device = next(model.parameters()).device
    target = torch.from_numpy(loader(video.frames[t])[0]).to(device=device, dtype=dtype)
    others = torch.stack([torch.from_numpy(loader(video.frames[p])[0]) for p in partners]).to(device=device, dtype=dtype)
    logits = model.predict_pair(target.expand(len(partners), -1, -1, -1), others, flags)
    probs = torch.sigmoid(logits).cpu().numpy()
    return running_mean(probs)


def to_uint8(prob: np.ndarray, out_size: tuple[int, int] | None = None) -> np.ndarray:
    """Resize a probability map to ``(height, width)`` bilinearly and quantize to 0..255."""
    x = torch.from_numpy(np.asarray(prob, dtype=np.float64))[None, None]
    if out_size is not None and tuple(x.shape[-2:]) != tuple(out_size):
        x = F.interpolate(x, size=out_size, mode="bilinear", align_corners=False)
    return np.clip(np.rint(x[0, 0].numpy() * 255.0), 0, 255).astype(np.uint8)


def infer_dataset(model, index: DatasetIndex, out_root, cfg: Config) -> dict:
    """Write ``<out_root>/<video_id>/<stem>.png`` for every frame plus ``manifest.json``.

    Per-frame I/O failures are recorded in the manifest and do not stop the run.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    model.eval()
    manifest = {"n_frames": index.n_frames, "k": cfg.infer.k, "frames": [], "failures": []}
    started = time.perf_counter()
    for video in index.videos:
        cache = {}

        def loader(rec):
            if rec not in cache:
                cache[rec] = load_frame(rec, cfg.data.input_size, cfg.data.mean, cfg.data.std)
            return cache[rec]

        (out_root / video.video_id).mkdir(parents=True, exist_ok=True)
        for t, rec in enumerate(video.frames):
            path = out_root / video.video_id / f"{rec.stem}.png"
            t0 = time.perf_counter()
            try:
                prob = infer_frame(model, video, t, cfg.infer.k, loader, cfg.flags, cfg.data.input_size)
                with Image.open(rec.image_path) as im:
                    width, height = im.size
                Image.fromarray(to_uint8(prob, (height, width))).save(path)
            except OSError as exc:
                manifest["failures"].append({"frame": str(rec.image_path), "output": str(path), "error": str(exc)})
                continue
            manifest["frames"].append(
                {"video_id": video.video_id, "stem": rec.stem, "path": str(path), "seconds": time.perf_counter() - t0}
            )
    manifest["seconds"] = time.perf_counter() - started
    (out_root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


@torch.no_grad()
def predict_index(model, index: DatasetIndex, cfg: Config):
    """Yield ``(record, probability map at input size)`` for every frame, in memory."""
    for video in index.videos:
        cache = {}

        def loader(rec):
            if rec not in cache:
                cache[rec] = load_frame(rec, cfg.data.input_size, cfg.data.mean, cfg.data.std)
            return cache[rec]

        for t, rec in enumerate(video.frames):
            yield rec, infer_frame(model, video, t, cfg.infer.k, loader, cfg.flags, cfg.data.input_size), loader(rec)[1]

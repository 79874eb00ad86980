"""MAE, F-measure, IoU and BER for predicted shadow maps.

Predictions are float arrays in [0, 1]; ground truth masks hold {0, 1}.
A pixel is predicted positive when ``pred >= threshold``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .datamodel import DatasetIndex, read_mask
from .errors import ShapeError

BETA2 = 0.3
N_THRESHOLDS = 256


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _check(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt.astype(bool)


def mae(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    return float(np.mean(np.abs(pred.astype(np.float64) - gt)))


def confusion(pred, gt, threshold: float = 0.5) -> ConfusionCounts:
    pred, gt = _check(pred, gt)
    pos = pred >= threshold
    tp = int(np.count_nonzero(pos & gt))
    fp = int(np.count_nonzero(pos & ~gt))
    fn = int(np.count_nonzero(~pos & gt))
    return ConfusionCounts(tp, fp, gt.size - tp - fp - fn, fn)


def iou(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fp + counts.fn
    return 1.0 if denom == 0 else counts.tp / denom


def ber(counts: ConfusionCounts) -> float:
    """Balance error rate in percent. An absent class has recall 1."""
    pos = counts.tp + counts.fn
    neg = counts.tn + counts.fp
    recall_pos = counts.tp / pos if pos else 1.0
    recall_neg = counts.tn / neg if neg else 1.0
    return 100.0 * (1.0 - 0.5 * (recall_pos + recall_neg))


def f_beta_from_counts(tp, fp, fn, beta2: float = BETA2):
    """Vectorized F-beta; thresholds with undefined precision or recall give 0."""
    tp, fp, fn = (np.asarray(x, dtype=np.float64) for x in (tp, fp, fn))
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        f = (1 + beta2) * precision * recall / (beta2 * precision + recall)
    return np.where(np.isfinite(f), f, 0.0)


def thresholds(n: int = N_THRESHOLDS) -> np.ndarray:
    return np.arange(n) / (n - 1)


def f_measure(pred, gt, mode: str = "max", threshold: float = 0.5, beta2: float = BETA2) -> float:
    """F-beta with beta^2 = 0.3.

    ``mode="max"`` sweeps 256 thresholds ``k/255`` and keeps the best;
    ``mode="fixed"`` uses ``threshold``.
    """
    pred, gt = _check(pred, gt)
    if mode == "fixed":
        c = confusion(pred, gt, threshold)
        return float(f_beta_from_counts(c.tp, c.fp, c.fn, beta2))
    if mode != "max":
        raise ValueError(f"unknown F-measure mode {mode!r}")
    tp, fp, fn = sweep_counts(pred, gt)
    return float(f_beta_from_counts(tp, fp, fn, beta2).max())


def sweep_counts(pred, gt, n: int = N_THRESHOLDS):
    """(tp, fp, fn) arrays over ``n`` evenly spaced thresholds."""
    pred, gt = _check(pred, gt)
    th = thresholds(n)
    p = pred.reshape(-1)
    g = gt.reshape(-1)
    pos = p[None, :] >= th[:, None]
    tp = np.count_nonzero(pos & g, axis=1)
    fp = np.count_nonzero(pos & ~g, axis=1)
    fn = np.count_nonzero(g) - tp
    return tp, fp, fn


@dataclass
class FrameMetrics:
    video_id: str
    stem: str
    mae: float
    f_max: float
    f_fixed: float
    iou: float
    ber: float
    counts: ConfusionCounts


def frame_metrics(pred, gt, video_id: str = "", stem: str = "", threshold: float = 0.5) -> FrameMetrics:
    c = confusion(pred, gt, threshold)
    return FrameMetrics(
        video_id,
        stem,
        mae(pred, gt),
        f_measure(pred, gt, "max"),
        f_measure(pred, gt, "fixed", threshold),
        iou(c),
        ber(c),
        c,
    )


@dataclass
class MetricReport:
    """Headline numbers plus both aggregation modes.

    Headline: ``mae`` and ``f_beta`` are frame means (max-threshold F);
    ``iou`` and ``ber`` come from confusion counts summed over the dataset.
    """

    mae: float
    f_beta: float
    iou: float
    ber: float
    frame_mean: dict[str, float]
    count_sum: dict[str, float]
    per_video: dict[str, dict[str, float]]
    n_frames: int
    missing: list[str] = field(default_factory=list)
    aggregation: str = "mae,f_beta: frame-mean; iou,ber: count-sum"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = [
            f"{'':<16}{'MAE':>8}{'F_beta':>8}{'IoU':>8}{'BER':>8}",
            f"{'headline':<16}{self.mae:>8.4f}{self.f_beta:>8.4f}{self.iou:>8.4f}{self.ber:>8.2f}",
            f"{'frame-mean':<16}{self.frame_mean['mae']:>8.4f}{self.frame_mean['f_beta']:>8.4f}"
            f"{self.frame_mean['iou']:>8.4f}{self.frame_mean['ber']:>8.2f}",
            f"{'count-sum':<16}{'':>8}{self.count_sum['f_beta_fixed']:>8.4f}"
            f"{self.count_sum['iou']:>8.4f}{self.count_sum['ber']:>8.2f}",
            "",
        ]
        for vid, row in self.per_video.items():
            lines.append(
                f"{vid:<16}{row['mae']:>8.4f}{row['f_beta']:>8.4f}{row['iou']:>8.4f}{row['ber']:>8.2f}"
            )
        lines.append(f"frames evaluated: {self.n_frames}")
        lines += [f"missing prediction: {m}" for m in self.missing]
        return "\n".join(lines) + "\n"

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        (out_dir / "metrics.txt").write_text(self.to_text())


def aggregate(frames: list[FrameMetrics], missing: list[str] | None = None) -> MetricReport:
    if not frames:
        raise ValueError("no frames to aggregate")
    total = sum((f.counts for f in frames), ConfusionCounts())

    def frame_mean(rows):
        return {
            "mae": float(np.mean([r.mae for r in rows])),
            "f_beta": float(np.mean([r.f_max for r in rows])),
            "f_beta_fixed": float(np.mean([r.f_fixed for r in rows])),
            "iou": float(np.mean([r.iou for r in rows])),
            "ber": float(np.mean([r.ber for r in rows])),
        }

    per_video = {}
    for vid in dict.fromkeys(f.video_id for f in frames):
        rows = [f for f in frames if f.video_id == vid]
        counts = sum((r.counts for r in rows), ConfusionCounts())
        per_video[vid] = {**frame_mean(rows), "iou_count_sum": iou(counts), "ber_count_sum": ber(counts)}

    fm = frame_mean(frames)
    cs = {
        "iou": iou(total),
        "ber": ber(total),
        "f_beta_fixed": float(f_beta_from_counts(total.tp, total.fp, total.fn)),
        **asdict(total),
    }
    return MetricReport(
        mae=fm["mae"],
        f_beta=fm["f_beta"],
        iou=cs["iou"],
        ber=cs["ber"],
        frame_mean=fm,
        count_sum=cs,
        per_video=per_video,
        n_frames=len(frames),
        missing=list(missing or []),
    )


def read_prediction(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def prediction_path(pred_root, video_id: str, stem: str) -> Path:
    return Path(pred_root) / video_id / f"{stem}.png"


def evaluate(pred_root, gt_index: DatasetIndex, threshold: float = 0.5) -> MetricReport:
    """Score ``<pred_root>/<video_id>/<stem>.png`` against every indexed frame.

    Frames without a prediction are listed in ``report.missing`` and skipped.
    """
    frames, missing = [], []
    for rec in gt_index.frames():
        path = prediction_path(pred_root, rec.video_id, rec.stem)
        if not path.is_file():
            missing.append(str(path))
            continue
        gt = read_mask(rec.mask_path)
        pred = read_prediction(path)
        if pred.shape != gt.shape:
            pred = np.asarray(
                Image.fromarray(np.rint(pred * 255).astype(np.uint8)).resize(gt.shape[::-1], Image.BILINEAR),
                dtype=np.float64,
            ) / 255.0
        frames.append(frame_metrics(pred, gt, rec.video_id, rec.stem, threshold))
    if not frames:
        raise FileNotFoundError(f"no predictions found under {pred_root}")
    return aggregate(frames, missing)

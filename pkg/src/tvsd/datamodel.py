"""Dataset ingestion, triple sampling, validation and synthetic fixtures.

On-disk layout (ViSha style)::

    <root>/<split>/images/<video_id>/<frame>.jpg
    <root>/<split>/labels/<video_id>/<frame>.png

Temporal order inside a video is the lexicographic order of the frame
filenames, so frame numbers must be zero-padded.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

from .errors import PairingError, SamplingError, StructuralError

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp")
MASK_EXTENSIONS = (".png",)
SPLITS = ("train", "test")

# ImageNet statistics; the original work does not state its normalization.
DEFAULT_MEAN = (0.485, 0.456, 0.406)
DEFAULT_STD = (0.229, 0.224, 0.225)

MASK_THRESHOLD = 128

# Published ViSha statistics.
VISHA_VIDEOS = {"train": 50, "test": 70}
VISHA_TOTAL_FRAMES = 11685
VISHA_MIN_LENGTH = 11
VISHA_MAX_LENGTH = 103


@dataclass(frozen=True)
class FrameRecord:
    video_id: str
    frame_index: int
    image_path: Path
    mask_path: Path

    @property
    def stem(self) -> str:
        return self.image_path.stem


@dataclass(frozen=True)
class VideoSequence:
    video_id: str
    frames: tuple[FrameRecord, ...]

    def __post_init__(self):
        if len(self.frames) < 2:
            raise StructuralError(
                f"video {self.video_id!r} has {len(self.frames)} frame(s); at least 2 are required"
            )
        indices = [f.frame_index for f in self.frames]
        if indices != sorted(set(indices)):
            raise StructuralError(f"video {self.video_id!r}: frame indices must be unique and ascending")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class DatasetIndex:
    root: Path
    split: str
    videos: tuple[VideoSequence, ...]

    def __post_init__(self):
        ids = [v.video_id for v in self.videos]
        if len(ids) != len(set(ids)):
            raise StructuralError("duplicate video ids in index")

    @property
    def n_frames(self) -> int:
        return sum(len(v) for v in self.videos)

    def frames(self) -> list[FrameRecord]:
        return [f for v in self.videos for f in v.frames]

    def video(self, video_id: str) -> VideoSequence:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)


@dataclass
class TripleSample:
    """Two frames of one video plus one frame of another, with masks.

    Images are float32 arrays of shape (3, size, size), already normalized;
    masks are uint8 arrays of shape (size, size) holding 0/1.
    """

    image_a1: np.ndarray
    image_a2: np.ndarray
    image_b: np.ndarray
    mask_a1: np.ndarray
    mask_a2: np.ndarray
    mask_b: np.ndarray
    video_a: str
    video_b: str
    records: tuple[FrameRecord, FrameRecord, FrameRecord]

    @property
    def offset(self) -> int:
        return self.records[1].frame_index - self.records[0].frame_index


def _list_files(directory: Path, extensions: Sequence[str]) -> dict[str, Path]:
    files = {}
    for p in sorted(directory.iterdir()):
        if p.is_file() and p.suffix.lower() in extensions:
            files[p.stem] = p
    return files


def index_dataset(root, split: str) -> DatasetIndex:
    """Scan ``root/split`` and pair every image with its mask."""
    root = Path(root)
    if split not in SPLITS:
        raise StructuralError(f"unknown split {split!r}; expected one of {SPLITS}")
    image_root = root / split / "images"
    label_root = root / split / "labels"
    for d in (image_root, label_root):
        if not d.is_dir():
            raise StructuralError(f"missing directory: {d}")

    image_videos = sorted(p.name for p in image_root.iterdir() if p.is_dir())
    label_videos = sorted(p.name for p in label_root.iterdir() if p.is_dir())
    for vid in sorted(set(image_videos) ^ set(label_videos)):
        side = label_root if vid in image_videos else image_root
        raise PairingError(f"video {vid!r} has no counterpart directory under {side}", side / vid)

    videos = []
    for vid in image_videos:
        images = _list_files(image_root / vid, IMAGE_EXTENSIONS)
        masks = _list_files(label_root / vid, MASK_EXTENSIONS)
        for stem in sorted(images.keys() - masks.keys()):
            raise PairingError(f"image without mask: {images[stem]}", images[stem])
        for stem in sorted(masks.keys() - images.keys()):
            raise PairingError(f"mask without image: {masks[stem]}", masks[stem])
        frames = tuple(
            FrameRecord(vid, i, images[stem], masks[stem]) for i, stem in enumerate(sorted(images))
        )
        videos.append(VideoSequence(vid, frames))
    if not videos:
        raise StructuralError(f"no videos found under {image_root}")
    return DatasetIndex(root, split, tuple(videos))


def binarize_mask(mask: np.ndarray) -> np.ndarray:
    return (np.asarray(mask) >= MASK_THRESHOLD).astype(np.uint8)


def read_mask(path) -> np.ndarray:
    """Read a mask file at native resolution as a {0,1} uint8 array."""
    try:
        with Image.open(path) as im:
            return binarize_mask(np.asarray(im.convert("L")))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read mask {path}: {exc}") from exc


def normalize_image(rgb: np.ndarray, mean=DEFAULT_MEAN, std=DEFAULT_STD) -> np.ndarray:
    """uint8 HxWx3 -> float32 3xHxW, scaled to [0,1] then standardized."""
    x = rgb.astype(np.float32) / 255.0
    x = (x - np.asarray(mean, np.float32)) / np.asarray(std, np.float32)
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def load_frame(record: FrameRecord, size: int, mean=DEFAULT_MEAN, std=DEFAULT_STD):
    """Load one frame as ``(image, mask)`` resized to ``size x size``.

    The image is resized bilinearly and normalized; the mask is resized with
    nearest-neighbour sampling and thresholded at 128/255.
    """
    if size <= 0:
        raise ValueError("size must be positive")
    try:
        with Image.open(record.image_path) as im:
            rgb = im.convert("RGB").resize((size, size), Image.BILINEAR)
        with Image.open(record.mask_path) as im:
            gray = im.convert("L").resize((size, size), Image.NEAREST)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read frame {record.image_path}: {exc}") from exc
    return normalize_image(np.asarray(rgb), mean, std), binarize_mask(np.asarray(gray))


FrameLoader = Callable[[FrameRecord], "tuple[np.ndarray, np.ndarray]"]


def sample_triple(
    index: DatasetIndex,
    rng: np.random.Generator,
    max_offset: int = 5,
    size: int = 416,
    loader: FrameLoader | None = None,
) -> TripleSample:
    """Draw (a1, a2) from one video and b from a different video.

    The offset between a1 and a2 is uniform on ``[1, min(max_offset, len-1)]``.
    ``loader`` maps a record to ``(image, mask)``; defaults to
    :func:`load_frame` at ``size``.
    """
    videos = index.videos
    if len(videos) < 2:
        raise SamplingError(f"need at least 2 videos to sample a triple, index has {len(videos)}")
    if max_offset < 1:
        raise SamplingError("max_offset must be >= 1")
    if loader is None:
        loader = lambda rec: load_frame(rec, size)  # noqa: E731

    ia = int(rng.integers(len(videos)))
    va = videos[ia]
    d = int(rng.integers(1, min(max_offset, len(va) - 1) + 1))
    t1 = int(rng.integers(len(va) - d))
    ib = int(rng.integers(len(videos) - 1))
    if ib >= ia:
        ib += 1
    vb = videos[ib]
    tb = int(rng.integers(len(vb)))

    recs = (va.frames[t1], va.frames[t1 + d], vb.frames[tb])
    (x1, g1), (x2, g2), (xb, gb) = (loader(r) for r in recs)
    return TripleSample(x1, x2, xb, g1, g2, gb, va.video_id, vb.video_id, recs)


@dataclass
class ValidationReport:
    root: str
    split: str
    n_videos: int
    n_frames: int
    min_length: int
    max_length: int
    nonbinary_masks: list[str] = field(default_factory=list)
    size_mismatches: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.nonbinary_masks or self.size_mismatches)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = [
            f"dataset   {self.root} [{self.split}]",
            f"videos    {self.n_videos}",
            f"frames    {self.n_frames}",
            f"length    min {self.min_length}  max {self.max_length}",
            f"nonbinary {len(self.nonbinary_masks)}",
            f"size mism {len(self.size_mismatches)}",
        ]
        lines += [f"  nonbinary: {p}" for p in self.nonbinary_masks]
        lines += [f"  size mismatch: {p}" for p in self.size_mismatches]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def validate_dataset(index: DatasetIndex, companion: DatasetIndex | None = None) -> ValidationReport:
    """Report counts and integrity problems; never raises for bad data.

    If the split looks like full ViSha (50 train / 70 test videos), deviations
    from the published statistics are reported as warnings. Passing the other
    split as ``companion`` also checks the combined frame total.
    """
    lengths = [len(v) for v in index.videos]
    report = ValidationReport(
        root=str(index.root),
        split=index.split,
        n_videos=len(index.videos),
        n_frames=index.n_frames,
        min_length=min(lengths),
        max_length=max(lengths),
    )
    for rec in index.frames():
        with Image.open(rec.mask_path) as im:
            mask = np.asarray(im.convert("L"))
            mask_size = im.size
        with Image.open(rec.image_path) as im:
            image_size = im.size
        if not np.isin(mask, (0, 255)).all():
            bad = sorted(set(np.unique(mask).tolist()) - {0, 255})
            shown = ", ".join(map(str, bad[:5])) + (", ..." if len(bad) > 5 else "")
            report.nonbinary_masks.append(str(rec.mask_path))
            report.warnings.append(f"mask is not binary (values {shown}): {rec.mask_path}")
        if mask_size != image_size:
            report.size_mismatches.append(str(rec.mask_path))

    if VISHA_VIDEOS.get(index.split) == report.n_videos:
        if report.min_length < VISHA_MIN_LENGTH:
            report.warnings.append(
                f"shortest video has {report.min_length} frames; ViSha's shortest has {VISHA_MIN_LENGTH}"
            )
        if report.max_length > VISHA_MAX_LENGTH:
            report.warnings.append(
                f"longest video has {report.max_length} frames; ViSha's longest has {VISHA_MAX_LENGTH}"
            )
        if companion is not None and VISHA_VIDEOS.get(companion.split) == len(companion.videos):
            total = index.n_frames + companion.n_frames
            if total != VISHA_TOTAL_FRAMES:
                report.warnings.append(
                    f"train+test hold {total} frames; ViSha has {VISHA_TOTAL_FRAMES}"
                )
    return report


# ---------------------------------------------------------------------------
# synthetic fixture
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    n_videos: int = 2
    frames_per_video: int = 8
    size: int = 64
    seed: int = 0
    split: str = "train"


def pixel_centers(size: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return xs + 0.5, ys + 0.5


def rasterize_ellipse(size: int, cx, cy, a, b, theta) -> np.ndarray:
    """Boolean mask of pixels whose centres fall inside a rotated ellipse."""
    xs, ys = pixel_centers(size)
    dx, dy = xs - cx, ys - cy
    c, s = math.cos(theta), math.sin(theta)
    u = (c * dx + s * dy) / a
    v = (-s * dx + c * dy) / b
    return u * u + v * v <= 1.0


def rasterize_polygon(size: int, vertices) -> np.ndarray:
    """Boolean mask of pixels whose centres fall inside a polygon (even-odd rule)."""
    xs, ys = pixel_centers(size)
    inside = np.zeros((size, size), dtype=bool)
    pts = np.asarray(vertices, dtype=np.float64)
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        if y0 == y1:
            continue
        crosses = (y0 > ys) != (y1 > ys)
        x_at = x0 + (ys - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (xs < x_at)
    return inside


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth coloured background with stripes and noise, uint8 HxWx3 in a bright range."""
    xs, ys = pixel_centers(size)
    base = rng.uniform(150, 220, size=3)
    img = np.empty((size, size, 3))
    for ch in range(3):
        fx, fy = rng.uniform(0.05, 0.35, size=2)
        phase = rng.uniform(0, 2 * math.pi)
        img[..., ch] = base[ch] + 25 * np.sin(fx * xs + fy * ys + phase)
    img += rng.normal(0, 8, size=(size, size, 1))
    return img


def _shadow_shape(rng: np.random.Generator, size: int, n_frames: int):
    """Random shape and linear motion of one shadow; total travel stays under 0.3*size."""
    kind = "ellipse" if rng.random() < 0.5 else "polygon"
    start = rng.uniform(0.3 * size, 0.7 * size, size=2)
    velocity = rng.uniform(-0.3 * size, 0.3 * size, size=2) / max(n_frames - 1, 1)
    a, b = rng.uniform(0.12 * size, 0.25 * size, size=2)
    theta0 = rng.uniform(0, math.pi)
    n_vert = int(rng.integers(4, 7))
    angles = np.sort(rng.uniform(0, 2 * math.pi, size=n_vert))
    radii = rng.uniform(0.12 * size, 0.25 * size, size=n_vert)
    return kind, start, velocity, (a, b, theta0), (angles, radii)


def render_shadow(size: int, shape, t: int) -> tuple[np.ndarray, dict]:
    kind, start, velocity, (a, b, theta0), (angles, radii) = shape
    cx, cy = start + velocity * t
    if kind == "ellipse":
        params = {"kind": kind, "cx": cx, "cy": cy, "a": a, "b": b, "theta": theta0 + 0.05 * t}
        return rasterize_ellipse(size, cx, cy, a, b, theta0 + 0.05 * t), params
    ang = angles + 0.05 * t
    verts = np.stack([cx + radii * np.cos(ang), cy + radii * np.sin(ang)], axis=1)
    return rasterize_polygon(size, verts), {"kind": kind, "vertices": verts.tolist()}


def render_video(rng: np.random.Generator, n_frames: int, size: int):
    """Yield ``(rgb_uint8, mask_bool, shapes)`` per frame of one synthetic video.

    Shadows darken the background multiplicatively so its texture survives;
    distractors are flat, saturated dark blobs that are *not* shadow.
    """
    background = _texture(rng, size)
    n_shadows = int(rng.integers(1, 3))
    shadows = [_shadow_shape(rng, size, n_frames) for _ in range(n_shadows)]
    darkness = rng.uniform(0.35, 0.5, size=n_shadows)
    n_distract = int(rng.integers(1, 3))
    distractors = []
    for _ in range(n_distract):
        centre = rng.uniform(0.15 * size, 0.85 * size, size=2)
        vel = rng.uniform(-0.3 * size, 0.3 * size, size=2) / max(n_frames - 1, 1)
        radius = rng.uniform(0.06 * size, 0.12 * size)
        colour = np.zeros(3)
        colour[int(rng.integers(3))] = rng.uniform(60, 90)
        distractors.append((centre, vel, radius, colour))

    for t in range(n_frames):
        frame = background.copy()
        mask = np.zeros((size, size), dtype=bool)
        shapes = []
        for shape, dark in zip(shadows, darkness):
            region, params = render_shadow(size, shape, t)
            frame[region] *= dark
            mask |= region
            shapes.append(params)
        for centre, vel, radius, colour in distractors:
            cx, cy = centre + vel * t
            blob = rasterize_ellipse(size, cx, cy, radius, radius, 0.0)
            frame[blob] = colour
            mask &= ~blob
        yield np.clip(np.rint(frame), 0, 255).astype(np.uint8), mask, shapes


def generate_synthetic(root, config: SynthConfig | None = None, **overrides) -> DatasetIndex:
    """Write a deterministic synthetic dataset under ``root`` in ViSha layout.

    Returns the index of the written split.
    """
    cfg = config or SynthConfig()
    if overrides:
        cfg = SynthConfig(**{**asdict(cfg), **overrides})
    if cfg.n_videos < 2 or cfg.frames_per_video < 2:
        raise ValueError("need n_videos >= 2 and frames_per_video >= 2")
    root = Path(root)
    rng = np.random.default_rng(cfg.seed)
    for v in range(cfg.n_videos):
        vid = f"video{v:03d}"
        img_dir = root / cfg.split / "images" / vid
        lbl_dir = root / cfg.split / "labels" / vid
        img_dir.mkdir(parents=True, exist_ok=True)
        lbl_dir.mkdir(parents=True, exist_ok=True)
        for t, (rgb, mask, _) in enumerate(render_video(rng, cfg.frames_per_video, cfg.size)):
            Image.fromarray(rgb).save(img_dir / f"{t:05d}.jpg", quality=95)
            Image.fromarray(mask.astype(np.uint8) * 255).save(lbl_dir / f"{t:05d}.png")
    return index_dataset(root, cfg.split)

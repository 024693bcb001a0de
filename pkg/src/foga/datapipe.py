"""Frame loading, sliding windows and a synthetic moving-shape video generator.

On-disk layout (same as the public benchmarks after frame extraction)::

    <root>/training/<video_id>/*.png|jpg
    <root>/testing/<video_id>/*.png|jpg
    <root>/testing/labels/<video_id>.txt      # one 0/1 per frame, optional

Resizing is bilinear with ``align_corners=False`` (half-pixel centres) and no
antialiasing.  PSNR scores are sensitive to this, so it is fixed here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .config import ConfigError, DataError, SyntheticSpec

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class Video:
    video_id: str
    frames: list[Path] | np.ndarray   # paths, or uint8 array (L, H, W[, C])
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class DatasetIndex:
    videos: list[Video]
    split: str = "train"
    anomaly_intervals: dict[str, list[tuple[int, int, str]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.split not in ("train", "test"):
            raise DataError(f"split must be 'train' or 'test', got {self.split!r}")
        for v in self.videos:
            if self.split == "train" and v.labels is not None:
                raise DataError(f"train video {v.video_id} carries labels")
            if v.labels is not None and len(v.labels) != len(v):
                raise DataError(
                    f"video {v.video_id}: {len(v.labels)} labels for {len(v)} frames"
                )

    def __iter__(self) -> Iterator[Video]:
        return iter(self.videos)

    def __len__(self) -> int:
        return len(self.videos)


@dataclass
class FrameWindow:
    inputs: torch.Tensor             # (t, C, H, W)
    target_immediate: torch.Tensor   # (C, H, W), frame base_index + 1
    target_forward: torch.Tensor     # (C, H, W), frame base_index + sigma
    video_id: str
    base_index: int                  # index of the last input frame


# ── preprocessing ───────────────────────────────────────────


def decode_image(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im)
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode frame {path}: {exc}") from exc
    if arr.size == 0:
        raise DataError(f"empty frame {path}")
    return arr


def preprocess_frame(raw, image_size: int = 224, c_in: int = 3) -> torch.Tensor:
    """Decode (if given a path), resize and map pixel values to [-1, 1].

    Integer images are scaled by their dtype maximum, float images are taken
    to be in [0, 1].  Grayscale is replicated to ``c_in`` channels.
    """
    if isinstance(raw, (str, Path)):
        arr = decode_image(raw)
    else:
        arr = np.asarray(raw)
    if arr.size == 0:
        raise DataError("empty frame")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DataError(f"frame must be HxW or HxWxC, got shape {arr.shape}")

    if np.issubdtype(arr.dtype, np.integer):
        max_value = float(np.iinfo(arr.dtype).max)
    else:
        max_value = 1.0
    x = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)).permute(2, 0, 1)

    channels = x.shape[0]
    if channels == 4:
        x = x[:3]
        channels = 3
    if channels != c_in:
        if channels == 1:
            x = x.expand(c_in, -1, -1)
        elif c_in == 1:
            x = x.mean(0, keepdim=True)
        else:
            raise DataError(f"cannot map {channels} channels to c_in={c_in}")

    if x.shape[1:] != (image_size, image_size):
        x = F.interpolate(
            x[None], size=(image_size, image_size), mode="bilinear",
            align_corners=False, antialias=False,
        )[0]
    # bilinear weights are convex, so the clamp only removes float rounding
    return (x * (2.0 / max_value) - 1.0).clamp_(-1.0, 1.0).contiguous()


def load_video(video: Video, image_size: int, c_in: int) -> torch.Tensor:
    """All frames of a video, preprocessed, as a (L, C, H, W) float tensor."""
    if isinstance(video.frames, np.ndarray):
        return torch.stack([preprocess_frame(f, image_size, c_in) for f in video.frames])
    return torch.stack([_cached_frame(str(p), image_size, c_in) for p in video.frames])


@lru_cache(maxsize=4096)
def _cached_frame(path: str, image_size: int, c_in: int) -> torch.Tensor:
    return preprocess_frame(path, image_size, c_in)


# ── windows ─────────────────────────────────────────────────


def window_bases(length: int, t: int, sigma: int, stride: int = 1) -> range:
    """Legal last-input indices (0-based): b >= t-1 and b + sigma <= length-1."""
    if t < 1 or sigma < 1:
        raise ConfigError(f"t and sigma must be >= 1, got t={t}, sigma={sigma}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    return range(t - 1, length - sigma, stride)


def make_windows(
    frames: torch.Tensor, t: int, sigma: int, stride: int = 1, video_id: str = ""
) -> list[FrameWindow]:
    """Cut a preprocessed (L, C, H, W) video into prediction windows.

    Window count is ``(L - t - sigma) // stride + 1`` when ``L >= t + sigma``.
    """
    return [
        FrameWindow(
            inputs=frames[b - t + 1 : b + 1],
            target_immediate=frames[b + 1],
            target_forward=frames[b + sigma],
            video_id=video_id,
            base_index=b,
        )
        for b in window_bases(len(frames), t, sigma, stride)
    ]


class WindowDataset(torch.utils.data.Dataset):
    """Flat index over every window of every video, in (video, base) order."""

    def __init__(self, index: DatasetIndex, t: int, sigma: int, image_size: int,
                 c_in: int = 3, stride: int = 1):
        self.t, self.sigma = t, sigma
        self.clips: list[torch.Tensor] = []
        self.items: list[tuple[int, int]] = []
        for vi, video in enumerate(index):
            frames = load_video(video, image_size, c_in)
            self.clips.append(frames)
            self.items.extend((vi, b) for b in window_bases(len(frames), t, sigma, stride))

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i: int):
        vi, b = self.items[i]
        clip = self.clips[vi]
        x = clip[b - self.t + 1 : b + 1].flatten(0, 1)
        return x, clip[b + 1], clip[b + self.sigma]


# ── on-disk datasets ────────────────────────────────────────


def _frame_paths(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_labels(path: Path) -> np.ndarray:
    try:
        lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
        labels = np.array([int(ln) for ln in lines], dtype=np.int64)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read labels {path}: {exc}") from exc
    if not np.isin(labels, (0, 1)).all():
        raise DataError(f"labels in {path} must be 0/1")
    return labels


def load_split(root: str | Path, split: str, subdir: str | None = None,
               labels_dir: str = "labels") -> DatasetIndex:
    """Index one split of a directory dataset (one folder of frames per video)."""
    root = Path(root)
    folder = root / (subdir or ("training" if split == "train" else "testing"))
    if not folder.is_dir():
        raise DataError(f"dataset folder not found: {folder}")
    videos = []
    for vdir in sorted(p for p in folder.iterdir() if p.is_dir() and p.name != labels_dir):
        paths = _frame_paths(vdir)
        if not paths:
            log.warning("video %s has no frames, skipped", vdir)
            continue
        labels = None
        if split == "test":
            lab = folder / labels_dir / f"{vdir.name}.txt"
            if lab.exists():
                labels = read_labels(lab)
        videos.append(Video(vdir.name, paths, labels))
    if not videos:
        raise DataError(f"no videos under {folder}")
    return DatasetIndex(videos, split)


def write_split(index: DatasetIndex, root: str | Path, labels_dir: str = "labels") -> Path:
    """Write in-memory videos as PNG frame folders (plus label files for test)."""
    folder = Path(root) / ("training" if index.split == "train" else "testing")
    folder.mkdir(parents=True, exist_ok=True)
    for video in index:
        vdir = folder / video.video_id
        vdir.mkdir(exist_ok=True)
        for i, frame in enumerate(video.frames):
            Image.fromarray(np.asarray(frame)).save(vdir / f"{i:05d}.png", optimize=False)
        if video.labels is not None:
            (folder / labels_dir).mkdir(exist_ok=True)
            (folder / labels_dir / f"{video.video_id}.txt").write_text(
                "".join(f"{int(v)}\n" for v in video.labels)
            )
    return folder


# ── synthetic moving shapes ─────────────────────────────────


_PALETTE = np.array(
    [[230, 80, 60], [60, 200, 90], [70, 110, 240], [240, 210, 60], [200, 80, 220], [60, 220, 220]],
    dtype=np.uint8,
)


@dataclass
class _Sprite:
    pos: np.ndarray      # centre (y, x)
    vel: np.ndarray
    size: int
    kind: str            # square | disc
    color: np.ndarray


def _new_sprite(rng: np.random.Generator, spec: SyntheticSpec) -> _Sprite:
    size = int(rng.integers(spec.shape_size[0], spec.shape_size[1] + 1))
    margin = size / 2 + 1
    pos = rng.uniform(margin, spec.size - margin, size=2)
    speed = rng.uniform(*spec.speed)
    angle = rng.uniform(0, 2 * np.pi)
    vel = speed * np.array([np.sin(angle), np.cos(angle)])
    kind = "square" if rng.random() < 0.5 else "disc"
    return _Sprite(pos, vel, size, kind, _PALETTE[rng.integers(len(_PALETTE))])


def _render(sprites: Sequence[_Sprite], size: int, background: np.ndarray) -> np.ndarray:
    img = np.broadcast_to(background, (size, size, 3)).copy()
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    for s in sprites:
        r = s.size / 2
        if s.kind == "square":
            mask = (np.abs(yy - s.pos[0]) <= r) & (np.abs(xx - s.pos[1]) <= r)
        else:
            mask = (yy - s.pos[0]) ** 2 + (xx - s.pos[1]) ** 2 <= r * r
        img[mask] = s.color
    return img


def _advance(s: _Sprite, size: int, factor: float = 1.0) -> None:
    s.pos = s.pos + factor * s.vel
    r = s.size / 2
    for k in range(2):
        if s.pos[k] < r:
            s.pos[k] = 2 * r - s.pos[k]
            s.vel[k] = abs(s.vel[k])
        elif s.pos[k] > size - r:
            s.pos[k] = 2 * (size - r) - s.pos[k]
            s.vel[k] = -abs(s.vel[k])


def _synth_video(rng: np.random.Generator, spec: SyntheticSpec,
                 intervals: list[tuple[int, int, str]]) -> np.ndarray:
    n = int(rng.integers(spec.shapes[0], spec.shapes[1] + 1))
    sprites = [_new_sprite(rng, spec) for _ in range(n)]
    background = rng.integers(20, 60, size=3).astype(np.uint8)
    frames = np.empty((spec.frames_per_video, spec.size, spec.size, 3), dtype=np.uint8)
    for i in range(spec.frames_per_video):
        frames[i] = _render(sprites, spec.size, background)
        active = [kind for start, stop, kind in intervals if start <= i + 1 < stop]
        for s in sprites:
            if "teleport" in active:
                margin = s.size / 2 + 1
                s.pos = rng.uniform(margin, spec.size - margin, size=2)
            elif "speed_burst" in active:
                _advance(s, spec.size, spec.burst_factor)
            elif "direction_flip" in active:
                if (i + 1) % 2 == 0:
                    s.vel = -s.vel
                _advance(s, spec.size)
            else:
                _advance(s, spec.size)
    if spec.grayscale:
        frames = frames.mean(axis=3).round().astype(np.uint8)
    return frames


def _place_intervals(rng: np.random.Generator, spec: SyntheticSpec) -> list[tuple[int, int, str]]:
    """Non-overlapping [start, stop) intervals, clear of the first 10 frames."""
    L = spec.frames_per_video
    out: list[tuple[int, int, str]] = []
    for _ in range(spec.anomalies_per_video):
        for _attempt in range(100):
            length = int(rng.integers(spec.anomaly_length[0], spec.anomaly_length[1] + 1))
            lo = min(10, L - length)
            start = int(rng.integers(lo, L - length + 1))
            stop = start + length
            if all(stop <= a or start >= b for a, b, _ in out):
                kind = str(rng.choice(list(spec.anomaly_types)))
                out.append((start, stop, kind))
                break
        else:
            raise ConfigError("cannot place non-overlapping anomaly intervals; shorten them")
    return sorted(out)


def synth_generate(spec: SyntheticSpec) -> tuple[DatasetIndex, DatasetIndex]:
    """Train videos with normal motion only; test videos with labelled anomaly intervals.

    An interval ``[start, stop)`` marks frames whose content was produced by
    abnormal motion: frame ``i`` is labelled 1 iff ``start <= i < stop``.
    """
    if spec.anomaly_length[1] > spec.frames_per_video:
        raise ConfigError("anomaly interval longer than the video")
    rng = np.random.default_rng(spec.seed)
    train = [
        Video(f"train_{i:02d}", _synth_video(rng, spec, []))
        for i in range(spec.num_train)
    ]
    test, record = [], {}
    for i in range(spec.num_test):
        vid = f"test_{i:02d}"
        intervals = _place_intervals(rng, spec) if spec.anomalies_per_video > 0 else []
        frames = _synth_video(rng, spec, intervals)
        labels = np.zeros(spec.frames_per_video, dtype=np.int64)
        for start, stop, _ in intervals:
            labels[start:stop] = 1
        record[vid] = intervals
        test.append(Video(vid, frames, labels))
    return DatasetIndex(train, "train"), DatasetIndex(test, "test", anomaly_intervals=record)

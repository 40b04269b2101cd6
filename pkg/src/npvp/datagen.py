"""Synthetic bouncing-shape videos, frame-folder datasets, and context/target splits.

Clips are stored on disk as one directory of 8-bit PNG frames per clip plus a
JSON manifest. Shapes move with constant velocity between wall bounces; each
bounce perturbs the reflection angle by a uniform random jitter, which is the
only source of stochasticity in a trajectory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
FRAME_PATTERN = "frame_{:05d}.png"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

TASKS = ("vfp", "vfi", "vpe", "vrc")

SHAPE_KINDS = ("disc", "square", "diamond")
BOUNCE_JITTER = math.radians(15.0)  # reflection-angle perturbation, uniform in +/- this


class DataError(ValueError):
    """Dataset generation or loading failure."""


class SplitError(ValueError):
    """A context/target split that cannot satisfy its task constraints."""


@dataclass
class VideoClip:
    """A frame sequence with per-frame raw temporal coordinates.

    ``frames`` has shape (L, h, w, c) with values in [0, 1]; ``times`` is
    strictly increasing and defaults to the frame indices.
    """

    frames: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4:
            raise DataError(f"frames must be (L, h, w, c), got shape {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise DataError(f"a clip needs at least 2 frames, got {self.frames.shape[0]}")
        if self.times is None:
            self.times = np.arange(self.frames.shape[0], dtype=np.float64)
        else:
            self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.shape != (self.frames.shape[0],):
            raise DataError("times must have one entry per frame")
        if not np.all(np.diff(self.times) > 0):
            raise DataError("times must be strictly increasing")
        lo, hi = float(self.frames.min()), float(self.frames.max())
        if lo < 0.0 or hi > 1.0:
            raise DataError(f"pixel values must lie in [0, 1], got range [{lo}, {hi}]")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return tuple(self.frames.shape[1:])


@dataclass
class TaskSplit:
    """Disjoint context/target index sets covering a whole clip."""

    context_idx: list[int]
    target_idx: list[int]
    task: str

    def __post_init__(self):
        self.context_idx = sorted(int(i) for i in self.context_idx)
        self.target_idx = sorted(int(i) for i in self.target_idx)
        self.task = self.task.lower()
        if self.task not in TASKS:
            raise SplitError(f"unknown task {self.task!r}")
        if not self.context_idx or not self.target_idx:
            raise SplitError("context and target sets must both be nonempty")
        ctx, tgt = set(self.context_idx), set(self.target_idx)
        if ctx & tgt:
            raise SplitError(f"context and target overlap at {sorted(ctx & tgt)}")
        n = len(ctx) + len(tgt)
        if ctx | tgt != set(range(n)):
            raise SplitError("context and target must partition 0..L-1 with no gaps")
        if self.task == "vfp" and max(ctx) >= min(tgt):
            raise SplitError("vfp requires every context index before every target index")
        if self.task == "vpe" and min(ctx) <= max(tgt):
            raise SplitError("vpe requires every context index after every target index")
        if self.task == "vfi" and not (min(ctx) < min(tgt) and max(ctx) > max(tgt)):
            raise SplitError("vfi requires context frames on both sides of the targets")

    @property
    def num_frames(self) -> int:
        return len(self.context_idx) + len(self.target_idx)


@dataclass
class SplitParams:
    """Split-policy parameters; which fields apply depends on the task.

    ``past_frames``/``future_frames`` count the leading/trailing frames of the
    clip; ``mid_frames`` counts the interpolation targets for vfi. vrc draws a
    context size uniformly from ``lc_range``.
    """

    past_frames: int | None = None
    future_frames: int | None = None
    mid_frames: int | None = None
    lc_range: tuple[int, int] = (4, 16)


@dataclass
class DatasetManifest:
    """On-disk dataset description plus (optionally) the decoded clips."""

    root: Path
    num_clips: int
    frame_shape: tuple[int, int, int]
    clip_dirs: list[str]
    clip_lengths: list[int]
    fps: float | None = None
    clips: list[VideoClip] = field(default_factory=list, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "num_clips": self.num_clips,
            "frame_shape": list(self.frame_shape),
            "fps": self.fps,
            "clips": [
                {"dir": d, "length": n} for d, n in zip(self.clip_dirs, self.clip_lengths)
            ],
        }

    def write(self) -> Path:
        path = Path(self.root) / MANIFEST_NAME
        path.write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")
        return path


def _rotate(vec: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * vec[0] - s * vec[1], s * vec[0] + c * vec[1]])


def simulate_shapes(
    rng: np.random.Generator, clip_len: int, size: int, num_shapes: int
) -> tuple[list[dict], np.ndarray, np.ndarray]:
    """Simulate bouncing-shape tracks.

    Returns (shape descriptors, positions of shape centers with shape
    (clip_len, num_shapes, 2) in (x, y) pixel units, bounce flags of shape
    (clip_len, num_shapes)). Between bounces every track is exactly linear.
    """
    r_lo, r_hi = 0.11 * size, 0.17 * size
    speed_lo, speed_hi = 0.03 * size, 0.06 * size
    shapes = []
    for _ in range(num_shapes):
        radius = rng.uniform(r_lo, r_hi)
        lo = radius + 1.0
        hi = size - 2.0 - radius
        angle = rng.uniform(0.0, 2.0 * math.pi)
        speed = rng.uniform(speed_lo, speed_hi)
        shapes.append(
            {
                "kind": SHAPE_KINDS[rng.integers(len(SHAPE_KINDS))],
                "radius": radius,
                "brightness": rng.uniform(0.7, 1.0),
                "pos": np.array([rng.uniform(lo, hi), rng.uniform(lo, hi)]),
                "vel": speed * np.array([math.cos(angle), math.sin(angle)]),
                "lo": lo,
                "hi": hi,
            }
        )

    positions = np.zeros((clip_len, num_shapes, 2))
    bounced = np.zeros((clip_len, num_shapes), dtype=bool)
    for t in range(clip_len):
        for s, shape in enumerate(shapes):
            positions[t, s] = shape["pos"]
        for s, shape in enumerate(shapes):
            pos = shape["pos"] + shape["vel"]
            hit = False
            for axis in range(2):
                if pos[axis] < shape["lo"]:
                    pos[axis] = 2.0 * shape["lo"] - pos[axis]
                    shape["vel"][axis] = -shape["vel"][axis]
                    hit = True
                elif pos[axis] > shape["hi"]:
                    pos[axis] = 2.0 * shape["hi"] - pos[axis]
                    shape["vel"][axis] = -shape["vel"][axis]
                    hit = True
            if hit:
                shape["vel"] = _rotate(shape["vel"], rng.uniform(-BOUNCE_JITTER, BOUNCE_JITTER))
                np.clip(pos, shape["lo"], shape["hi"], out=pos)
                if t + 1 < clip_len:
                    bounced[t + 1, s] = True
            shape["pos"] = pos
    return shapes, positions, bounced


def render_frame(shapes: list[dict], centers: np.ndarray, size: int) -> np.ndarray:
    """Rasterize one frame; shapes are composed with a pixelwise maximum."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    frame = np.zeros((size, size), dtype=np.float64)
    for shape, (cx, cy) in zip(shapes, centers):
        dx, dy = xs - cx, ys - cy
        r = shape["radius"]
        if shape["kind"] == "disc":
            dist = np.hypot(dx, dy)
        elif shape["kind"] == "square":
            dist = np.maximum(np.abs(dx), np.abs(dy))
        else:  # diamond
            dist = (np.abs(dx) + np.abs(dy)) / math.sqrt(2.0)
        alpha = np.clip(r + 0.5 - dist, 0.0, 1.0)
        frame = np.maximum(frame, shape["brightness"] * alpha)
    return frame.astype(np.float32)


def generate_clip(
    rng: np.random.Generator, clip_len: int, size: int, num_shapes: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One synthetic clip: (frames (L, size, size, 1), centers, bounce flags)."""
    shapes, positions, bounced = simulate_shapes(rng, clip_len, size, num_shapes)
    frames = np.stack(
        [render_frame(shapes, positions[t], size) for t in range(clip_len)]
    )[..., None]
    return frames, positions, bounced


def clip_rng(seed: int, clip_index: int) -> np.random.Generator:
    """Per-clip stream so clips are independent and individually reproducible."""
    return np.random.default_rng([seed, clip_index])


def save_frame_png(path: Path, frame: np.ndarray) -> None:
    arr = np.round(np.asarray(frame, dtype=np.float64) * 255.0).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        img = Image.fromarray(arr[:, :, 0], mode="L")
    elif arr.ndim == 3 and arr.shape[2] == 3:
        img = Image.fromarray(arr, mode="RGB")
    else:
        raise DataError(f"cannot encode frame of shape {frame.shape}")
    img.save(path)


def load_frame_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB" if img.mode in ("RGBA", "P", "CMYK") else "L")
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except OSError as exc:
        raise DataError(f"unreadable frame file {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def gen_moving_shapes(
    out_dir: str | Path,
    num_clips: int,
    clip_len: int,
    size: int,
    num_shapes: int,
    seed: int,
    fps: float = 10.0,
) -> DatasetManifest:
    """Write a synthetic bouncing-shape dataset under ``out_dir``.

    Deterministic for a fixed seed: the same call twice produces bit-identical
    files. Returns the manifest with the generated clips attached.
    """
    if clip_len < 2:
        raise DataError(f"clip_len must be >= 2, got {clip_len}")
    if size < 16:
        raise DataError(f"size must be >= 16, got {size}")
    if num_shapes < 1:
        raise DataError(f"num_shapes must be >= 1, got {num_shapes}")
    if num_clips < 1:
        raise DataError(f"num_clips must be >= 1, got {num_clips}")

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc

    clip_dirs, clips = [], []
    for i in range(num_clips):
        frames, _, _ = generate_clip(clip_rng(seed, i), clip_len, size, num_shapes)
        clip_dir = f"clip_{i:04d}"
        clip_path = out_dir / clip_dir
        clip_path.mkdir(exist_ok=True)
        for t in range(clip_len):
            save_frame_png(clip_path / FRAME_PATTERN.format(t), frames[t])
        clip_dirs.append(clip_dir)
        clips.append(VideoClip(frames))

    manifest = DatasetManifest(
        root=out_dir,
        num_clips=num_clips,
        frame_shape=(size, size, 1),
        clip_dirs=clip_dirs,
        clip_lengths=[clip_len] * num_clips,
        fps=fps,
        clips=clips,
    )
    manifest.write()
    return manifest


def _load_clip_dir(clip_path: Path) -> VideoClip:
    files = sorted(
        p for p in clip_path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not files:
        raise DataError(f"clip directory {clip_path} contains no image files")
    frames = []
    shape = None
    for f in files:
        arr = load_frame_png(f)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise DataError(
                f"mixed resolutions in clip {clip_path.name}: {f.name} has shape "
                f"{arr.shape}, expected {shape}"
            )
        frames.append(arr)
    if len(frames) < 2:
        raise DataError(f"clip {clip_path.name} has fewer than 2 frames")
    return VideoClip(np.stack(frames))


def load_frame_folder(path: str | Path) -> DatasetManifest:
    """Load a dataset directory of per-clip subdirectories of image frames.

    Uses ``manifest.json`` when present; otherwise scans subdirectories in
    lexicographic order. All clips are decoded eagerly to [0, 1] arrays and
    must share one frame shape.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"dataset path {root} is not a directory")

    fps = None
    manifest_path = root / MANIFEST_NAME
    if manifest_path.exists():
        try:
            meta = json.loads(manifest_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot parse {manifest_path}: {exc}") from exc
        if meta.get("version") != MANIFEST_VERSION:
            raise DataError(
                f"unsupported manifest version {meta.get('version')!r} in {manifest_path}"
            )
        clip_dirs = [c["dir"] for c in meta.get("clips", [])]
        fps = meta.get("fps")
    else:
        clip_dirs = sorted(p.name for p in root.iterdir() if p.is_dir())

    if not clip_dirs:
        raise DataError(f"no clips found under {root}")

    clips = []
    for d in clip_dirs:
        clip_path = root / d
        if not clip_path.is_dir():
            raise DataError(f"manifest references missing clip directory {clip_path}")
        clips.append(_load_clip_dir(clip_path))

    frame_shape = clips[0].frame_shape
    for d, clip in zip(clip_dirs, clips):
        if clip.frame_shape != frame_shape:
            raise DataError(
                f"clip {d} has frame shape {clip.frame_shape}, expected {frame_shape}"
            )

    return DatasetManifest(
        root=root,
        num_clips=len(clips),
        frame_shape=frame_shape,
        clip_dirs=list(clip_dirs),
        clip_lengths=[c.num_frames for c in clips],
        fps=fps,
        clips=clips,
    )


def _require(value: int | None, name: str, task: str) -> int:
    if value is None:
        raise SplitError(f"task {task!r} requires {name}")
    return int(value)


def split_indices(
    length: int,
    task: str,
    params: SplitParams | None = None,
    rng: np.random.Generator | None = None,
) -> TaskSplit:
    """Build a TaskSplit over ``range(length)`` for the given task policy."""
    task = task.lower()
    if task not in TASKS:
        raise SplitError(f"unknown task {task!r}; expected one of {TASKS}")
    if length < 2:
        raise SplitError(f"cannot split a clip of length {length}")
    params = params or SplitParams()

    if task == "vfp":
        p = _require(params.past_frames, "past_frames", task)
        f = length - p if params.future_frames is None else int(params.future_frames)
        if p < 1 or f < 1:
            raise SplitError(f"vfp needs past_frames >= 1 and future_frames >= 1, got {p}+{f}")
        if p + f != length:
            raise SplitError(
                f"vfp split {p}+{f} does not tile the {length}-frame clip; "
                "crop the clip to a window of the right length first"
            )
        return TaskSplit(list(range(p)), list(range(p, length)), task)

    if task == "vpe":
        f = _require(params.future_frames, "future_frames", task)
        p = length - f if params.past_frames is None else int(params.past_frames)
        if p < 1 or f < 1:
            raise SplitError(f"vpe needs past_frames >= 1 and future_frames >= 1, got {p}+{f}")
        if p + f != length:
            raise SplitError(f"vpe split {p}+{f} does not tile the {length}-frame clip")
        return TaskSplit(list(range(p, length)), list(range(p)), task)

    if task == "vfi":
        p = _require(params.past_frames, "past_frames", task)
        k = _require(params.mid_frames, "mid_frames", task)
        f = length - p - k if params.future_frames is None else int(params.future_frames)
        if p < 1 or f < 1:
            raise SplitError(
                "vfi needs at least one context frame on each side of the targets, "
                f"got past={p}, future={f}"
            )
        if k < 1:
            raise SplitError(f"vfi needs mid_frames >= 1, got {k}")
        if p + k + f != length:
            raise SplitError(f"vfi split {p}+{k}+{f} does not tile the {length}-frame clip")
        context = list(range(p)) + list(range(p + k, length))
        return TaskSplit(context, list(range(p, p + k)), task)

    # vrc: uniform-size random context subset
    if rng is None:
        rng = np.random.default_rng()
    lo = max(1, int(params.lc_range[0]))
    hi = min(length - 1, int(params.lc_range[1]))
    if lo > hi:
        raise SplitError(
            f"vrc context range {params.lc_range} is empty for a {length}-frame clip"
        )
    num_context = int(rng.integers(lo, hi + 1))
    context = sorted(rng.choice(length, size=num_context, replace=False).tolist())
    target = sorted(set(range(length)) - set(context))
    return TaskSplit(context, target, task)


def split_clip(
    clip: VideoClip | int,
    task: str,
    params: SplitParams | None = None,
    rng_seed: int | None = None,
    rng: np.random.Generator | None = None,
) -> TaskSplit:
    """Split a clip (or a bare length) into context and target index sets."""
    length = clip if isinstance(clip, int) else clip.num_frames
    if rng is None and rng_seed is not None:
        rng = np.random.default_rng(rng_seed)
    return split_indices(length, task, params, rng)

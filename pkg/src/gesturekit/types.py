"""Core data model shared by every module.

Arrays held by these containers are copied on construction and marked
read-only, so instances can be shared freely between threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import ValidationError

DEFAULT_CANVAS = (256, 256)
DEFAULT_FPS = 25.0

FEATURE_KINDS = ("speech", "gesture", "gesture-embedding", "teacher-embedding", "matrix")


def _frozen(array, dtype=np.float64):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _require_finite(array, what):
    if not np.all(np.isfinite(array)):
        bad = np.argwhere(~np.isfinite(array))[0]
        raise ValidationError(f"{what} contains a non-finite value at index {tuple(int(i) for i in bad)}")


@lru_cache(maxsize=None)
def _default_edges():
    text = resources.files("gesturekit").joinpath("data/skeleton_edges_v1.json").read_text()
    doc = json.loads(text)
    return tuple((int(a), int(b)) for a, b in doc["edges"])


@dataclass(frozen=True)
class KeypointLayout:
    face_count: int = 68
    body_count: int = 48
    edges: tuple = field(default_factory=_default_edges)

    def __post_init__(self):
        if self.face_count < 0 or self.body_count < 0 or self.num_points < 1:
            raise ValidationError("layout needs at least one keypoint")
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        seen = set()
        for a, b in edges:
            if not (0 <= a < self.num_points and 0 <= b < self.num_points):
                raise ValidationError(f"edge ({a}, {b}) references a keypoint outside 0..{self.num_points - 1}")
            if a == b:
                raise ValidationError(f"self-edge ({a}, {b}) in layout")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValidationError(f"duplicate edge ({a}, {b}) in layout")
            seen.add(key)

    @property
    def num_points(self):
        return self.face_count + self.body_count

    @property
    def face_flat_dim(self):
        return 2 * self.face_count

    @property
    def body_flat_dim(self):
        return 2 * self.body_count


@lru_cache(maxsize=None)
def default_layout():
    """68 face + 48 body points with the shipped skeleton (edge file v1)."""
    return KeypointLayout()


@dataclass(frozen=True, eq=False)
class GestureSequence:
    """2D keypoints over time, shape ``(T, face_count + body_count, 2)``.

    Coordinates are pixels on ``canvas`` (height, width); x grows rightward,
    y downward.
    """

    points: np.ndarray
    fps: float = DEFAULT_FPS
    layout: KeypointLayout = field(default_factory=default_layout)
    canvas: tuple = DEFAULT_CANVAS

    def __post_init__(self):
        pts = _frozen(self.points)
        n = self.layout.num_points
        if pts.ndim != 3 or pts.shape[1:] != (n, 2):
            raise ValidationError(
                f"keypoints must have shape (T, {n}, 2) for layout "
                f"{self.layout.face_count}+{self.layout.body_count}, got {pts.shape}"
            )
        if pts.shape[0] < 1:
            raise ValidationError("a gesture sequence needs at least one frame")
        _require_finite(pts, "keypoints")
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise ValidationError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "fps", float(self.fps))
        object.__setattr__(self, "canvas", (int(self.canvas[0]), int(self.canvas[1])))

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GestureSequence):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.layout == other.layout
            and self.canvas == other.canvas
            and np.array_equal(self.points, other.points)
        )

    __hash__ = None

    @property
    def face(self):
        return self.points[:, : self.layout.face_count]

    @property
    def body(self):
        return self.points[:, self.layout.face_count :]

    @property
    def duration(self):
        return len(self) / self.fps

    def replace_points(self, points):
        return GestureSequence(points, fps=self.fps, layout=self.layout, canvas=self.canvas)


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """A ``T x D`` matrix of per-frame features.

    ``normalized`` records whether keypoint-derived rows are canvas
    normalized to [0, 1]; it travels in the binary file header.
    """

    rows: np.ndarray
    kind: str = "speech"
    normalized: bool = False

    def __post_init__(self):
        rows = _frozen(self.rows)
        if rows.ndim == 1:
            rows = _frozen(rows.reshape(1, -1))
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ValidationError(f"feature rows must be a non-empty T x D matrix, got shape {rows.shape}")
        _require_finite(rows, "feature rows")
        if self.kind not in FEATURE_KINDS:
            raise ValidationError(f"unknown feature kind {self.kind!r}; expected one of {FEATURE_KINDS}")
        object.__setattr__(self, "rows", rows)

    def __len__(self):
        return self.rows.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return self.kind == other.kind and self.normalized == other.normalized and np.array_equal(self.rows, other.rows)

    __hash__ = None

    @property
    def T(self):
        return self.rows.shape[0]

    @property
    def D(self):
        return self.rows.shape[1]


@dataclass(frozen=True)
class Segment:
    text: str
    start: float
    end: float


@dataclass(frozen=True)
class TimedTranscript:
    segments: tuple

    def __post_init__(self):
        segs = tuple(s if isinstance(s, Segment) else Segment(*s) for s in self.segments)
        prev_end = -math.inf
        for k, s in enumerate(segs):
            if not (math.isfinite(s.start) and math.isfinite(s.end)):
                raise ValidationError(f"segment {k} has a non-finite time")
            if not 0 <= s.start < s.end:
                raise ValidationError(f"segment {k} ({s.text!r}) needs 0 <= start < end, got start={s.start} end={s.end}")
            if s.start < prev_end:
                raise ValidationError(f"segment {k} ({s.text!r}) overlaps or precedes the previous segment")
            prev_end = s.end
        object.__setattr__(self, "segments", segs)

    def __len__(self):
        return len(self.segments)


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """``H x W x C`` image with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = _frozen(self.pixels)
        if px.ndim == 2:
            px = _frozen(px[:, :, None])
        if px.ndim != 3 or min(px.shape) < 1:
            raise ValidationError(f"image must be H x W x C with positive sizes, got {px.shape}")
        _require_finite(px, "image")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError(f"image values must lie in [0, 1], got range [{px.min()}, {px.max()}]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return self.pixels.shape[2]

    def __eq__(self, other):
        if not isinstance(other, ImageGrid):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FlowField:
    """Backward flow: destination pixel p samples the source at p + displacement[p].

    Pixel centers sit at integer coordinates, origin top-left, x rightward.
    ``displacement[..., 0]`` is the x component.
    """

    displacement: np.ndarray

    def __post_init__(self):
        d = _frozen(self.displacement)
        if d.ndim != 3 or d.shape[2] != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ValidationError(f"flow must have shape (H, W, 2), got {d.shape}")
        _require_finite(d, "flow")
        object.__setattr__(self, "displacement", d)

    @property
    def height(self):
        return self.displacement.shape[0]

    @property
    def width(self):
        return self.displacement.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return np.array_equal(self.displacement, other.displacement)

    __hash__ = None


def flatten_frames(seq, normalize=False):
    """Split a sequence into face and body feature rows.

    Row ``t`` interleaves x and y of every point: ``x0, y0, x1, y1, ...``.
    With ``normalize`` the coordinates are divided by the canvas width and
    height so they land in [0, 1].
    """
    if not isinstance(seq, GestureSequence):
        raise ValidationError(f"expected a GestureSequence, got {type(seq).__name__}")
    pts = seq.points
    if normalize:
        h, w = seq.canvas
        pts = pts / np.array([w, h], dtype=np.float64)
    T = len(seq)
    nf = seq.layout.face_count
    face = pts[:, :nf].reshape(T, -1)
    body = pts[:, nf:].reshape(T, -1)
    return (
        FeatureSequence(face, kind="gesture", normalized=normalize),
        FeatureSequence(body, kind="gesture", normalized=normalize),
    )


def unflatten_frames(face, body, fps=DEFAULT_FPS, layout=None, canvas=DEFAULT_CANVAS):
    """Inverse of :func:`flatten_frames`."""
    layout = layout or default_layout()
    face_rows = face.rows if isinstance(face, FeatureSequence) else np.asarray(face, dtype=np.float64)
    body_rows = body.rows if isinstance(body, FeatureSequence) else np.asarray(body, dtype=np.float64)
    if face_rows.ndim != 2 or face_rows.shape[1] != layout.face_flat_dim:
        raise ValidationError(f"face rows must be T x {layout.face_flat_dim}, got {face_rows.shape}")
    if body_rows.ndim != 2 or body_rows.shape[1] != layout.body_flat_dim:
        raise ValidationError(f"body rows must be T x {layout.body_flat_dim}, got {body_rows.shape}")
    if face_rows.shape[0] != body_rows.shape[0]:
        raise ValidationError(f"face has {face_rows.shape[0]} frames but body has {body_rows.shape[0]}")
    T = face_rows.shape[0]
    pts = np.concatenate([face_rows.reshape(T, -1, 2), body_rows.reshape(T, -1, 2)], axis=1)
    normalized = getattr(face, "normalized", False)
    if normalized:
        h, w = canvas
        pts = pts * np.array([w, h], dtype=np.float64)
    return GestureSequence(pts, fps=fps, layout=layout, canvas=canvas)


def slice_windows(seq, window_len=80, stride=10):
    """Fixed-length windows starting at 0, stride, 2*stride, ...

    Windows that would run past the end are dropped, so a sequence shorter
    than ``window_len`` yields an empty list.
    """
    if window_len < 1 or stride < 1:
        raise ValidationError(f"window_len and stride must be >= 1, got {window_len}, {stride}")
    T = len(seq)
    count = max(0, (T - window_len) // stride + 1)
    return [seq.replace_points(seq.points[k * stride : k * stride + window_len]) for k in range(count)]

"""Edge heatmaps: a Gaussian falloff around every skeleton segment,
max-aggregated over edges and rendered at several resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .types import DEFAULT_CANVAS

DEFAULT_RESOLUTIONS = ((32, 32), (64, 64), (128, 128))


@dataclass(frozen=True)
class HeatmapConfig:
    sigma: float | None = None  # None: 0.05 * min(H, W) at each resolution
    resolutions: tuple = DEFAULT_RESOLUTIONS

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        res = tuple((int(h), int(w)) for h, w in self.resolutions)
        if not res or any(h < 1 or w < 1 for h, w in res):
            raise ValidationError(f"resolutions must be positive (H, W) pairs, got {self.resolutions}")
        object.__setattr__(self, "resolutions", res)

    def sigma_for(self, H, W):
        return self.sigma if self.sigma is not None else 0.05 * min(H, W)


def validate_edges(edges, num_points):
    seen = set()
    out = []
    for a, b in edges:
        a, b = int(a), int(b)
        if not (0 <= a < num_points and 0 <= b < num_points):
            raise ValidationError(f"edge ({a}, {b}) references a keypoint outside 0..{num_points - 1}")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ValidationError(f"duplicate edge ({a}, {b})")
        seen.add(key)
        out.append((a, b))
    return out


def point_segment_distance(p, ki, kj):
    """Distance from p to the segment ki-kj and the projection parameter t.

    ``t = ((p - ki) . (kj - ki)) / |kj - ki|^2``; the distance is to ki for
    t <= 0, to kj for t >= 1 and to the foot of the perpendicular between.
    A zero-length segment behaves as the single point ki with t = 0.
    Accepts any leading shape for ``p`` (..., 2).
    """
    p = np.asarray(p, dtype=np.float64)
    ki = np.asarray(ki, dtype=np.float64)
    kj = np.asarray(kj, dtype=np.float64)
    seg = kj - ki
    L2 = float(seg @ seg)
    rel = p - ki
    if L2 == 0.0:
        t = np.zeros(p.shape[:-1])
        d = np.sqrt(np.sum(rel * rel, axis=-1))
    else:
        t = (rel @ seg) / L2
        tc = np.clip(t, 0.0, 1.0)[..., None]
        off = p - ((1.0 - tc) * ki + tc * kj)
        d = np.sqrt(np.sum(off * off, axis=-1))
    if d.ndim == 0:
        return float(d), float(t)
    return d, t


def _grid(H, W):
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    return np.stack([xs, ys], axis=-1)


def edge_map(ki, kj, sigma, H, W):
    """``exp(-d^2 / sigma^2)`` over an H x W grid of integer pixel centers."""
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    d, _ = point_segment_distance(_grid(H, W), ki, kj)
    return np.exp(-(d * d) / (sigma * sigma))


def aggregate_max(maps):
    if len(maps) == 0:
        raise ValidationError("cannot aggregate an empty list of heatmaps")
    shapes = {np.shape(m) for m in maps}
    if len(shapes) != 1:
        raise ValidationError(f"heatmaps have different shapes: {sorted(shapes)}")
    out = np.array(maps[0], dtype=np.float64)
    for m in maps[1:]:
        np.maximum(out, m, out=out)
    return out


def render_heatmap(points, edges, sigma, H, W):
    pts = np.asarray(points, dtype=np.float64)
    edges = validate_edges(edges, pts.shape[0])
    if not edges:
        raise ValidationError("no edges to render")
    return aggregate_max([edge_map(pts[a], pts[b], sigma, H, W) for a, b in edges])


def render_skeleton_heatmaps(frame, edges, config=None, canvas=DEFAULT_CANVAS):
    """One max-aggregated heatmap per configured resolution.

    ``frame`` holds (N, 2) keypoints in pixels of ``canvas`` (H, W); they are
    scaled proportionally to each output resolution.
    """
    config = config or HeatmapConfig()
    pts = np.asarray(frame, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError(f"frame must be an N x 2 array of keypoints, got {pts.shape}")
    ch, cw = canvas
    out = []
    for H, W in config.resolutions:
        scaled = pts * np.array([W / cw, H / ch])
        out.append(render_heatmap(scaled, edges, config.sigma_for(H, W), H, W))
    return out

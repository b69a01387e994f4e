"""Thin-plate-spline fitting and evaluation, dense backward flow and
bilinear image warping.

A fitted transform maps a driving-frame point p to a source-frame point

    T(p) = A @ [x, y, 1] + sum_i w_i * U(|p - d_i|),    U(r) = r^2 log r^2

with the weights subject to sum_i w_i = 0 and sum_i w_i d_i^T = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfigurationError, ValidationError
from .types import FlowField, ImageGrid

# condition-number limit for the normalized system
_MAX_COND = 1e10


@dataclass(frozen=True)
class WarpConfig:
    transforms: int = 29
    points_per_transform: int = 4
    canvas: tuple = (256, 256)

    def __post_init__(self):
        if self.transforms < 1 or self.points_per_transform < 3 or min(self.canvas) < 1:
            raise ValidationError(f"invalid warp configuration {self}")


@dataclass(frozen=True, eq=False)
class TPSParams:
    affine: np.ndarray  # (2, 3)
    weights: np.ndarray  # (N, 2)
    control: np.ndarray  # (N, 2) driving points
    residual: float = 0.0  # max interpolation error at the control points

    def to_dict(self):
        return {
            "affine": self.affine.tolist(),
            "weights": self.weights.tolist(),
            "control": self.control.tolist(),
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            affine = np.asarray(doc["affine"], dtype=np.float64)
            weights = np.asarray(doc["weights"], dtype=np.float64)
            control = np.asarray(doc["control"], dtype=np.float64)
        except KeyError as exc:
            raise ValidationError(f"TPS parameters missing field {exc}") from None
        if affine.shape != (2, 3) or weights.ndim != 2 or weights.shape[1] != 2 or control.shape != weights.shape:
            raise ValidationError("TPS parameters have inconsistent shapes")
        for name, arr in (("affine", affine), ("weights", weights), ("control", control)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"TPS field {name!r} contains non-finite values")
        return cls(affine, weights, control, float(doc.get("residual", 0.0)))


def radial_basis(r):
    """U(r) = r^2 log r^2, continuously extended with U(0) = 0."""
    r = np.asarray(r, dtype=np.float64)
    r2 = r * r
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r2 > 0, r2 * np.log(np.where(r2 > 0, r2, 1.0)), 0.0)
    return out if out.ndim else float(out)


def _pairwise_dist(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def system_matrices(driving, source):
    """The (N+3) x (N+3) matrix ``L = [[K, P], [P^T, 0]]`` and right-hand side ``Y``."""
    d = np.asarray(driving, dtype=np.float64)
    s = np.asarray(source, dtype=np.float64)
    N = d.shape[0]
    K = radial_basis(_pairwise_dist(d, d))
    P = np.hstack([np.ones((N, 1)), d])
    L = np.zeros((N + 3, N + 3))
    L[:N, :N] = K
    L[:N, N:] = P
    L[N:, :N] = P.T
    Y = np.zeros((N + 3, 2))
    Y[:N] = s
    return L, Y


def _unpack(sol, N):
    weights = sol[:N]
    # rows N..N+2 hold the coefficients of (1, x, y) for each output coordinate
    coef = sol[N:]
    return np.column_stack([coef[1], coef[2], coef[0]]), weights


def _check_pairs(driving, source):
    d = np.asarray(driving, dtype=np.float64)
    s = np.asarray(source, dtype=np.float64)
    if d.ndim != 2 or d.shape[1] != 2 or d.shape != s.shape:
        raise ValidationError(f"control points must be two matching N x 2 arrays, got {d.shape} and {s.shape}")
    if d.shape[0] < 3:
        raise ValidationError(f"need at least 3 control pairs, got {d.shape[0]}")
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(s))):
        raise ValidationError("control points contain non-finite values")
    return d, s


def tps_fit(driving, source, regularization=0.0):
    """Fit the spline taking each ``driving[i]`` to ``source[i]``.

    Without regularization the system is solved in centered, rescaled
    coordinates (the spline is invariant to that change up to a constant
    absorbed by the affine part) and mapped back, which keeps the solve
    well conditioned for pixel-scale inputs. Near-singular systems raise
    :class:`DegenerateConfigurationError`.

    With ``regularization`` > 0 the pixel-frame system ``L + lambda*I`` is
    solved directly; interpolation is then approximate and the achieved
    residual is stored on the result.
    """
    d, s = _check_pairs(driving, source)
    N = d.shape[0]
    if regularization < 0:
        raise ValidationError("regularization must be non-negative")
    if regularization > 0:
        L, Y = system_matrices(d, s)
        sol = np.linalg.solve(L + regularization * np.eye(N + 3), Y)
        affine, weights = _unpack(sol, N)
    else:
        center = d.mean(axis=0)
        scale = float(np.sqrt(np.mean(np.sum((d - center) ** 2, axis=1))))
        if scale == 0.0:
            raise DegenerateConfigurationError("degenerate control configuration: all driving points coincide")
        q = (d - center) / scale
        L, Y = system_matrices(q, s)
        cond = np.linalg.cond(L)
        if not np.isfinite(cond) or cond > _MAX_COND:
            raise DegenerateConfigurationError(
                f"degenerate control configuration (condition number {cond:.3g}); "
                "driving points are duplicated or collinear"
            )
        sol = np.linalg.solve(L, Y)
        a_norm, w_norm = _unpack(sol, N)
        s2 = scale * scale
        weights = w_norm / s2
        lin = a_norm[:, :2] / scale
        shift = a_norm[:, 2] - lin @ center
        # U(r/s) = U(r)/s^2 - log(s^2) r^2/s^2; the r^2 part collapses to a constant under the side conditions
        shift = shift - np.log(s2) / s2 * (w_norm.T @ np.sum(d * d, axis=1))
        affine = np.column_stack([lin, shift])
    params = TPSParams(affine, weights, d.copy())
    resid = float(np.max(np.abs(tps_eval(params, d) - s)))
    return TPSParams(affine, weights, d.copy(), resid)


def tps_eval(params, points):
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    out = pts @ params.affine[:, :2].T + params.affine[:, 2]
    out = out + radial_basis(_pairwise_dist(pts, params.control)) @ params.weights
    return out[0] if single else out


def identity_params(control):
    control = np.asarray(control, dtype=np.float64)
    return TPSParams(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), np.zeros_like(control), control)


def pixel_grid(H, W):
    """Pixel centers at integer coordinates as an (H, W, 2) array of (x, y)."""
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    return np.stack([xs, ys], axis=-1)


def tps_flow_grid(params, H, W):
    grid = pixel_grid(H, W)
    mapped = tps_eval(params, grid.reshape(-1, 2)).reshape(H, W, 2)
    return FlowField(mapped - grid)


def combine_flows(flows, weights):
    """Per-pixel convex combination of K flows with (H, W, K) weights."""
    if not flows:
        raise ValidationError("need at least one flow")
    stack = np.stack([f.displacement if isinstance(f, FlowField) else np.asarray(f) for f in flows], axis=2)
    w = np.asarray(weights, dtype=np.float64)
    H, W, K = stack.shape[:3]
    if w.shape != (H, W, K):
        raise ValidationError(f"weights must have shape ({H}, {W}, {K}), got {w.shape}")
    if np.any(w < 0):
        y, x, k = np.argwhere(w < 0)[0]
        raise ValidationError(f"negative weight for flow {k} at pixel (x={x}, y={y})")
    bad = np.abs(w.sum(axis=2) - 1.0) > 1e-6
    if np.any(bad):
        y, x = np.argwhere(bad)[0]
        raise ValidationError(f"weights at pixel (x={x}, y={y}) sum to {w[y, x].sum():.9g}, not 1")
    return FlowField(np.einsum("hwk,hwkc->hwc", w, stack))


def bilinear_sample(pixels, xs, ys):
    """Sample an (H, W, C) array at float coordinates, clamping to the border."""
    H, W = pixels.shape[:2]
    xs = np.clip(xs, 0.0, W - 1)
    ys = np.clip(ys, 0.0, H - 1)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = pixels[y0, x0] * (1 - fx) + pixels[y0, x1] * fx
    bottom = pixels[y1, x0] * (1 - fx) + pixels[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def warp_image(image, flow, occlusion=None):
    """Backward warp: output[p] = image sampled at p + flow[p], times the occlusion mask."""
    px = image.pixels
    H, W = px.shape[:2]
    if (flow.height, flow.width) != (H, W):
        raise ValidationError(f"flow is {flow.height}x{flow.width} but image is {H}x{W}")
    grid = pixel_grid(H, W)
    src = grid + flow.displacement
    out = bilinear_sample(px, src[..., 0], src[..., 1])
    if occlusion is not None:
        occ = np.asarray(occlusion, dtype=np.float64)
        if occ.ndim == 3 and occ.shape[2] == 1:
            occ = occ[..., 0]
        if occ.shape != (H, W):
            raise ValidationError(f"occlusion mask is {occ.shape}, expected ({H}, {W})")
        if np.any(occ < 0) or np.any(occ > 1):
            raise ValidationError("occlusion mask values must lie in [0, 1]")
        out = out * occ[..., None]
    return ImageGrid(np.clip(out, 0.0, 1.0))


def group_weights(driving, groups, H, W, scale=None):
    """Soft (H, W, K) assignment of pixels to keypoint groups.

    Weight of group k at pixel p is proportional to
    ``exp(-|p - c_k|^2 / (2 scale^2))`` where c_k is the group centroid.
    This is a fixed stand-in for a learned dense-motion network.
    """
    driving = np.asarray(driving, dtype=np.float64)
    scale = scale if scale is not None else 0.1 * min(H, W)
    centroids = np.stack([driving[list(g)].mean(axis=0) for g in groups])
    grid = pixel_grid(H, W).reshape(-1, 2)
    d2 = np.sum((grid[:, None, :] - centroids[None]) ** 2, axis=-1)
    logits = -d2 / (2 * scale * scale)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w.reshape(H, W, len(groups))


def keypoint_groups(num_points, config):
    """Split keypoint indices into ``config.transforms`` consecutive groups."""
    n = config.points_per_transform
    if config.transforms * n > num_points:
        raise ValidationError(
            f"{config.transforms} transforms x {n} points need {config.transforms * n} keypoints, layout has {num_points}"
        )
    return [tuple(range(k * n, (k + 1) * n)) for k in range(config.transforms)]


def multi_tps_flow(driving, source, config, fallback_regularization=1e-3):
    """Fit one spline per keypoint group and blend their flows.

    Groups whose points are degenerate are refit with a small
    regularization instead of failing the whole frame.
    """
    driving = np.asarray(driving, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    H, W = config.canvas
    groups = keypoint_groups(driving.shape[0], config)
    flows = []
    for g in groups:
        idx = list(g)
        try:
            params = tps_fit(driving[idx], source[idx])
        except DegenerateConfigurationError:
            params = tps_fit(driving[idx], source[idx], regularization=fallback_regularization)
        flows.append(tps_flow_grid(params, H, W))
    return combine_flows(flows, group_weights(driving, groups, H, W))


def load_pairs(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
    try:
        d = np.array([p["d"] for p in doc], dtype=np.float64)
        s = np.array([p["s"] for p in doc], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: each pair needs 'd' and 's' as [x, y] ({exc})") from None
    return _check_pairs(d, s)

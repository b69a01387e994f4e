"""Evaluation metrics over keypoint sequences and feature sets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericalError, ValidationError
from .types import GestureSequence

DEFAULT_SIGMA_B = 0.1
EIG_CLAMP = 1e-10
PSD_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int = 0

    @classmethod
    def from_features(cls, features):
        x = np.asarray(getattr(features, "rows", features), dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValidationError(f"need at least 2 feature rows to estimate a covariance, got shape {x.shape}")
        return cls(x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False)), x.shape[0])


@dataclass
class MetricReport:
    values: dict
    config: dict = field(default_factory=dict)

    def to_json(self):
        for k, v in self.values.items():
            if isinstance(v, float) and not np.isfinite(v):
                raise NumericalError(f"metric {k!r} is not finite")
        return json.dumps({"metrics": self.values, "config": self.config}, indent=2, sort_keys=True) + "\n"


def _coords(x):
    if isinstance(x, GestureSequence):
        return x.points
    return np.asarray(getattr(x, "rows", x), dtype=np.float64)


def _psd_sqrt(cov, name):
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    scale = max(1.0, float(np.max(np.abs(vals)))) if vals.size else 1.0
    if vals.size and vals.min() < -PSD_TOL * scale:
        raise NumericalError(f"covariance {name} is not positive semidefinite (eigenvalue {vals.min():.3g})")
    vals = np.where(vals < EIG_CLAMP, 0.0, vals)
    return (vecs * np.sqrt(vals)) @ vecs.T


def trace_sqrt_product(cov_a, cov_b):
    """Tr((cov_a cov_b)^(1/2)) via the symmetric form sqrt(A) B sqrt(A)."""
    ra = _psd_sqrt(np.asarray(cov_a, dtype=np.float64), "a")
    m = ra @ np.asarray(cov_b, dtype=np.float64) @ ra
    m = 0.5 * (m + m.T)
    vals = np.linalg.eigvalsh(m)
    vals = np.where(vals < EIG_CLAMP, 0.0, vals)
    return float(np.sum(np.sqrt(vals)))


def product_sqrtm(cov_a, cov_b):
    """The matrix (cov_a cov_b)^(1/2).

    For invertible ``cov_a`` this is ``sqrt(A) (sqrt(A) B sqrt(A))^(1/2) sqrt(A)^-1``;
    otherwise it falls back to a general Schur-based square root.
    """
    a = np.asarray(cov_a, dtype=np.float64)
    b = np.asarray(cov_b, dtype=np.float64)
    ra = _psd_sqrt(a, "a")
    if np.linalg.cond(ra) < 1e8:
        inner = _psd_sqrt(ra @ b @ ra, "product")
        return ra @ inner @ np.linalg.inv(ra)
    return np.real(scipy.linalg.sqrtm(a @ b))


def frechet_distance(a, b):
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``, clamped at 0."""
    if a.mean.shape != b.mean.shape:
        raise ValidationError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    ca = np.asarray(a.covariance, dtype=np.float64)
    cb = np.asarray(b.covariance, dtype=np.float64)
    _psd_sqrt(cb, "b")
    diff = a.mean - b.mean
    fd = float(diff @ diff + np.trace(ca) + np.trace(cb) - 2.0 * trace_sqrt_product(ca, cb))
    return max(fd, 0.0)


def fgd(generated, reference):
    """Fréchet distance between Gaussians fitted to two feature sets (rows are samples)."""
    return frechet_distance(GaussianStats.from_features(generated), GaussianStats.from_features(reference))


def _clip_matrix(clips):
    vecs = [np.asarray(_coords(c), dtype=np.float64).reshape(-1) for c in clips]
    if len(vecs) < 2:
        raise ValidationError("diversity needs at least 2 clips")
    dims = {v.shape[0] for v in vecs}
    if len(dims) != 1:
        raise ValidationError(f"clips have different sizes: {sorted(dims)}")
    return np.stack(vecs)


def diversity(clips, norm="l1"):
    """Mean pairwise distance over all unordered clip pairs (``norm`` is 'l1' or 'l2')."""
    x = _clip_matrix(clips)
    i, j = np.triu_indices(x.shape[0], k=1)
    diff = x[i] - x[j]
    if norm == "l1":
        d = np.sum(np.abs(diff), axis=1)
    elif norm == "l2":
        d = np.sqrt(np.sum(diff * diff, axis=1))
    else:
        raise ValidationError(f"unknown norm {norm!r}")
    return float(np.mean(d))


def speed_curve(seq):
    """Mean keypoint speed per frame (pixels/second), central differences inside."""
    pts = _coords(seq)
    fps = seq.fps if isinstance(seq, GestureSequence) else 1.0
    vel = np.gradient(pts, axis=0) * fps
    return np.mean(np.sqrt(np.sum(vel * vel, axis=-1)), axis=1)


def motion_beats(seq, fps=None, rel_tol=1e-9):
    """Times (s) of interior frames whose speed is below both neighbours.

    A dip must exceed ``rel_tol`` times the peak speed so that float noise
    on a constant-speed curve does not register as beats.
    """
    pts = _coords(seq)
    if pts.shape[0] < 3:
        return []
    fps = fps if fps is not None else (seq.fps if isinstance(seq, GestureSequence) else 1.0)
    speed = speed_curve(seq)
    tol = rel_tol * float(speed.max()) if speed.size else 0.0
    mid = speed[1:-1]
    is_min = (mid < speed[:-2] - tol) & (mid < speed[2:] - tol)
    return [float(t) / fps for t in (np.flatnonzero(is_min) + 1)]


def _chamfer_kernel(anchors, targets, sigma_b):
    if not sigma_b > 0:
        raise ValidationError(f"sigma_b must be positive, got {sigma_b}")
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if anchors.size == 0 or targets.size == 0:
        return 0.0
    d2 = np.min((anchors[:, None] - targets[None, :]) ** 2, axis=1)
    return float(np.mean(np.exp(-d2 / (2.0 * sigma_b * sigma_b))))


def beat_align_score(audio_beats, motion_beats_, sigma_b=DEFAULT_SIGMA_B):
    """Mean over audio beats of exp(-dist_to_nearest_motion_beat^2 / (2 sigma_b^2))."""
    if len(audio_beats) == 0:
        raise ValidationError("beat alignment needs at least one audio beat")
    return _chamfer_kernel(audio_beats, motion_beats_, sigma_b)


def beat_consistency(audio_beats, motion_beats_, sigma_b=DEFAULT_SIGMA_B):
    """The same kernel evaluated from motion beats toward audio beats."""
    return _chamfer_kernel(motion_beats_, audio_beats, sigma_b)


def _same_shape(gen, gt):
    a, b = _coords(gen), _coords(gt)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def pcm(gen, gt, delta):
    """Fraction of coordinates with |gen - gt| <= delta (inclusive up to subtraction rounding)."""
    a, b = _same_shape(gen, gt)
    if delta < 0:
        raise ValidationError("delta must be non-negative")
    diff = np.abs(a - b)
    slack = 4 * np.finfo(np.float64).eps * np.maximum(np.abs(a), np.abs(b))
    return float(np.mean(diff <= delta + slack))


def mse(gen, gt):
    a, b = _same_shape(gen, gt)
    return float(np.mean((a - b) ** 2))


def velocity_penalty(seq):
    x = _coords(seq)
    if x.shape[0] < 2:
        return 0.0
    return float(np.mean(np.diff(x, n=1, axis=0) ** 2))


def acceleration_penalty(seq):
    x = _coords(seq)
    if x.shape[0] < 3:
        return 0.0
    return float(np.mean(np.diff(x, n=2, axis=0) ** 2))


def audio_beats_from_onsets(onset, fps, threshold=0.5):
    """Peak frames of an onset-strength envelope above ``threshold``, in seconds."""
    o = np.asarray(onset, dtype=np.float64).reshape(-1)
    if o.size < 3:
        return []
    mid = o[1:-1]
    peaks = (mid >= o[:-2]) & (mid > o[2:]) & (mid >= threshold)
    return [float(t) / fps for t in (np.flatnonzero(peaks) + 1)]

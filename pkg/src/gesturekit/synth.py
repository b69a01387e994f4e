"""Deterministic synthetic gesture, speech-feature and transcript data."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .errors import ValidationError
from .types import DEFAULT_CANVAS, DEFAULT_FPS, FeatureSequence, GestureSequence, Segment, TimedTranscript, default_layout

KINDS = ("circle-motion", "wave-motion", "random-walk")
SPEECH_DIM = 34
BEAT_PERIOD = 0.5  # seconds between synthetic audio beats

_WORDS = ("after", "watching", "that", "video", "you", "realize", "how", "much", "more", "than", "any", "other")


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "circle-motion"
    T: int = 80
    seed: int = 0
    fps: float = DEFAULT_FPS
    canvas: tuple = DEFAULT_CANVAS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown generator kind {self.kind!r}; expected one of {KINDS}")
        if self.T < 2:
            raise ValidationError(f"synthetic sequences need T >= 2, got {self.T}")


def rest_pose(canvas=DEFAULT_CANVAS):
    """A frontal upper-body pose: 68 face landmarks then 48 shoulder/hand points.

    Uses a fixed jitter so no four consecutive points are exactly collinear.
    """
    H, W = canvas
    cx = W / 2
    u = min(H, W) / 256.0
    face = []
    fy = 0.32 * H
    for k in range(17):  # jaw
        a = math.pi * (0.05 + 0.9 * k / 16)
        face.append((cx - 30 * u * math.cos(a), fy + 32 * u * math.sin(a) - 6 * u))
    for side in (-1, 1):  # brows
        for k in range(5):
            face.append((cx + side * (8 + 4 * k) * u, fy - 18 * u - 2 * u * math.sin(math.pi * k / 4)))
    for k in range(4):  # nose bridge
        face.append((cx, fy - 12 * u + 5 * k * u))
    for k in range(5):  # nostrils
        face.append((cx + (k - 2) * 4 * u, fy + 10 * u + abs(k - 2) * -1.0 * u))
    for side in (-1, 1):  # eyes
        ex = cx + side * 14 * u
        for k in range(6):
            a = 2 * math.pi * k / 6
            face.append((ex + 6 * u * math.cos(a), fy - 8 * u + 3 * u * math.sin(a)))
    for k in range(12):  # outer lip
        a = 2 * math.pi * k / 12
        face.append((cx + 12 * u * math.cos(a), fy + 20 * u + 5 * u * math.sin(a)))
    for k in range(8):  # inner lip
        a = 2 * math.pi * k / 8
        face.append((cx + 7 * u * math.cos(a), fy + 20 * u + 2 * u * math.sin(a)))
    body = []
    sy = 0.62 * H
    for side in (-1, 1):  # neck base, shoulder, elbow
        body.append((cx + side * 12 * u, sy - 10 * u))
        body.append((cx + side * 48 * u, sy))
        body.append((cx + side * 62 * u, sy + 40 * u))
    for side in (-1, 1):  # hands
        wx, wy = cx + side * 45 * u, sy + 70 * u
        hand = [(wx, wy)]
        for f in range(5):
            ang = math.pi / 2 + side * (f - 2) * 0.35
            for j in range(1, 5):
                hand.append((wx + side * 2 * u + math.cos(ang) * 5 * j * u * side, wy - math.sin(ang) * 5 * j * u))
        body.extend(hand)
    pts = np.array(face + body, dtype=np.float64)
    jitter = np.random.default_rng(20240607).normal(scale=0.6 * u, size=pts.shape)
    return pts + jitter


def _motion(spec, base, rng):
    T, fps = spec.T, spec.fps
    t = np.arange(T) / fps
    H, W = spec.canvas
    u = min(H, W) / 256.0
    nf = default_layout().face_count
    if spec.kind == "circle-motion":
        phase = rng.uniform(0, 2 * math.pi)
        radius = 10 * u
        omega = 2 * math.pi * 0.5
        off = np.stack([radius * np.cos(omega * t + phase), radius * np.sin(omega * t + phase)], axis=1)
        return base[None] + off[:, None, :]
    if spec.kind == "wave-motion":
        phase = rng.integers(0, 2)  # aligns speed minima with the beat grid
        amp = rng.uniform(10, 16) * u
        wave = amp * np.cos(math.pi * t / BEAT_PERIOD + phase * math.pi)
        pts = np.repeat(base[None], T, axis=0)
        pts[:, nf + 6 :, 1] += wave[:, None]  # both hands
        pts[:, :nf, 1] += 0.25 * wave[:, None]  # head nod
        return pts
    steps = rng.normal(scale=1.2 * u, size=(T, 1, 2))
    steps[0] = 0.0
    drift = np.cumsum(steps, axis=0)
    local = np.cumsum(rng.normal(scale=0.3 * u, size=(T,) + base.shape), axis=0)
    return base[None] + drift + local


def _speech(spec, rng):
    T, fps = spec.T, spec.fps
    n_beats = int(math.floor((T - 1) / fps / BEAT_PERIOD)) + 1
    onset = np.zeros(T)
    for k in range(n_beats):
        f = int(round(k * BEAT_PERIOD * fps))
        if f < T:
            onset[f] = 1.0
    smooth = rng.normal(size=(T, SPEECH_DIM - 1))
    kernel = np.exp(-0.5 * (np.arange(-4, 5) / 2.0) ** 2)
    kernel /= kernel.sum()
    smooth = convolve1d(smooth, kernel, axis=0, mode="constant")
    return FeatureSequence(np.column_stack([onset, smooth]), kind="speech")


def _transcript(spec, rng):
    duration = spec.T / spec.fps
    segs = []
    start = 0.0
    while start < duration:
        length = float(rng.uniform(0.2, 0.6))
        end = min(duration, start + length)
        if duration - end < 0.1:
            end = duration
        segs.append(Segment(_WORDS[len(segs) % len(_WORDS)], start, end))
        start = end
    return TimedTranscript(tuple(segs))


def synth_generate(spec):
    """Return ``(gesture, speech_features, transcript)`` for ``spec``.

    The speech features carry an onset envelope in column 0 with pulses
    every half second; the transcript tiles the whole duration.
    """
    rng = np.random.default_rng(spec.seed)
    base = rest_pose(spec.canvas)
    pts = _motion(spec, base, rng)
    H, W = spec.canvas
    pts[..., 0] = np.clip(pts[..., 0], 0, W - 1)
    pts[..., 1] = np.clip(pts[..., 1], 0, H - 1)
    seq = GestureSequence(pts, fps=spec.fps, canvas=spec.canvas)
    return seq, _speech(spec, rng), _transcript(spec, rng)

"""Readers and writers for every on-disk format.

Binary matrices (features, flows, heatmaps, codebook stacks) are
little-endian float32 behind a fixed 16-byte header of four fields:
a 4-byte magic followed by three uint32 values.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin

from .errors import ValidationError
from .generator import TokenSequence
from .rvq import Codebook, CodebookStack
from .types import (
    DEFAULT_CANVAS,
    DEFAULT_FPS,
    FEATURE_KINDS,
    FeatureSequence,
    FlowField,
    GestureSequence,
    ImageGrid,
    Segment,
    TimedTranscript,
    default_layout,
)

HEADER = struct.Struct("<4sIII")
FEATURE_MAGIC = b"GKFT"
FLOW_MAGIC = b"GKFL"
GRID_MAGIC = b"GKHM"
STACK_MAGIC = b"GKRV"

_NORMALIZED_FLAG = 1 << 8


def _read_header(buf, magic, path):
    if len(buf) < HEADER.size:
        raise ValidationError(f"{path}: file shorter than the {HEADER.size}-byte header")
    got, a, b, c = HEADER.unpack_from(buf)
    if got != magic:
        raise ValidationError(f"{path}: bad magic {got!r}, expected {magic!r}")
    return a, b, c


def _read_floats(buf, offset, count, path, field):
    need = offset + 4 * count
    if len(buf) != need:
        raise ValidationError(
            f"{path}: {field} payload is {len(buf) - offset} bytes but the header declares {4 * count}"
        )
    values = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{path}: {field} contains non-finite values")
    return values


# -- keypoints ---------------------------------------------------------------


def save_keypoints(seq, path):
    nf = seq.layout.face_count
    with open(path, "w") as fh:
        for t, frame in enumerate(seq.points):
            rec = {"t": t, "face": frame[:nf].tolist(), "body": frame[nf:].tolist()}
            fh.write(json.dumps(rec) + "\n")


def load_keypoints(path, fps=DEFAULT_FPS, canvas=DEFAULT_CANVAS, layout=None):
    layout = layout or default_layout()
    frames = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            for key in ("t", "face", "body"):
                if key not in rec:
                    raise ValidationError(f"{path}:{lineno}: missing field {key!r}")
            if rec["t"] != len(frames):
                raise ValidationError(f"{path}:{lineno}: field 't' is {rec['t']}, expected {len(frames)}")
            face = np.asarray(rec["face"], dtype=np.float64)
            body = np.asarray(rec["body"], dtype=np.float64)
            if face.shape != (layout.face_count, 2):
                raise ValidationError(f"{path}:{lineno}: field 'face' has shape {face.shape}, expected ({layout.face_count}, 2)")
            if body.shape != (layout.body_count, 2):
                raise ValidationError(f"{path}:{lineno}: field 'body' has shape {body.shape}, expected ({layout.body_count}, 2)")
            if not (np.all(np.isfinite(face)) and np.all(np.isfinite(body))):
                raise ValidationError(f"{path}:{lineno}: non-finite coordinate")
            frames.append(np.concatenate([face, body]))
    if not frames:
        raise ValidationError(f"{path}: no frames")
    return GestureSequence(np.stack(frames), fps=fps, layout=layout, canvas=canvas)


# -- features ----------------------------------------------------------------


def save_features(features, path):
    """Write binary features, or CSV with a header row when ``path`` ends in .csv."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"f{j}" for j in range(features.D)])
            for row in features.rows:
                writer.writerow([repr(float(v)) for v in row])
        return
    code = FEATURE_KINDS.index(features.kind) | (_NORMALIZED_FLAG if features.normalized else 0)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(FEATURE_MAGIC, features.T, features.D, code))
        fh.write(np.ascontiguousarray(features.rows, dtype="<f4").tobytes())


def load_features(path, kind=None):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_features_csv(path, kind or "speech")
    buf = path.read_bytes()
    T, D, code = _read_header(buf, FEATURE_MAGIC, path)
    kind_idx = code & 0xFF
    if kind_idx >= len(FEATURE_KINDS):
        raise ValidationError(f"{path}: unknown kind code {kind_idx} in header")
    if T < 1 or D < 1:
        raise ValidationError(f"{path}: header declares an empty {T} x {D} matrix")
    values = _read_floats(buf, HEADER.size, T * D, path, "feature")
    return FeatureSequence(
        values.reshape(T, D),
        kind=kind or FEATURE_KINDS[kind_idx],
        normalized=bool(code & _NORMALIZED_FLAG),
    )


def _load_features_csv(path, kind):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty CSV") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: {len(row)} columns but the header has {len(header)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            if not all(np.isfinite(vals)):
                raise ValidationError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return FeatureSequence(np.array(rows), kind=kind)


# -- transcripts -------------------------------------------------------------


def save_transcript(transcript, path):
    data = [{"text": s.text, "start": s.start, "end": s.end} for s in transcript.segments]
    Path(path).write_text(json.dumps(data, indent=1))


def load_transcript(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, list):
        raise ValidationError(f"{path}: transcript must be a JSON array")
    segs = []
    for k, item in enumerate(data):
        try:
            segs.append(Segment(str(item["text"]), float(item["start"]), float(item["end"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: segment {k} is malformed ({exc})") from None
    return TimedTranscript(tuple(segs))


# -- images ------------------------------------------------------------------


def save_image(image, path, metadata=None):
    px = image.pixels if isinstance(image, ImageGrid) else np.asarray(image)
    if px.ndim == 3 and px.shape[2] == 1:
        px = px[:, :, 0]
    data = np.round(np.clip(px, 0.0, 1.0) * 255.0).astype(np.uint8)
    info = None
    if metadata:
        info = PngImagePlugin.PngInfo()
        for key, value in metadata.items():
            info.add_text(key, str(value))
    Image.fromarray(data).save(path, format="PNG", pnginfo=info)


def load_image(path):
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGB")
        data = np.asarray(im, dtype=np.float64) / 255.0
    return ImageGrid(data)


# -- flows and scalar grids --------------------------------------------------


def save_flow(flow, path):
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(FLOW_MAGIC, flow.height, flow.width, 2))
        fh.write(np.ascontiguousarray(flow.displacement, dtype="<f4").tobytes())


def load_flow(path):
    buf = Path(path).read_bytes()
    H, W, C = _read_header(buf, FLOW_MAGIC, path)
    if C != 2:
        raise ValidationError(f"{path}: flow channel count is {C}, expected 2")
    values = _read_floats(buf, HEADER.size, H * W * 2, path, "flow")
    return FlowField(values.reshape(H, W, 2))


def save_grid(values, path):
    values = np.asarray(values)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(GRID_MAGIC, values.shape[0], values.shape[1], 1))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def load_grid(path):
    buf = Path(path).read_bytes()
    H, W, _ = _read_header(buf, GRID_MAGIC, path)
    return _read_floats(buf, HEADER.size, H * W, path, "grid").reshape(H, W)


# -- codebook stacks ---------------------------------------------------------


def save_stack(stack, path):
    """Header (R, C, d), then R float32 C x d matrices, then R x C uint32 usage counts."""
    R, C, d = len(stack.layers), stack.layers[0].size, stack.dim
    if any(cb.size != C for cb in stack.layers):
        raise ValidationError("stack file format needs every layer to have the same code count")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(STACK_MAGIC, R, C, d))
        for cb in stack.layers:
            fh.write(np.ascontiguousarray(cb.vectors, dtype="<f4").tobytes())
        for cb in stack.layers:
            fh.write(np.ascontiguousarray(cb.usage_counts, dtype="<u4").tobytes())


def load_stack(path):
    buf = Path(path).read_bytes()
    R, C, d = _read_header(buf, STACK_MAGIC, path)
    body = HEADER.size + 4 * R * C * d
    if len(buf) != body + 4 * R * C:
        raise ValidationError(f"{path}: stack payload length does not match header R={R} C={C} d={d}")
    vecs = _read_floats(buf[:body], HEADER.size, R * C * d, path, "codebook").reshape(R, C, d)
    usage = np.frombuffer(buf, dtype="<u4", count=R * C, offset=body).reshape(R, C)
    return CodebookStack(tuple(Codebook(vecs[r], usage[r].astype(np.int64)) for r in range(R)))


# -- tokens ------------------------------------------------------------------


def save_tokens(tokens, path):
    doc = {"vocab_size": tokens.vocab_size, "sentinel": tokens.sentinel, "tokens": tokens.tokens.tolist()}
    Path(path).write_text(json.dumps(doc))


def load_tokens(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
    for key in ("vocab_size", "sentinel", "tokens"):
        if key not in doc:
            raise ValidationError(f"{path}: missing field {key!r}")
    if doc["sentinel"] != doc["vocab_size"]:
        raise ValidationError(f"{path}: sentinel must equal vocab_size ({doc['vocab_size']}), got {doc['sentinel']}")
    return TokenSequence(np.asarray(doc["tokens"], dtype=np.int64), vocab_size=int(doc["vocab_size"]))


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

"""Pipeline configuration: an INI file with one section per module.

Unknown sections or keys are rejected. ``GESTUREKIT_SEED`` in the
environment overrides ``[pipeline] seed``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import os
from dataclasses import dataclass, field, fields

from .errors import ValidationError

SEED_ENV = "GESTUREKIT_SEED"


@dataclass(frozen=True)
class PathsSection:
    out_dir: str = "gesturekit_out"
    keypoints: str = ""
    speech: str = ""


@dataclass(frozen=True)
class PipelineSection:
    seed: int = 0


@dataclass(frozen=True)
class SynthSection:
    kind: str = "circle-motion"
    frames: int = 80
    fps: float = 25.0


@dataclass(frozen=True)
class WindowSection:
    length: int = 80
    stride: int = 10


@dataclass(frozen=True)
class RVQSection:
    layers: int = 6
    codes: int = 1024
    dim: int = 0  # 0: use the flattened feature width
    epochs: int = 10
    batch_size: int = 256


@dataclass(frozen=True)
class DecodeSection:
    steps: int = 5
    ratio_low: float = 0.5
    ratio_high: float = 1.0
    predictor: str = "toy"


@dataclass(frozen=True)
class TPSSection:
    transforms: int = 29
    points_per_transform: int = 4
    canvas: str = "256x256"
    frames: int = 4


@dataclass(frozen=True)
class HeatmapSection:
    sizes: str = "32,64,128"
    sigma: float = 0.0  # 0: 5% of the smaller side at each resolution


@dataclass(frozen=True)
class AlignSection:
    temperature: float = 0.7


@dataclass(frozen=True)
class MetricsSection:
    delta: float = 12.8
    sigma_b: float = 0.1


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    synth: SynthSection = field(default_factory=SynthSection)
    window: WindowSection = field(default_factory=WindowSection)
    rvq: RVQSection = field(default_factory=RVQSection)
    decode: DecodeSection = field(default_factory=DecodeSection)
    tps: TPSSection = field(default_factory=TPSSection)
    heatmap: HeatmapSection = field(default_factory=HeatmapSection)
    align: AlignSection = field(default_factory=AlignSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def __post_init__(self):
        _validate(self)

    @property
    def seed(self):
        return self.pipeline.seed

    @property
    def canvas(self):
        return parse_size(self.tps.canvas)

    @property
    def heatmap_sizes(self):
        return parse_int_list(self.heatmap.sizes)

    def replace(self, **sections):
        """Copy with some keys changed, e.g. ``replace(rvq={"codes": 64})``."""
        updates = {}
        for name, changes in sections.items():
            updates[name] = dataclasses.replace(getattr(self, name), **changes)
        return dataclasses.replace(self, **updates)


def parse_size(text):
    try:
        w, h = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise ValidationError(f"size must look like WIDTHxHEIGHT, got {text!r}") from None
    if w < 1 or h < 1:
        raise ValidationError(f"size must be positive, got {text!r}")
    return (h, w)


def parse_int_list(text):
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise ValidationError("expected at least one integer")
    return vals


def _validate(cfg):
    checks = [
        (cfg.synth.frames >= 2, "synth.frames must be >= 2"),
        (cfg.synth.fps > 0, "synth.fps must be positive"),
        (cfg.synth.kind in ("circle-motion", "wave-motion", "random-walk"), f"unknown synth.kind {cfg.synth.kind!r}"),
        (cfg.window.length >= 2 and cfg.window.stride >= 1, "window.length must be >= 2 and window.stride >= 1"),
        (cfg.rvq.layers >= 1 and cfg.rvq.codes >= 1, "rvq.layers and rvq.codes must be >= 1"),
        (cfg.rvq.dim >= 0, "rvq.dim must be >= 0"),
        (cfg.rvq.epochs >= 0 and cfg.rvq.batch_size >= 1, "rvq.epochs must be >= 0 and rvq.batch_size >= 1"),
        (cfg.decode.steps >= 1, "decode.steps must be >= 1"),
        (0 <= cfg.decode.ratio_low <= cfg.decode.ratio_high <= 1, "need 0 <= decode.ratio_low <= decode.ratio_high <= 1"),
        (cfg.decode.predictor in ("toy", "oracle", "uniform"), f"unknown decode.predictor {cfg.decode.predictor!r}"),
        (cfg.tps.transforms >= 1 and cfg.tps.points_per_transform >= 3, "tps.transforms >= 1 and tps.points_per_transform >= 3"),
        (cfg.tps.frames >= 1, "tps.frames must be >= 1"),
        (cfg.heatmap.sigma >= 0, "heatmap.sigma must be >= 0"),
        (cfg.align.temperature > 0, "align.temperature must be positive"),
        (cfg.metrics.delta >= 0 and cfg.metrics.sigma_b > 0, "metrics.delta >= 0 and metrics.sigma_b > 0"),
    ]
    for ok, message in checks:
        if not ok:
            raise ValidationError(message)
    parse_size(cfg.tps.canvas)
    if any(s < 1 for s in parse_int_list(cfg.heatmap.sizes)):
        raise ValidationError("heatmap.sizes must be positive")


def _coerce(value, typ, where):
    try:
        if typ is int or typ == "int":
            return int(value)
        if typ is float or typ == "float":
            return float(value)
    except ValueError:
        raise ValidationError(f"{where}: cannot parse {value!r} as {typ}") from None
    return str(value)


def parse_config(text, environ=None):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from None
    known = {f.name: f for f in fields(PipelineConfig)}
    sections = {}
    for name in parser.sections():
        if name not in known:
            raise ValidationError(f"unknown config section [{name}]")
        section_cls = known[name].default_factory
        allowed = {f.name: f.type for f in fields(section_cls)}
        values = {}
        for key, raw in parser.items(name):
            if key not in allowed:
                raise ValidationError(f"unknown key {key!r} in section [{name}]")
            values[key] = _coerce(raw, allowed[key], f"[{name}] {key}")
        sections[name] = section_cls(**values)
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV):
        seed = _coerce(environ[SEED_ENV], int, SEED_ENV)
        sections["pipeline"] = PipelineSection(seed=seed)
    return PipelineConfig(**sections)


def load_config(path, environ=None):
    with open(path) as fh:
        return parse_config(fh.read(), environ)


def serialize_config(cfg, include_paths=True):
    """Canonical text: every section and key, in declaration order."""
    out = io.StringIO()
    first = True
    for f in fields(PipelineConfig):
        if f.name == "paths" and not include_paths:
            continue
        if not first:
            out.write("\n")
        first = False
        out.write(f"[{f.name}]\n")
        section = getattr(cfg, f.name)
        for sf in fields(section):
            out.write(f"{sf.name} = {getattr(section, sf.name)}\n")
    return out.getvalue()


def config_hash(cfg):
    """SHA-256 of the canonical form without the [paths] section."""
    return hashlib.sha256(serialize_config(cfg, include_paths=False).encode()).hexdigest()


def demo_config(out_dir="gesturekit_out", seed=0):
    """Small settings that run the full pipeline on one 80-frame window in seconds."""
    cfg = PipelineConfig(paths=PathsSection(out_dir=out_dir), pipeline=PipelineSection(seed=seed))
    return cfg.replace(rvq={"codes": 32, "epochs": 8, "batch_size": 32})

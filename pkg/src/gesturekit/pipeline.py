"""End-to-end demo: window -> tokenize -> corrupt -> decode -> warp -> metrics.

Every numeric output is a deterministic function of the configuration,
so two runs with the same seed write byte-identical reports.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import io as gio
from . import metrics as M
from . import plotting
from .config import config_hash, serialize_config
from .errors import StageError, ValidationError
from .generator import (
    CorruptionPolicy,
    FrequencyPredictor,
    NearestEmbeddingPredictor,
    OraclePredictor,
    ResidualOraclePredictor,
    TokenSequence,
    UniformPredictor,
    corrupt_tokens,
    cross_entropy_masked,
    decode_steps,
    mask_schedule,
    residual_decode,
)
from .heatmap import HeatmapConfig, render_skeleton_heatmaps
from .rvq import TrainConfig, rvq_decode, rvq_encode, rvq_losses, train_codebooks
from .synth import SyntheticSpec, synth_generate
from .tps import WarpConfig, multi_tps_flow, warp_image
from .types import FeatureSequence, ImageGrid, flatten_frames, slice_windows, unflatten_frames

log = logging.getLogger(__name__)

STREAMS = ("face", "body")


@contextmanager
def stage(name):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _seed(base, offset):
    return np.random.SeedSequence([base, offset])


def _source_image(seq_frame, edges, canvas):
    """Textured RGB stand-in for the source video frame."""
    H, W = canvas
    ys, xs = np.mgrid[0:H, 0:W]
    checker = (((xs // 16) + (ys // 16)) % 2).astype(np.float64)
    hm = render_skeleton_heatmaps(seq_frame, edges, HeatmapConfig(sigma=2.5, resolutions=(canvas,)), canvas)[0]
    r = 0.25 + 0.15 * checker
    g = 0.2 + 0.1 * xs / W
    b = 0.3 + 0.1 * ys / H
    img = np.stack([r, g, b], axis=-1)
    img = img * (1 - hm[..., None]) + np.array([1.0, 0.85, 0.6]) * hm[..., None]
    return ImageGrid(np.clip(img, 0, 1))


def _build_predictor(kind, truth_base, training_bases, vocab):
    if kind == "oracle":
        return OraclePredictor(truth_base, vocab)
    if kind == "uniform":
        return UniformPredictor(vocab)
    return FrequencyPredictor(training_bases, vocab)


def _load_inputs(cfg):
    paths = cfg.paths
    spec = SyntheticSpec(cfg.synth.kind, cfg.synth.frames, cfg.seed, cfg.synth.fps, cfg.canvas)
    if paths.keypoints:
        seq = gio.load_keypoints(paths.keypoints, fps=cfg.synth.fps, canvas=cfg.canvas)
        speech = gio.load_features(paths.speech) if paths.speech else None
        return seq, speech
    seq, speech, _ = synth_generate(spec)
    return seq, speech


def run_pipeline(cfg, out_dir=None):
    """Run every stage and write artifacts; returns the :class:`MetricReport`."""
    out = Path(out_dir or cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    seed = cfg.seed
    artifacts = []

    def record(path):
        artifacts.append(Path(path))

    with stage("input"):
        seq, speech = _load_inputs(cfg)

    with stage("window"):
        windows = slice_windows(seq, cfg.window.length, cfg.window.stride)
        if not windows:
            raise ValidationError(f"sequence of {len(seq)} frames is shorter than window length {cfg.window.length}")
        window = windows[0]
        T = len(window)
        speech_win = FeatureSequence(speech.rows[:T], kind="speech") if speech is not None and len(speech) >= T else None

    streams = {}
    with stage("rvq"):
        for s_idx, name in enumerate(STREAMS):
            per_window = [flatten_frames(w, normalize=True)[s_idx] for w in windows]
            dim = per_window[0].D
            if cfg.rvq.dim and cfg.rvq.dim != dim:
                raise ValidationError(f"rvq.dim={cfg.rvq.dim} but {name} features are {dim}-dimensional (no latent encoder)")
            tcfg = TrainConfig(
                layers=cfg.rvq.layers,
                codes=cfg.rvq.codes,
                epochs=cfg.rvq.epochs,
                batch_size=cfg.rvq.batch_size,
                seed=int(_seed(seed, 10 + s_idx).generate_state(1)[0]),
            )
            stack = train_codebooks(per_window, tcfg)
            encoded = [rvq_encode(w, stack) for w in per_window]
            recon, commit, _ = rvq_losses(per_window[0], encoded[0])
            streams[name] = {"stack": stack, "features": per_window[0], "encoded": encoded, "recon": recon, "commit": commit}

    policy = CorruptionPolicy(ratio_low=cfg.decode.ratio_low, ratio_high=cfg.decode.ratio_high)
    with stage("decode"):
        for s_idx, name in enumerate(STREAMS):
            st = streams[name]
            vocab = cfg.rvq.codes
            truth = TokenSequence(st["encoded"][0].tokens, vocab)
            bases = [e.tokens[:, 0] for e in st["encoded"]]
            predictor = _build_predictor(cfg.decode.predictor, truth.base, bases, vocab)
            corrupted, positions = corrupt_tokens(truth, policy, _seed(seed, 20 + s_idx))
            st["l_mask"] = cross_entropy_masked(predictor.predict(corrupted.base), truth, positions)
            cond = speech_win.rows if speech_win is not None else None
            states = list(decode_steps(predictor, T, cfg.decode.steps, cond, int(truth.base[0])))
            st["trace"] = [T - 1] + [len(s.masked) for s in states]
            base = states[-1].tokens
            embeddings = [cb.vectors for cb in st["stack"].layers[:-1]]
            if cfg.decode.predictor == "oracle":
                res_pred = ResidualOraclePredictor(truth.tokens, vocab)
            else:
                res_pred = NearestEmbeddingPredictor([e.tokens for e in st["encoded"]], embeddings, vocab)
            full = residual_decode(base, [res_pred] * (cfg.rvq.layers - 1), embeddings, n_layers=cfg.rvq.layers)
            st["tokens"] = TokenSequence(full, vocab)
            st["decoded"] = rvq_decode(full, st["stack"])
            path = out / f"tokens_{name}.json"
            gio.save_tokens(st["tokens"], path)
            record(path)

    with stage("reconstruct"):
        face = FeatureSequence(streams["face"]["decoded"].rows, kind="gesture", normalized=True)
        body = FeatureSequence(streams["body"]["decoded"].rows, kind="gesture", normalized=True)
        decoded = unflatten_frames(face, body, fps=window.fps, layout=window.layout, canvas=window.canvas)

    frames = sorted({int(round(x)) for x in np.linspace(0, T - 1, min(cfg.tps.frames, T))})
    warp_cfg = WarpConfig(cfg.tps.transforms, cfg.tps.points_per_transform, cfg.canvas)
    edges = window.layout.edges
    with stage("warp"):
        src_img = _source_image(window.points[0], edges, cfg.canvas)
        path = out / "source.png"
        gio.save_image(src_img, path, {"config_hash": chash})
        record(path)
        warped = {}
        for t in frames:
            flow = multi_tps_flow(decoded.points[t], window.points[0], warp_cfg)
            warped[t] = warp_image(src_img, flow)
            fpath = out / f"flow_{t:03d}.bin"
            gio.save_flow(flow, fpath)
            ipath = out / f"warp_{t:03d}.png"
            gio.save_image(warped[t], ipath, {"config_hash": chash})
            record(fpath)
            record(ipath)

    with stage("heatmap"):
        hcfg = HeatmapConfig(
            sigma=cfg.heatmap.sigma or None, resolutions=tuple((s, s) for s in cfg.heatmap_sizes)
        )
        heatmaps = {}
        for t in frames:
            maps = render_skeleton_heatmaps(decoded.points[t], edges, hcfg, cfg.canvas)
            heatmaps[t] = maps
            for (h, w), hm in zip(hcfg.resolutions, maps):
                ipath = out / f"heatmap_{t:03d}_{h}.png"
                gio.save_image(hm, ipath, {"config_hash": chash})
                gpath = out / f"heatmap_{t:03d}_{h}.bin"
                gio.save_grid(hm, gpath)
                record(ipath)
                record(gpath)

    with stage("metrics"):
        gen_rows = decoded.points.reshape(T, -1)
        ref_rows = window.points.reshape(T, -1)
        clip_len = max(2, T // 8)
        clips = [decoded.points[k : k + clip_len] for k in range(0, T - clip_len + 1, clip_len)]
        motion = M.motion_beats(decoded)
        values = {
            "fgd": M.fgd(gen_rows, ref_rows),
            "pcm": M.pcm(decoded, window, cfg.metrics.delta),
            "mse": M.mse(decoded, window),
            "velocity_penalty": M.velocity_penalty(decoded),
            "acceleration_penalty": M.acceleration_penalty(decoded),
            "motion_beat_count": len(motion),
        }
        if len(clips) >= 2:
            values["div_l1"] = M.diversity(clips, "l1")
            values["div_l2"] = M.diversity(clips, "l2")
        audio = M.audio_beats_from_onsets(speech_win.rows[:, 0], window.fps) if speech_win is not None else []
        if audio:
            values["bas"] = M.beat_align_score(audio, motion, cfg.metrics.sigma_b)
            values["bc"] = M.beat_consistency(audio, motion, cfg.metrics.sigma_b)
        for name in STREAMS:
            st = streams[name]
            values[f"{name}_rvq_reconstruction"] = st["recon"]
            values[f"{name}_rvq_commitment"] = st["commit"]
            values[f"{name}_l_mask"] = st["l_mask"]
            values[f"{name}_token_accuracy"] = float(np.mean(st["tokens"].tokens == st["encoded"][0].tokens))
        report = M.MetricReport(
            values,
            {
                "config_hash": chash,
                "seed": seed,
                "frames": T,
                "windows": len(windows),
                "decode_trace": {n: streams[n]["trace"] for n in STREAMS},
                "schedule": mask_schedule(T - 1, cfg.decode.steps),
                "warped_frames": frames,
            },
        )
        rpath = out / "report.json"
        rpath.write_text(report.to_json())
        cpath = out / "report.csv"
        with open(cpath, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            for k in sorted(values):
                writer.writerow([k, repr(float(values[k]))])
        (out / "config.ini").write_text(serialize_config(cfg))
        record(rpath)
        record(cpath)

    with stage("figures"):
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        times = np.arange(T) / window.fps
        t_show = frames[-1]
        plotting.pipeline_summary(
            fig_dir / "summary.png",
            {
                "times": times,
                "speed_input": M.speed_curve(window),
                "speed_decoded": M.speed_curve(decoded),
                "audio_beats": audio,
                "motion_beats": motion,
                "schedule": mask_schedule(T - 1, cfg.decode.steps),
                "traces": {n: streams[n]["trace"] for n in STREAMS},
                "heatmap": heatmaps[t_show][-1],
                "warped": warped[t_show].pixels,
            },
        )
        plotting.metric_bars(fig_dir / "metrics.png", values)
        record(fig_dir / "summary.png")
        record(fig_dir / "metrics.png")

    manifest = {
        "config_hash": chash,
        "artifacts": {
            str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(artifacts)
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return report

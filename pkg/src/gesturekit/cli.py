"""Command-line entry point. Every subcommand prints a JSON document on stdout.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import alignment as A
from . import io as gio
from . import metrics as M
from .config import config_hash, demo_config, load_config, parse_int_list, parse_size
from .errors import NumericalError, StageError, ValidationError
from .generator import (
    CorruptionPolicy,
    FrequencyPredictor,
    OraclePredictor,
    TokenSequence,
    UniformPredictor,
    corrupt_tokens,
    decode_steps,
    mask_schedule,
)
from .heatmap import HeatmapConfig, render_skeleton_heatmaps
from .pipeline import run_pipeline
from .rvq import TrainConfig, prefix_errors, rvq_decode, rvq_encode, rvq_losses, train_codebooks
from .synth import KINDS, SyntheticSpec, synth_generate
from .tps import TPSParams, load_pairs, tps_fit, tps_flow_grid, warp_image

log = logging.getLogger("gesturekit")


def _emit(doc):
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None


def _matrix(path):
    return gio.load_features(path, kind="matrix").rows


def _feature_files(spec):
    """A directory (all .bin/.csv inside, sorted) or a comma-separated list of files."""
    p = Path(spec)
    if p.is_dir():
        files = sorted(f for f in p.iterdir() if f.suffix.lower() in (".bin", ".csv"))
    else:
        files = [Path(s) for s in str(spec).split(",") if s]
    if not files:
        raise ValidationError(f"no feature files found in {spec}")
    return [gio.load_features(f) for f in files]


# -- align --------------------------------------------------------------------


def cmd_align_loss(args):
    S = A.SimilarityMatrix(_matrix(args.sim), args.temperature)
    negatives = _matrix(args.negatives) if args.negatives else None
    return {"loss": A.infonce_loss(S, negatives), "N": S.N, "temperature": S.temperature}


def cmd_align_negatives(args):
    speech = gio.load_features(args.features)
    transcript = gio.load_transcript(args.transcript)
    rng = np.random.default_rng(args.seed)
    perm = A.random_nonidentity_permutation(len(transcript), rng)
    neg = A.build_chronological_negative(speech, transcript, perm, args.fps)
    if args.out:
        gio.save_features(neg, args.out)
    return {"permutation": list(perm), "frames": neg.T, "dim": neg.D, "out": args.out}


def cmd_align_retrieval(args):
    speech = _matrix(args.speech_emb)
    gesture = _matrix(args.gesture_emb)
    S = A.cosine_similarity_matrix(list(speech), list(gesture))
    ks = parse_int_list(args.k)
    recall = A.retrieval_recall(S, ks)
    return {"recall": {str(k): v for k, v in recall.items()}, "N": S.N}


# -- rvq ----------------------------------------------------------------------


def cmd_rvq_train(args):
    data = _feature_files(args.features)
    dim = data[0].D
    if args.dim and args.dim != dim:
        raise ValidationError(f"--dim {args.dim} does not match feature width {dim}")
    cfg = TrainConfig(layers=args.layers, codes=args.codes, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    stack = train_codebooks(data, cfg)
    gio.save_stack(stack, args.out)
    x = np.concatenate([d.rows for d in data])
    errs = prefix_errors(x, stack)
    return {"layers": len(stack), "codes": args.codes, "dim": stack.dim, "prefix_mse": [float(e) for e in errs], "out": args.out}


def cmd_rvq_encode(args):
    stack = gio.load_stack(args.stack)
    x = gio.load_features(args.features)
    res = rvq_encode(x, stack)
    recon, commit, total = rvq_losses(x, res)
    tokens = TokenSequence(res.tokens, stack.layers[0].size)
    gio.save_tokens(tokens, args.out)
    return {"frames": x.T, "layers": len(stack), "reconstruction": recon, "commitment": commit, "total": total, "out": args.out}


def cmd_rvq_decode(args):
    stack = gio.load_stack(args.stack)
    tokens = gio.load_tokens(args.tokens)
    out = rvq_decode(tokens.tokens, stack, args.layers)
    gio.save_features(out, args.out)
    return {"frames": out.T, "dim": out.D, "out": args.out}


# -- decode -------------------------------------------------------------------


def cmd_decode_run(args):
    truth = gio.load_tokens(args.tokens)
    V = truth.vocab_size
    if args.predictor == "oracle":
        predictor = OraclePredictor(truth.base, V)
    elif args.predictor == "uniform":
        predictor = UniformPredictor(V)
    else:
        predictor = FrequencyPredictor([truth.base], V)
    source = int(truth.base[0]) if args.source is None else args.source
    states = list(decode_steps(predictor, truth.T, args.steps, None, source))
    out = TokenSequence(states[-1].tokens, V)
    if args.out:
        gio.save_tokens(out, args.out)
    return {
        "trace": [truth.T - 1] + [int(len(s.masked)) for s in states],
        "schedule": mask_schedule(truth.T - 1, args.steps),
        "tokens": out.base.tolist(),
        "accuracy": float(np.mean(out.base == truth.base)),
        "seed": args.seed,
    }


def cmd_decode_corrupt(args):
    tokens = gio.load_tokens(args.tokens)
    policy = CorruptionPolicy(ratio_low=args.ratio_low, ratio_high=args.ratio_high)
    out, positions = corrupt_tokens(tokens, policy, args.seed)
    if args.out:
        gio.save_tokens(out, args.out)
    return {"positions": positions.tolist(), "tokens": out.base.tolist(), "sentinel": out.sentinel}


# -- tps ----------------------------------------------------------------------


def cmd_tps_fit(args):
    d, s = load_pairs(args.pairs)
    params = tps_fit(d, s, args.regularization)
    gio.write_json(params.to_dict(), args.out)
    return {"points": len(d), "residual": params.residual, "out": args.out}


def cmd_tps_flow(args):
    params = TPSParams.from_dict(_read_json(args.params))
    H, W = parse_size(args.size)
    flow = tps_flow_grid(params, H, W)
    gio.save_flow(flow, args.out)
    mag = np.linalg.norm(flow.displacement, axis=-1)
    return {"height": H, "width": W, "max_displacement": float(mag.max()), "out": args.out}


def cmd_tps_warp(args):
    image = gio.load_image(args.image)
    flow = gio.load_flow(args.flow)
    out = warp_image(image, flow)
    gio.save_image(out, args.out)
    return {"height": out.height, "width": out.width, "out": args.out}


# -- heatmap ------------------------------------------------------------------


def cmd_heatmap_render(args):
    canvas = parse_size(args.canvas)
    seq = gio.load_keypoints(args.keypoints, canvas=canvas)
    if not 0 <= args.frame < len(seq):
        raise ValidationError(f"frame {args.frame} outside 0..{len(seq) - 1}")
    edges = [tuple(e) for e in _read_json(args.edges)["edges"]] if args.edges else seq.layout.edges
    sizes = parse_int_list(args.sizes)
    cfg = HeatmapConfig(sigma=args.sigma, resolutions=tuple((s, s) for s in sizes))
    maps = render_skeleton_heatmaps(seq.points[args.frame], edges, cfg, canvas)
    written = []
    for s, hm in zip(sizes, maps):
        png = f"{args.out_prefix}{s}.png"
        raw = f"{args.out_prefix}{s}.bin"
        gio.save_image(hm, png)
        gio.save_grid(hm, raw)
        written += [png, raw]
    return {"sizes": sizes, "edges": len(edges), "files": written}


# -- metrics ------------------------------------------------------------------


def _metric_inputs(spec):
    return [gio.load_features(p).rows for p in str(spec).split(",") if p]


def cmd_metrics(args):
    gen = _metric_inputs(args.gen)
    ref = _metric_inputs(args.ref) if args.ref else []
    name = args.metric
    if name == "fgd":
        value = M.fgd(np.concatenate(gen), np.concatenate(ref))
    elif name == "div":
        return {"div-l1": M.diversity(gen, "l1"), "div-l2": M.diversity(gen, "l2")}
    elif name == "bas":
        audio = np.concatenate(ref).reshape(-1).tolist()
        motion = np.concatenate(gen).reshape(-1).tolist()
        return {"bas": M.beat_align_score(audio, motion, args.sigma_b), "bc": M.beat_consistency(audio, motion, args.sigma_b)}
    elif name == "pcm":
        if args.delta is None:
            raise ValidationError("pcm needs --delta")
        value = M.pcm(np.concatenate(gen), np.concatenate(ref), args.delta)
    else:
        value = M.mse(np.concatenate(gen), np.concatenate(ref))
    return {name: value}


# -- synth / pipeline -----------------------------------------------------------


def cmd_synth(args):
    canvas = parse_size(args.canvas)
    spec = SyntheticSpec(args.kind, args.frames, args.seed, args.fps, canvas)
    seq, speech, transcript = synth_generate(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gio.save_keypoints(seq, out / "keypoints.jsonl")
    gio.save_features(speech, out / "speech.bin")
    gio.save_transcript(transcript, out / "transcript.json")
    return {
        "frames": len(seq),
        "segments": len(transcript),
        "motion_beats": M.motion_beats(seq),
        "files": [str(out / n) for n in ("keypoints.jsonl", "speech.bin", "transcript.json")],
    }


def cmd_pipeline(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = demo_config()
    if args.seed is not None:
        cfg = cfg.replace(pipeline={"seed": args.seed})
    if args.predictor:
        cfg = cfg.replace(decode={"predictor": args.predictor})
    out_dir = args.out_dir or cfg.paths.out_dir
    report = run_pipeline(cfg, out_dir)
    return {"report": str(Path(out_dir) / "report.json"), "config_hash": config_hash(cfg), "metrics": report.values}


# -- parser -------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="gesturekit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def group(name, help_):
        p = sub.add_parser(name, help=help_)
        return p.add_subparsers(dest="action", required=True)

    al = group("align", "contrastive alignment utilities")
    p = al.add_parser("loss", help="symmetric InfoNCE of a similarity matrix")
    p.add_argument("--sim", required=True)
    p.add_argument("--negatives")
    p.add_argument("--temperature", type=float, default=A.DEFAULT_TEMPERATURE)
    p.set_defaults(func=cmd_align_loss)
    p = al.add_parser("negatives", help="segment-shuffled speech features")
    p.add_argument("--features", required=True)
    p.add_argument("--transcript", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_align_negatives)
    p = al.add_parser("retrieval", help="recall@k from paired embeddings")
    p.add_argument("--speech-emb", required=True)
    p.add_argument("--gesture-emb", required=True)
    p.add_argument("--k", default="1,2,3,5,10")
    p.set_defaults(func=cmd_align_retrieval)

    rv = group("rvq", "residual vector quantization")
    p = rv.add_parser("train", help="train a codebook stack")
    p.add_argument("--features", required=True, help="directory or comma-separated feature files")
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--codes", type=int, default=1024)
    p.add_argument("--dim", type=int, default=0, help="expected feature width (0: any)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rvq_train)
    p = rv.add_parser("encode", help="features -> token JSON")
    p.add_argument("--stack", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rvq_encode)
    p = rv.add_parser("decode", help="token JSON -> features")
    p.add_argument("--stack", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--layers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rvq_decode)

    dc = group("decode", "masked token decoding")
    p = dc.add_parser("run", help="iterative confidence decoding")
    p.add_argument("--tokens", required=True)
    p.add_argument("--predictor", choices=("toy", "oracle", "uniform"), default="toy")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--source", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decode_run)
    p = dc.add_parser("corrupt", help="BERT-style corruption of the base layer")
    p.add_argument("--tokens", required=True)
    p.add_argument("--ratio-low", type=float, default=0.5)
    p.add_argument("--ratio-high", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decode_corrupt)

    tp = group("tps", "thin-plate spline warping")
    p = tp.add_parser("fit", help="fit a spline to point pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--regularization", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tps_fit)
    p = tp.add_parser("flow", help="dense backward flow from spline parameters")
    p.add_argument("--params", required=True)
    p.add_argument("--size", default="256x256")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tps_flow)
    p = tp.add_parser("warp", help="warp a PNG with a flow file")
    p.add_argument("--image", required=True)
    p.add_argument("--flow", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tps_warp)

    hm = group("heatmap", "edge heatmaps")
    p = hm.add_parser("render", help="render one frame at several resolutions")
    p.add_argument("--keypoints", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--edges")
    p.add_argument("--sigma", type=float)
    p.add_argument("--sizes", default="32,64,128")
    p.add_argument("--canvas", default="256x256")
    p.add_argument("--out-prefix", default="hm_")
    p.set_defaults(func=cmd_heatmap_render)

    p = sub.add_parser("metrics", help="evaluation metrics")
    p.add_argument("metric", choices=("fgd", "div", "bas", "pcm", "mse"))
    p.add_argument("--gen", required=True, help="comma-separated feature files")
    p.add_argument("--ref")
    p.add_argument("--delta", type=float)
    p.add_argument("--sigma-b", type=float, default=M.DEFAULT_SIGMA_B)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="write a synthetic keypoint/speech/transcript triple")
    p.add_argument("--kind", choices=KINDS, default="circle-motion")
    p.add_argument("--frames", type=int, default=80)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--canvas", default="256x256")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="synth_out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="run the end-to-end demo")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config")
    src.add_argument("--demo", action="store_true", help="built-in small configuration (default)")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--predictor", choices=("toy", "oracle", "uniform"))
    p.set_defaults(func=cmd_pipeline)
    return parser


def _exit_code(exc):
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, NumericalError):
        return 2
    return 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        _emit(args.func(args))
    except (ValidationError, NumericalError, StageError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return _exit_code(exc)
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

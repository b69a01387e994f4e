"""Residual vector quantization over per-frame feature rows.

Each layer quantizes what the previous layers left over; the
reconstruction is the sum of the selected code vectors. Codebooks are
learned with mini-batch k-means (EMA center updates, dead-code resets)
followed by a few exact Lloyd passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .types import FeatureSequence

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 0.5

# elements per chunk of the (rows x codes x dim) difference tensor
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True, eq=False)
class Codebook:
    vectors: np.ndarray
    usage_counts: np.ndarray = None

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"codebook must be a non-empty C x d matrix, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("codebook contains non-finite vectors")
        v.setflags(write=False)
        if self.usage_counts is None:
            u = np.zeros(v.shape[0], dtype=np.int64)
        else:
            u = np.array(self.usage_counts, dtype=np.int64)
            if u.shape != (v.shape[0],) or np.any(u < 0):
                raise ValidationError("usage counts must be one non-negative integer per code")
        u.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "usage_counts", u)

    @property
    def size(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


@dataclass(frozen=True)
class CodebookStack:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValidationError("a codebook stack needs at least one layer")
        dims = {cb.dim for cb in layers}
        if len(dims) != 1:
            raise ValidationError(f"all layers must share one dimension, got {sorted(dims)}")
        object.__setattr__(self, "layers", layers)

    @property
    def dim(self):
        return self.layers[0].dim

    def __len__(self):
        return len(self.layers)


@dataclass(frozen=True, eq=False)
class QuantizationResult:
    tokens: np.ndarray  # (T, R)
    quantized: np.ndarray  # (T, d)
    residuals: np.ndarray  # (R, T, d): input to each layer
    codes: np.ndarray  # (R, T, d): code vector chosen at each layer


def _rows(x):
    if isinstance(x, FeatureSequence):
        return x.rows
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    return x


def _exact_argmin(x, codes, cand):
    """Exact squared distances over the (row, code) candidate pairs only."""
    rows, cols = np.nonzero(cand)
    d2 = np.zeros(rows.size)
    step = max(1, _CHUNK_ELEMS // max(1, codes.shape[1]))
    for i in range(0, rows.size, step):
        xs, cs = x[rows[i : i + step]], codes[cols[i : i + step]]
        acc = d2[i : i + step]
        # fixed left-to-right accumulation so near-ties resolve reproducibly
        for k in range(codes.shape[1]):
            diff = xs[:, k] - cs[:, k]
            acc += diff * diff
    # pairs are row-major with ascending columns, so lexsort keeps the lowest code on ties
    order = np.lexsort((cols, d2, rows))
    first = np.ones(order.size, dtype=bool)
    first[1:] = rows[order[1:]] != rows[order[:-1]]
    return cols[order[first]]


def nearest_codes(x, codes):
    """Index of the nearest code (squared Euclidean) for every row; ties pick the lowest index.

    The reference distance is ``sum_k (x_k - c_k)^2`` accumulated over k in
    order. Duplicate codes collapse onto their first occurrence; candidates
    come from the expanded form |x|^2 - 2 x.c + |c|^2, and every code within
    its rounding bound of the minimum is re-scored with the reference
    distance, so the result equals a brute-force search.
    """
    x = np.asarray(x, dtype=np.float64)
    codes = np.asarray(codes, dtype=np.float64)
    n, d = x.shape
    _, first_idx = np.unique(codes, axis=0, return_index=True)
    keep = np.sort(first_idx)
    uniq = codes[keep]
    C = uniq.shape[0]
    out = np.empty(n, dtype=np.int64)
    cc = np.sum(uniq * uniq, axis=1)
    eps = np.finfo(np.float64).eps
    step = max(1, _CHUNK_ELEMS // max(1, C))
    for i in range(0, n, step):
        xb = x[i : i + step]
        xx = np.sum(xb * xb, axis=1)
        approx = xx[:, None] - 2.0 * (xb @ uniq.T) + cc[None, :]
        tol = 8.0 * (d + 4) * eps * (xx[:, None] + cc[None, :])
        hi = np.min(approx + tol, axis=1)
        cand = approx - tol <= hi[:, None]
        res = np.argmax(cand, axis=1)
        amb = np.flatnonzero(cand.sum(axis=1) > 1)
        if amb.size:
            res[amb] = _exact_argmin(xb[amb], uniq, cand[amb])
        out[i : i + step] = keep[res]
    return out


def rvq_encode(x, stack):
    rows = _rows(x)
    if rows.shape[1] != stack.dim:
        raise ValidationError(f"feature dim {rows.shape[1]} does not match codebook dim {stack.dim}")
    T, R = rows.shape[0], len(stack)
    tokens = np.empty((T, R), dtype=np.int64)
    residuals = np.empty((R, T, stack.dim))
    codes = np.empty_like(residuals)
    quantized = np.zeros_like(rows)
    residual = rows.copy()
    for r, cb in enumerate(stack.layers):
        residuals[r] = residual
        idx = nearest_codes(residual, cb.vectors)
        tokens[:, r] = idx
        codes[r] = cb.vectors[idx]
        quantized = quantized + codes[r]
        residual = residual - codes[r]
    return QuantizationResult(tokens, quantized, residuals, codes)


def rvq_decode(tokens, stack, n_layers=None):
    """Sum of the selected code vectors; ``n_layers`` decodes a prefix only."""
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[:, None]
    R = tokens.shape[1] if n_layers is None else int(n_layers)
    if R > len(stack) or R > tokens.shape[1] or R < 1:
        raise ValidationError(f"cannot decode {R} layers from {tokens.shape[1]} token columns and {len(stack)} codebooks")
    out = np.zeros((tokens.shape[0], stack.dim))
    for r in range(R):
        cb = stack.layers[r]
        col = tokens[:, r]
        if np.any(col < 0) or np.any(col >= cb.size):
            bad = int(np.flatnonzero((col < 0) | (col >= cb.size))[0])
            raise ValidationError(f"token {int(col[bad])} at frame {bad}, layer {r} is outside 0..{cb.size - 1}")
        out = out + cb.vectors[col]
    return FeatureSequence(out, kind="gesture")


def prefix_errors(x, stack):
    """Mean squared reconstruction error when decoding layers 1..r, for r = 1..R."""
    rows = _rows(x)
    res = rvq_encode(rows, stack)
    errs = []
    recon = np.zeros_like(rows)
    for r in range(len(stack)):
        recon = recon + stack.layers[r].vectors[res.tokens[:, r]]
        errs.append(float(np.mean(np.sum((rows - recon) ** 2, axis=1))))
    return errs


def rvq_losses(x, result, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, distill=None):
    """Value-level quantizer objective.

    Returns ``(reconstruction, commitment, total)`` where reconstruction is
    the per-frame squared error averaged over time and commitment sums,
    over layers, the mean squared distance from each layer input to its
    chosen code. ``distill`` (a value from :func:`distill_loss`) is added
    with weight ``beta`` when given.
    """
    rows = _rows(x)
    if rows.shape != result.quantized.shape:
        raise ValidationError(f"input shape {rows.shape} does not match quantized shape {result.quantized.shape}")
    if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(result.quantized))):
        raise ValidationError("non-finite values in quantizer loss inputs")
    recon = float(np.mean(np.sum((rows - result.quantized) ** 2, axis=1)))
    commit = 0.0
    for z, e in zip(result.residuals, result.codes):
        commit += float(np.mean(np.sum((z - e) ** 2, axis=1)))
    total = recon + alpha * commit
    if distill is not None:
        if not np.isfinite(distill):
            raise ValidationError("non-finite distillation loss")
        total += beta * float(distill)
    return recon, commit, total


def distill_loss(result, teacher, projection):
    """Negative time-averaged cosine between projected quantized rows and teacher rows."""
    q = result.quantized if isinstance(result, QuantizationResult) else _rows(result)
    t = _rows(teacher)
    proj = np.asarray(projection, dtype=np.float64)
    if proj.ndim != 2 or proj.shape[0] != q.shape[1] or proj.shape[1] != t.shape[1]:
        raise ValidationError(f"projection must be {q.shape[1]} x {t.shape[1]}, got {proj.shape}")
    if q.shape[0] != t.shape[0]:
        raise ValidationError(f"quantized has {q.shape[0]} frames, teacher has {t.shape[0]}")
    p = q @ proj
    pn = np.linalg.norm(p, axis=1)
    tn = np.linalg.norm(t, axis=1)
    for name, norms in (("projected quantized", pn), ("teacher", tn)):
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ValidationError(f"{name} row at t={int(zero[0])} has zero norm")
    cos = np.sum(p * t, axis=1) / (pn * tn)
    return float(-np.mean(cos))


# -- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    layers: int = 6
    codes: int = 1024
    epochs: int = 10
    batch_size: int = 256
    decay: float = 0.99
    dead_fraction: float = 0.01
    lloyd_iters: int = 25
    seed: int = 0


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = int(rng.choice(n, p=d2 / total))
        else:
            pick = int(rng.integers(n))
        centers[j] = x[pick]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _train_layer(residual, cfg, rng):
    n = residual.shape[0]
    C = cfg.codes
    centers = _kmeans_pp(residual, C, rng)
    ema_count = np.ones(C)
    ema_sum = centers.copy()
    threshold = cfg.dead_fraction * n / C
    for _ in range(cfg.epochs):
        usage = np.zeros(C, dtype=np.int64)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = residual[order[start : start + cfg.batch_size]]
            idx = nearest_codes(batch, centers)
            counts = np.bincount(idx, minlength=C)
            sums = np.zeros_like(centers)
            np.add.at(sums, idx, batch)
            ema_count = cfg.decay * ema_count + (1 - cfg.decay) * counts
            ema_sum = cfg.decay * ema_sum + (1 - cfg.decay) * sums
            centers = ema_sum / ema_count[:, None]
            usage += counts
        dead = np.flatnonzero(usage < threshold)
        if dead.size:
            centers[dead] = residual[rng.choice(n, size=dead.size, replace=n < dead.size)]
            ema_count[dead] = 1.0
            ema_sum[dead] = centers[dead]
    prev = None
    for _ in range(cfg.lloyd_iters):
        idx = nearest_codes(residual, centers)
        if prev is not None and np.array_equal(idx, prev):
            break
        counts = np.bincount(idx, minlength=C)
        sums = np.zeros_like(centers)
        np.add.at(sums, idx, residual)
        used = counts > 0
        centers[used] = sums[used] / counts[used, None]
        prev = idx
    idx = nearest_codes(residual, centers)
    return centers, np.bincount(idx, minlength=C), idx


def train_codebooks(data, config=None, **overrides):
    """Learn an R-layer stack; layer r is fit to the residuals left by layers < r.

    Deterministic for a fixed ``config.seed``.
    """
    cfg = config or TrainConfig()
    if overrides:
        cfg = TrainConfig(**{**cfg.__dict__, **overrides})
    if isinstance(data, (list, tuple)):
        parts = [_rows(d) for d in data]
        if not parts:
            raise ValidationError("no training data")
        x = np.concatenate(parts, axis=0)
    else:
        x = _rows(data)
    if cfg.layers < 1 or cfg.codes < 1 or cfg.batch_size < 1 or cfg.epochs < 0:
        raise ValidationError(f"invalid training configuration {cfg}")
    if x.shape[0] < cfg.codes:
        raise ValidationError(
            f"only {x.shape[0]} training rows for {cfg.codes} codes; use at most {x.shape[0]} codes"
        )
    if not np.all(np.isfinite(x)):
        raise ValidationError("training data contains non-finite values")
    rng = np.random.default_rng(cfg.seed)
    residual = x.copy()
    layers = []
    for _ in range(cfg.layers):
        centers, usage, idx = _train_layer(residual, cfg, rng)
        layers.append(Codebook(centers, usage))
        residual = residual - centers[idx]
    return CodebookStack(tuple(layers))

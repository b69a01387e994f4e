"""Masked token modelling: corruption for training, cosine-scheduled
confidence decoding, residual-layer decoding and cross-entropy objectives.

The neural predictor is abstracted behind :class:`TokenPredictor`; a few
small predictors ship for tests and the demo pipeline.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ValidationError
from .rvq import nearest_codes

DEFAULT_VOCAB = 1024
DEFAULT_STEPS = 5
PROB_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """Token indices of shape ``(T, R)``; the mask sentinel equals ``vocab_size``."""

    tokens: np.ndarray
    vocab_size: int = DEFAULT_VOCAB

    def __post_init__(self):
        t = np.array(self.tokens, dtype=np.int64)
        if t.ndim == 1:
            t = t[:, None]
        if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] < 1:
            raise ValidationError(f"tokens must be a non-empty (T, R) array, got shape {t.shape}")
        if self.vocab_size < 1:
            raise ValidationError("vocab_size must be positive")
        if np.any(t < 0) or np.any(t > self.vocab_size):
            raise ValidationError(f"tokens must lie in 0..{self.vocab_size} (sentinel included)")
        t.setflags(write=False)
        object.__setattr__(self, "tokens", t)

    @property
    def sentinel(self):
        return self.vocab_size

    @property
    def base(self):
        return self.tokens[:, 0]

    @property
    def T(self):
        return self.tokens.shape[0]

    @property
    def layers(self):
        return self.tokens.shape[1]

    def __len__(self):
        return self.T

    def __eq__(self, other):
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return self.vocab_size == other.vocab_size and np.array_equal(self.tokens, other.tokens)

    __hash__ = None


@dataclass(frozen=True)
class CorruptionPolicy:
    p_mask: float = 0.8
    p_random: float = 0.1
    p_keep: float = 0.1
    ratio_low: float = 0.5
    ratio_high: float = 1.0

    def __post_init__(self):
        probs = (self.p_mask, self.p_random, self.p_keep)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-9:
            raise ValidationError(f"mask/random/keep probabilities must be non-negative and sum to 1, got {probs}")
        if not 0 <= self.ratio_low <= self.ratio_high <= 1:
            raise ValidationError(f"need 0 <= ratio_low <= ratio_high <= 1, got {self.ratio_low}, {self.ratio_high}")


class TokenPredictor(Protocol):
    vocab_size: int

    def predict(self, tokens, conditioning=None):
        """Return a (T, vocab_size) array of probability rows for a partially masked 1-D token array."""


class ResidualPredictor(Protocol):
    vocab_size: int

    def predict(self, summed_embeddings, layer, conditioning=None):
        """Return (T, vocab_size) probabilities for ``layer`` given the summed embeddings of lower layers."""


@dataclass
class DecodeState:
    iteration: int
    total: int
    tokens: np.ndarray
    masked: np.ndarray  # positions still masked after this iteration
    confidence: np.ndarray  # per-position confidence; inf for fixed positions


# -- schedule and corruption ---------------------------------------------------


def cosine_mask_count(T, l, L):
    """Positions left masked after iteration ``l`` of ``L``.

    ``floor(T * cos(pi/2 * l/L))``, forced strictly below the previous
    iteration's count while that count is positive.
    """
    if T < 0 or L < 1 or not 0 <= l <= L:
        raise ValidationError(f"need T >= 0, L >= 1 and 0 <= l <= L, got T={T}, l={l}, L={L}")
    count = T
    for step in range(1, l + 1):
        raw = math.floor(T * math.cos(math.pi / 2 * step / L))
        count = min(max(raw, 0), count - 1) if count > 0 else 0
    return count if l < L else 0


def mask_schedule(T, L):
    return [cosine_mask_count(T, l, L) for l in range(L + 1)]


def sample_mask_ratio(rng_seed, policy=None):
    policy = policy or CorruptionPolicy()
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if policy.ratio_low == policy.ratio_high:
        return float(policy.ratio_low)
    return float(rng.uniform(policy.ratio_low, policy.ratio_high))


def corrupt_tokens(tokens, policy=None, rng_seed=0, ratio=None):
    """BERT-style corruption of the base layer.

    Selects ``ceil(ratio * T)`` positions without replacement (ratio drawn
    from the policy unless given) and replaces each by the sentinel, a
    uniformly random token, or leaves it, with the policy's probabilities.
    Returns ``(corrupted, mask_positions)``.
    """
    policy = policy or CorruptionPolicy()
    rng = np.random.default_rng(rng_seed)
    if ratio is None:
        ratio = sample_mask_ratio(rng, policy)
    base = tokens.base.copy()
    T = base.shape[0]
    n = min(T, math.ceil(ratio * T))
    positions = np.sort(rng.choice(T, size=n, replace=False)) if n else np.empty(0, dtype=np.int64)
    u = rng.random(n)
    randoms = rng.integers(0, tokens.vocab_size, size=n)
    to_mask = u < policy.p_mask
    to_random = (~to_mask) & (u < policy.p_mask + policy.p_random)
    base[positions[to_mask]] = tokens.sentinel
    base[positions[to_random]] = randoms[to_random]
    return TokenSequence(base, tokens.vocab_size), positions


# -- decoding -----------------------------------------------------------------


def _check_probs(probs, T, V):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (T, V):
        raise ValidationError(f"predictor returned shape {probs.shape}, expected ({T}, {V})")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise ValidationError("predictor returned negative or non-finite probabilities")
    return probs


def decode_steps(predictor, T, L=DEFAULT_STEPS, conditioning=None, source_token=0):
    """Yield a :class:`DecodeState` after every iteration of confidence decoding.

    Position 0 holds ``source_token`` throughout. At each iteration every
    masked position takes its argmax token; the lowest-confidence of those
    are masked again so that ``cosine_mask_count(T - 1, l, L)`` remain.
    """
    if T < 2:
        raise ValidationError("decoding needs T >= 2 (one source frame plus at least one generated)")
    V = predictor.vocab_size
    if not 0 <= source_token < V:
        raise ValidationError(f"source token {source_token} outside 0..{V - 1}")
    tokens = np.full(T, V, dtype=np.int64)
    tokens[0] = source_token
    confidence = np.full(T, np.inf)
    masked = np.arange(1, T)
    for l in range(1, L + 1):
        probs = _check_probs(predictor.predict(tokens.copy(), conditioning), T, V)
        picks = np.argmax(probs[masked], axis=1)
        tokens[masked] = picks
        confidence[masked] = probs[masked, picks]
        keep_masked = cosine_mask_count(T - 1, l, L)
        # stable sort: among equal confidences the earlier position is re-masked first
        order = np.argsort(confidence[masked], kind="stable")
        remask = np.sort(masked[order[:keep_masked]])
        tokens[remask] = V
        confidence[remask] = 0.0
        settled = np.setdiff1d(masked, remask)
        confidence[settled] = np.inf
        masked = remask
        yield DecodeState(l, L, tokens.copy(), masked.copy(), confidence.copy())


def iterative_decode(predictor, T, L=DEFAULT_STEPS, conditioning=None, source_token=0):
    state = None
    for state in decode_steps(predictor, T, L, conditioning, source_token):
        pass
    return TokenSequence(state.tokens, predictor.vocab_size)


def windowed_decode(predictor, n_windows, T, L=DEFAULT_STEPS, conditioning=None, source_token=0):
    """Chain ``n_windows`` decodes; the last token of each window seeds the next.

    ``conditioning`` is None or a list with one entry per window. Returns
    the concatenated base tokens, sharing each seed frame between windows,
    so the length is ``n_windows * (T - 1) + 1``.
    """
    if n_windows < 1:
        raise ValidationError("need at least one window")
    if conditioning is not None and len(conditioning) != n_windows:
        raise ValidationError(f"got {len(conditioning)} conditioning blocks for {n_windows} windows")
    parts = []
    seed = source_token
    for n in range(n_windows):
        cond = None if conditioning is None else conditioning[n]
        out = iterative_decode(predictor, T, L, cond, seed).base
        parts.append(out if n == 0 else out[1:])
        seed = int(out[-1])
    return TokenSequence(np.concatenate(parts), predictor.vocab_size)


def embedding_sum(tokens, embeddings, upto):
    """Elementwise sum of the embeddings of layers ``0..upto-1``."""
    out = np.zeros((tokens.shape[0], np.asarray(embeddings[0]).shape[1]))
    for r in range(upto):
        out = out + np.asarray(embeddings[r])[tokens[:, r]]
    return out


def residual_decode(base, layer_predictors, embeddings, n_layers=None, conditioning=None):
    """Fill layers 2..R one at a time from the summed embeddings of the layers below.

    Returns a ``(T, R)`` int array whose first column is the base layer.
    """
    base_tokens = base.base if isinstance(base, TokenSequence) else np.asarray(base, dtype=np.int64).reshape(-1)
    R = n_layers if n_layers is not None else len(layer_predictors) + 1
    if R < 1:
        raise ValidationError("need at least one layer")
    if np.any(base_tokens < 0) or (isinstance(base, TokenSequence) and np.any(base_tokens >= base.vocab_size)):
        raise ValidationError("base layer must be fully decoded (no sentinel tokens)")
    if len(layer_predictors) < R - 1:
        raise ValidationError(f"missing predictor for layer {len(layer_predictors) + 2} of {R}")
    if len(embeddings) < R - 1:
        raise ValidationError(f"need embedding tables for layers 1..{R - 1}, got {len(embeddings)}")
    dims = {np.asarray(e).shape[1] for e in embeddings[: max(R - 1, 0)]}
    if len(dims) > 1:
        raise ValidationError(f"embedding tables must share one dimension, got {sorted(dims)}")
    T = base_tokens.shape[0]
    out = np.zeros((T, R), dtype=np.int64)
    out[:, 0] = base_tokens
    for j in range(1, R):
        table = np.asarray(embeddings[j - 1])
        if np.any(out[:, j - 1] >= table.shape[0]):
            raise ValidationError(f"layer {j} token exceeds embedding table size {table.shape[0]}")
        summed = embedding_sum(out, embeddings, j)
        pred = layer_predictors[j - 1]
        probs = _check_probs(pred.predict(summed, j, conditioning), T, pred.vocab_size)
        out[:, j] = np.argmax(probs, axis=1)
    return out


# -- objectives ---------------------------------------------------------------


def _nll(probs, targets):
    p = probs[np.arange(len(targets)), targets]
    if np.any(p < PROB_EPS):
        warnings.warn(f"{int(np.sum(p < PROB_EPS))} target probabilities below {PROB_EPS}; clamped", RuntimeWarning, stacklevel=3)
        p = np.maximum(p, PROB_EPS)
    return -np.log(p)


def cross_entropy_masked(pred_rows, target, mask_positions):
    """Mean negative log-likelihood of the target tokens at the masked positions only."""
    probs = np.asarray(pred_rows, dtype=np.float64)
    tgt = target.base if isinstance(target, TokenSequence) else np.asarray(target, dtype=np.int64).reshape(-1)
    pos = np.asarray(mask_positions, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != tgt.shape[0]:
        raise ValidationError(f"prediction rows {probs.shape} do not match {tgt.shape[0]} targets")
    if pos.size == 0:
        return 0.0
    return float(np.mean(_nll(probs[pos], tgt[pos])))


def cross_entropy_residual(pred_rows_per_layer, targets):
    """Mean negative log-likelihood over layers j >= 1 and all positions.

    ``pred_rows_per_layer[j - 1]`` holds the (T, V) prediction for layer j.
    """
    tgt = targets.tokens if isinstance(targets, TokenSequence) else np.asarray(targets, dtype=np.int64)
    if len(pred_rows_per_layer) != tgt.shape[1] - 1:
        raise ValidationError(f"need {tgt.shape[1] - 1} prediction blocks, got {len(pred_rows_per_layer)}")
    terms = [_nll(np.asarray(p, dtype=np.float64), tgt[:, j + 1]) for j, p in enumerate(pred_rows_per_layer)]
    if not terms:
        return 0.0
    return float(np.mean(np.concatenate(terms)))


# -- shipped predictors -------------------------------------------------------


class OraclePredictor:
    """All probability on the ground-truth token."""

    def __init__(self, target, vocab_size):
        self.target = np.asarray(target, dtype=np.int64).reshape(-1)
        self.vocab_size = vocab_size

    def predict(self, tokens, conditioning=None):
        probs = np.zeros((len(tokens), self.vocab_size))
        probs[np.arange(len(tokens)), self.target[: len(tokens)]] = 1.0
        return probs


class ResidualOraclePredictor:
    """Residual-layer counterpart of :class:`OraclePredictor` for a (T, R) target."""

    def __init__(self, target, vocab_size):
        self.target = np.asarray(target, dtype=np.int64)
        self.vocab_size = vocab_size

    def predict(self, summed_embeddings, layer, conditioning=None):
        T = len(summed_embeddings)
        probs = np.zeros((T, self.vocab_size))
        probs[np.arange(T), self.target[:T, layer]] = 1.0
        return probs


class UniformPredictor:
    def __init__(self, vocab_size):
        self.vocab_size = vocab_size

    def predict(self, tokens, conditioning=None):
        return np.full((len(tokens), self.vocab_size), 1.0 / self.vocab_size)


class RandomPredictor:
    """Seeded random probability rows; the k-th call of a fresh instance is reproducible."""

    def __init__(self, vocab_size, seed=0):
        self.vocab_size = vocab_size
        self.seed = seed
        self._calls = 0

    def predict(self, tokens, conditioning=None):
        rng = np.random.default_rng([self.seed, self._calls])
        self._calls += 1
        p = rng.random((len(tokens), self.vocab_size))
        return p / p.sum(axis=1, keepdims=True)


class FrequencyPredictor:
    """Bigram frequency table with add-``smoothing`` counts.

    A position whose left neighbour is known is predicted from
    ``p(token | left)``; otherwise from the unigram table.
    """

    def __init__(self, sequences, vocab_size, smoothing=0.1):
        self.vocab_size = V = vocab_size
        uni = np.full(V, smoothing)
        bi = np.full((V, V), smoothing)
        for seq in sequences:
            s = np.asarray(seq, dtype=np.int64).reshape(-1)
            np.add.at(uni, s, 1.0)
            np.add.at(bi, (s[:-1], s[1:]), 1.0)
        self.unigram = uni / uni.sum()
        self.bigram = bi / bi.sum(axis=1, keepdims=True)

    def predict(self, tokens, conditioning=None):
        tokens = np.asarray(tokens, dtype=np.int64)
        probs = np.tile(self.unigram, (len(tokens), 1))
        left = tokens[:-1]
        known = np.flatnonzero(left < self.vocab_size)
        probs[known + 1] = self.bigram[left[known]]
        return probs


class NearestEmbeddingPredictor:
    """Residual-layer predictor that looks up the closest training embedding sum.

    Fitted on ground-truth ``(T, R)`` token arrays: for layer j it stores the
    summed embeddings of layers < j and the observed layer-j token, and
    predicts the token of the nearest stored sum (with ``smoothing`` mass
    spread over the vocabulary).
    """

    def __init__(self, token_arrays, embeddings, vocab_size, smoothing=1e-3):
        self.vocab_size = vocab_size
        self.smoothing = smoothing
        self.embeddings = embeddings
        self._keys = {}
        self._vals = {}
        for arr in token_arrays:
            arr = np.asarray(arr, dtype=np.int64)
            for j in range(1, arr.shape[1]):
                self._keys.setdefault(j, []).append(embedding_sum(arr, embeddings, j))
                self._vals.setdefault(j, []).append(arr[:, j])
        self._keys = {j: np.concatenate(v) for j, v in self._keys.items()}
        self._vals = {j: np.concatenate(v) for j, v in self._vals.items()}

    def predict(self, summed_embeddings, layer, conditioning=None):
        keys, vals = self._keys[layer], self._vals[layer]
        hit = vals[nearest_codes(np.asarray(summed_embeddings), keys)]
        probs = np.full((len(hit), self.vocab_size), self.smoothing / self.vocab_size)
        probs[np.arange(len(hit)), hit] += 1.0 - self.smoothing
        return probs

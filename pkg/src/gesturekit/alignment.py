"""Speech-gesture alignment: pooled embeddings, cosine similarity, symmetric
InfoNCE, chronologically shuffled negatives and recall@k retrieval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .types import DEFAULT_FPS, FeatureSequence

DEFAULT_TEMPERATURE = 0.7


@dataclass(frozen=True, eq=False)
class EmbeddingSequence:
    rows: np.ndarray
    pooled: np.ndarray

    @classmethod
    def from_rows(cls, rows):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValidationError(f"embedding rows must be a non-empty T x d matrix, got {rows.shape}")
        return cls(rows, rows.mean(axis=0))


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    entries: np.ndarray
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2:
            raise ValidationError(f"similarity matrix must be 2-D, got shape {e.shape}")
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")
        object.__setattr__(self, "entries", e)

    @property
    def N(self):
        return self.entries.shape[0]


@dataclass(frozen=True)
class ChronoNegative:
    source_index: int
    permutation: tuple
    features: FeatureSequence


@dataclass(frozen=True)
class AlignmentBatch:
    positives: tuple
    chrono_negatives: tuple


def mean_pool_embed(features, projection=None):
    """Project every row and mean-pool over time.

    ``projection`` (d_in x d_out) stands in for a trained encoder; None
    means identity.
    """
    rows = features.rows if isinstance(features, FeatureSequence) else np.asarray(features, dtype=np.float64)
    if projection is None:
        return EmbeddingSequence.from_rows(rows)
    proj = np.asarray(projection, dtype=np.float64)
    if proj.ndim != 2 or proj.shape[0] != rows.shape[1]:
        raise ValidationError(f"projection of shape {proj.shape} does not accept {rows.shape[1]}-dim features")
    if not np.all(np.isfinite(proj)):
        raise ValidationError("projection contains non-finite values")
    return EmbeddingSequence.from_rows(rows @ proj)


def _pooled_matrix(items, side):
    mats = []
    for i, item in enumerate(items):
        v = item.pooled if isinstance(item, EmbeddingSequence) else np.asarray(item, dtype=np.float64)
        norm = np.linalg.norm(v)
        if norm == 0.0 or not np.isfinite(norm):
            raise ValidationError(f"{side} embedding {i} has zero or non-finite norm")
        mats.append(v / norm)
    return np.stack(mats)


def cosine_similarity_matrix(speech, gesture, temperature=DEFAULT_TEMPERATURE):
    """``S[i, j] = cos(speech_i, gesture_j)`` over pooled embeddings."""
    if len(speech) != len(gesture):
        raise ValidationError(f"got {len(speech)} speech but {len(gesture)} gesture embeddings")
    if len(speech) == 0:
        raise ValidationError("need at least one pair")
    s = _pooled_matrix(speech, "speech")
    g = _pooled_matrix(gesture, "gesture")
    if s.shape[1] != g.shape[1]:
        raise ValidationError(f"speech dim {s.shape[1]} != gesture dim {g.shape[1]}")
    return SimilarityMatrix(np.clip(s @ g.T, -1.0, 1.0), temperature)


def cross_similarity(a, b):
    """Cosine between every pooled embedding of ``a`` and of ``b`` (any counts)."""
    return np.clip(_pooled_matrix(a, "first") @ _pooled_matrix(b, "second").T, -1.0, 1.0)


def _logsumexp(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def infonce_loss(S, negatives=None):
    """Symmetric InfoNCE over the diagonal of ``S``.

    ``-1/(2N) * sum_i [log softmax_row(S/tau)[i, i] + log softmax_col(S/tau)[i, i]]``.

    ``negatives`` is an optional ``N x M`` block of cosines between gesture
    ``i`` and M chronologically shuffled speech clips. They only enlarge the
    denominator of the gesture-anchored term; they are never anchors.
    """
    e = S.entries
    N = e.shape[0]
    if e.shape != (N, N) or N < 2:
        raise ValidationError(f"InfoNCE needs a square N x N matrix with N >= 2, got {e.shape}")
    if not np.all(np.isfinite(e)):
        raise ValidationError("similarity matrix contains non-finite entries")
    logits = e / S.temperature
    diag = np.diag(logits)
    row_term = diag - _logsumexp(logits, axis=1)
    col_logits = logits.T
    if negatives is not None:
        neg = np.asarray(negatives, dtype=np.float64)
        if neg.ndim != 2 or neg.shape[0] != N:
            raise ValidationError(f"negatives must be N x M with N={N}, got {neg.shape}")
        if not np.all(np.isfinite(neg)):
            raise ValidationError("negative similarities contain non-finite entries")
        col_logits = np.concatenate([col_logits, neg / S.temperature], axis=1)
    col_term = diag - _logsumexp(col_logits, axis=1)
    return float(-(row_term.sum() + col_term.sum()) / (2 * N))


# -- chronological negatives -------------------------------------------------


def segment_blocks(transcript, n_frames, fps=DEFAULT_FPS):
    """Frame ranges that move together when segments are shuffled.

    Returns ``(lead, blocks)``: ``lead`` is the frame range before the
    first segment (never moved); block k covers segment k plus the gap
    frames that follow it, up to the next segment (or the end).
    """
    starts = [min(n_frames, max(0, int(round(s.start * fps)))) for s in transcript.segments]
    lead = (0, starts[0])
    blocks = []
    for k, st in enumerate(starts):
        end = starts[k + 1] if k + 1 < len(starts) else n_frames
        blocks.append((st, max(st, end)))
    return lead, blocks


def build_chronological_negative(speech, transcript, permutation, fps=DEFAULT_FPS):
    """Reorder the speech rows segment-wise: output slot p holds block ``permutation[p]``.

    Gap frames travel with the segment before them; frames ahead of the
    first segment stay in place.
    """
    n_seg = len(transcript)
    if n_seg < 2:
        raise ValidationError("cannot construct chronological negative from fewer than 2 segments")
    perm = tuple(int(p) for p in permutation)
    if sorted(perm) != list(range(n_seg)):
        raise ValidationError(f"{perm} is not a permutation of {n_seg} segment indices")
    if perm == tuple(range(n_seg)):
        raise ValidationError("identity permutation does not produce a negative")
    rows = speech.rows
    (l0, l1), blocks = segment_blocks(transcript, rows.shape[0], fps)
    parts = [rows[l0:l1]] + [rows[blocks[k][0] : blocks[k][1]] for k in perm]
    return FeatureSequence(np.concatenate(parts, axis=0), kind=speech.kind, normalized=speech.normalized)


def random_nonidentity_permutation(n, rng):
    """A uniformly random permutation of ``range(n)`` other than the identity."""
    if n < 2:
        raise ValidationError("need at least 2 items for a non-identity permutation")
    while True:
        perm = tuple(int(p) for p in rng.permutation(n))
        if perm != tuple(range(n)):
            return perm


def build_alignment_batch(speech_list, gesture_list, transcripts, rng, fps=DEFAULT_FPS, negatives_per_item=1):
    """Pair clips and attach shuffled negatives for every clip with >= 2 segments."""
    if not (len(speech_list) == len(gesture_list) == len(transcripts)):
        raise ValidationError("speech, gesture and transcript lists must have equal length")
    negs = []
    for i, (sp, tr) in enumerate(zip(speech_list, transcripts)):
        if len(tr) < 2:
            continue
        for _ in range(negatives_per_item):
            perm = random_nonidentity_permutation(len(tr), rng)
            negs.append(ChronoNegative(i, perm, build_chronological_negative(sp, tr, perm, fps)))
    return AlignmentBatch(tuple(zip(speech_list, gesture_list)), tuple(negs))


# -- retrieval ---------------------------------------------------------------


def diagonal_ranks(entries):
    """0-based rank of ``entries[i, i]`` within row i; ties go to the lower column."""
    e = np.asarray(entries, dtype=np.float64)
    diag = np.diag(e)[:, None]
    cols = np.arange(e.shape[1])[None, :]
    rows = np.arange(e.shape[0])[:, None]
    ahead = (e > diag) | ((e == diag) & (cols < rows))
    return ahead.sum(axis=1)


def retrieval_recall(S, ks):
    """Fraction of rows whose diagonal entry lands in the top-k, for each k."""
    if len(ks) == 0:
        raise ValidationError("ks must not be empty")
    entries = S.entries if isinstance(S, SimilarityMatrix) else np.asarray(S, dtype=np.float64)
    N = entries.shape[0]
    if entries.ndim != 2 or entries.shape != (N, N):
        raise ValidationError(f"retrieval needs a square matrix, got {entries.shape}")
    ks = [int(k) for k in ks]
    if ks != sorted(ks) or ks[0] < 1 or ks[-1] > N:
        raise ValidationError(f"ks must be ascending within 1..{N}, got {ks}")
    ranks = diagonal_ranks(entries)
    return {k: float(np.mean(ranks < k)) for k in ks}


def small_batch_recall(entries, ks, batch_size=32, n_batches=100, rng=None):
    """Average recall over random sub-batches of paired items."""
    entries = np.asarray(entries, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(0)
    N = entries.shape[0]
    if batch_size > N:
        raise ValidationError(f"batch size {batch_size} exceeds {N} items")
    totals = {int(k): 0.0 for k in ks}
    for _ in range(n_batches):
        idx = np.sort(rng.choice(N, size=batch_size, replace=False))
        rec = retrieval_recall(entries[np.ix_(idx, idx)], ks)
        for k, v in rec.items():
            totals[k] += v
    return {k: v / n_batches for k, v in totals.items()}

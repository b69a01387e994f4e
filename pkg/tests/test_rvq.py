import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gesturekit.errors import ValidationError
from gesturekit.rvq import (
    Codebook,
    CodebookStack,
    TrainConfig,
    distill_loss,
    nearest_codes,
    prefix_errors,
    rvq_decode,
    rvq_encode,
    rvq_losses,
    train_codebooks,
)
from gesturekit.types import FeatureSequence


def _stack(*layers):
    return CodebookStack(tuple(Codebook(np.asarray(v, dtype=float)) for v in layers))


def _brute(x, codes):
    out = []
    for row in x:
        d = [sum((a - b) ** 2 for a, b in zip(row, c)) for c in codes]
        out.append(min(range(len(d)), key=lambda i: (d[i], i)))
    return np.array(out)


# -- nearest codes ----------------------------------------------------------------


def test_nearest_matches_brute_force():
    rng = np.random.default_rng(0)
    codes = rng.normal(size=(37, 5))
    x = rng.normal(size=(300, 5))
    np.testing.assert_array_equal(nearest_codes(x, codes), _brute(x.tolist(), codes.tolist()))


def test_nearest_exact_ties_pick_lowest_index():
    # integer data keeps every distance exact
    codes = np.array([[2.0, 0.0], [0.0, 0.0], [0.0, 2.0], [0.0, 0.0], [-2.0, 0.0]])
    x = np.array([[1.0, 1.0], [0.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    np.testing.assert_array_equal(nearest_codes(x, codes), [0, 1, 1, 0])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 25), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_nearest_property_small_integers(n, C, d, seed):
    rng = np.random.default_rng(seed)
    codes = rng.integers(-3, 4, size=(C, d)).astype(float)
    x = rng.integers(-4, 5, size=(n, d)).astype(float)
    np.testing.assert_array_equal(nearest_codes(x, codes), _brute(x.tolist(), codes.tolist()))


def test_nearest_large_offsets():
    # expanded-form cancellation must not change the answer far from the origin
    rng = np.random.default_rng(1)
    base = 1e6
    codes = base + rng.normal(size=(50, 3))
    x = base + rng.normal(size=(200, 3))
    np.testing.assert_array_equal(nearest_codes(x, codes), _brute(x.tolist(), codes.tolist()))


# -- encode / decode --------------------------------------------------------------


def test_encode_member_of_codebook():
    stack = _stack([[0.0, 0.0], [1.5, -2.0], [3.0, 1.0]])
    res = rvq_encode(np.array([[1.5, -2.0]]), stack)
    assert res.tokens.tolist() == [[1]]
    np.testing.assert_array_equal(res.quantized, [[1.5, -2.0]])
    np.testing.assert_array_equal(res.residuals[0] - res.codes[0], [[0.0, 0.0]])


def test_encode_hand_traced_two_layers():
    stack = _stack([[0, 0], [1, 1]], [[0, 0], [-0.1, 0]])
    res = rvq_encode(np.array([[0.9, 1.0]]), stack)
    assert res.tokens.tolist() == [[1, 1]]
    np.testing.assert_allclose(res.quantized, [[0.9, 1.0]], atol=1e-15)
    np.testing.assert_allclose(rvq_decode(res.tokens, stack).rows, [[0.9, 1.0]], atol=1e-15)


def test_encode_random_stack_matches_oracle_per_layer():
    rng = np.random.default_rng(2)
    stack = _stack(*(rng.normal(scale=1.0 / (r + 1), size=(16, 4)) for r in range(3)))
    x = rng.normal(size=(100, 4))
    res = rvq_encode(x, stack)
    resid = x.copy()
    for r, cb in enumerate(stack.layers):
        expect = _brute(resid.tolist(), cb.vectors.tolist())
        np.testing.assert_array_equal(res.tokens[:, r], expect)
        resid = resid - cb.vectors[expect]


def test_encode_dim_mismatch():
    with pytest.raises(ValidationError):
        rvq_encode(np.ones((2, 3)), _stack(np.ones((2, 2))))


def test_encode_deterministic():
    rng = np.random.default_rng(3)
    stack = _stack(rng.normal(size=(8, 3)), rng.normal(size=(8, 3)))
    x = rng.normal(size=(20, 3))
    np.testing.assert_array_equal(rvq_encode(x, stack).tokens, rvq_encode(x.copy(), stack).tokens)


def test_decode_zero_codes_and_range():
    stack = _stack(np.zeros((3, 2)), np.zeros((3, 2)))
    assert not rvq_decode(np.array([[0, 2], [1, 1]]), stack).rows.any()
    with pytest.raises(ValidationError):
        rvq_decode(np.array([[0, 3]]), stack)
    with pytest.raises(ValidationError):
        rvq_decode(np.array([[-1, 0]]), stack)


def test_encode_decode_fixed_point():
    rng = np.random.default_rng(4)
    stack = _stack(rng.normal(size=(6, 3)), 0.1 * rng.normal(size=(6, 3)))
    q = rvq_encode(rng.normal(size=(30, 3)), stack).quantized
    again = rvq_encode(q, stack)
    np.testing.assert_allclose(rvq_decode(again.tokens, stack).rows, q, atol=1e-12)


def test_encode_not_translation_equivariant():
    # shifting the input alone changes which codes win
    stack = _stack([[0.0], [1.0]])
    a = rvq_encode(np.array([[0.4]]), stack).tokens
    b = rvq_encode(np.array([[0.4 + 0.3]]), stack).tokens
    assert a.tolist() != b.tolist()


# -- losses -------------------------------------------------------------------------


def test_losses_hand_example():
    stack = _stack([[0.0, 0.0]])
    x = np.array([[1.0, 0.0]])
    recon, commit, total = rvq_losses(x, rvq_encode(x, stack))
    assert (recon, commit, total) == (1.0, 1.0, 2.0)


def test_losses_exact_reconstruction_and_weights():
    stack = _stack([[1.0, 2.0], [0.0, 0.0]])
    x = np.array([[1.0, 2.0]])
    recon, commit, total = rvq_losses(x, rvq_encode(x, stack), alpha=1.0, beta=0.5, distill=-0.8)
    assert recon == 0.0 and commit == 0.0
    assert total == pytest.approx(-0.4)


def test_losses_reject_non_finite():
    stack = _stack([[0.0]])
    x = np.array([[1.0]])
    res = rvq_encode(x, stack)
    with pytest.raises(ValidationError):
        rvq_losses(x, res, distill=float("nan"))


def test_distill_examples():
    q = np.array([[1.0, 0.0], [2.0, 0.0]])
    proj = np.eye(2)
    assert distill_loss(q, q, proj) == -1.0
    assert distill_loss(q, np.array([[0.0, 1.0], [0.0, 3.0]]), proj) == 0.0
    assert distill_loss(q, np.array([[1.0, 1.0], [1.0, 1.0]]), proj) == pytest.approx(-1 / np.sqrt(2), abs=1e-15)


def test_distill_zero_row_names_t():
    q = np.array([[1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(ValidationError, match="t=1"):
        distill_loss(q, np.array([[1.0, 0.0], [0.0, 0.0]]), np.eye(2))


def test_distill_range():
    rng = np.random.default_rng(5)
    v = distill_loss(rng.normal(size=(50, 4)), rng.normal(size=(50, 3)), rng.normal(size=(4, 3)))
    assert -1.0 <= v <= 1.0


# -- training ----------------------------------------------------------------------------


def test_train_exact_points():
    pts = np.array([[0.0, 0.0], [5.0, 1.0], [-3.0, 2.0], [1.0, -4.0]])
    stack = train_codebooks(np.repeat(pts, 5, axis=0), TrainConfig(layers=1, codes=4, epochs=3, seed=0))
    assert prefix_errors(pts, stack)[-1] == 0.0


def test_train_two_clusters_match_kmeans_oracle():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(100, 2)) * 0.2 + [-5, 0]
    b = rng.normal(size=(100, 2)) * 0.2 + [5, 1]
    x = np.concatenate([a, b])
    stack = train_codebooks(x, TrainConfig(layers=1, codes=2, epochs=3, seed=1))
    got = stack.layers[0].vectors[np.argsort(stack.layers[0].vectors[:, 0])]
    np.testing.assert_allclose(got, [a.mean(axis=0), b.mean(axis=0)], atol=1e-6)


def test_train_second_layer_never_hurts():
    rng = np.random.default_rng(7)
    for seed in range(10):
        x = rng.normal(size=(120, 3))
        errs = prefix_errors(x, train_codebooks(x, TrainConfig(layers=4, codes=8, epochs=2, batch_size=16, seed=seed)))
        assert all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:]))


def test_train_is_deterministic():
    x = np.random.default_rng(8).normal(size=(80, 3))
    cfg = TrainConfig(layers=2, codes=6, epochs=2, seed=42)
    a, b = train_codebooks(x, cfg), train_codebooks(x, cfg)
    for la, lb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(la.vectors, lb.vectors)


def test_train_accepts_feature_lists_and_overrides():
    parts = [FeatureSequence(np.random.default_rng(k).normal(size=(20, 2))) for k in range(3)]
    stack = train_codebooks(parts, layers=2, codes=5, epochs=1)
    assert len(stack) == 2 and stack.layers[0].size == 5
    assert stack.layers[0].usage_counts.sum() == 60


def test_train_too_few_rows():
    with pytest.raises(ValidationError, match="at most 10 codes"):
        train_codebooks(np.zeros((10, 2)), TrainConfig(codes=16))


def test_stack_requires_shared_dim():
    with pytest.raises(ValidationError):
        _stack(np.zeros((2, 2)), np.zeros((2, 3)))

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gesturekit import io as gio
from gesturekit.errors import ValidationError
from gesturekit.generator import TokenSequence
from gesturekit.rvq import TrainConfig, train_codebooks
from gesturekit.types import (
    FeatureSequence,
    FlowField,
    GestureSequence,
    ImageGrid,
    KeypointLayout,
    Segment,
    TimedTranscript,
    default_layout,
    flatten_frames,
    slice_windows,
    unflatten_frames,
)


def _seq(T, rng=None, fps=25.0):
    rng = rng or np.random.default_rng(0)
    return GestureSequence(rng.uniform(0, 255, size=(T, 116, 2)), fps=fps)


# -- layout and sequences ------------------------------------------------------


def test_default_layout_dims():
    lay = default_layout()
    assert lay.face_count == 68 and lay.body_count == 48
    assert lay.face_flat_dim == 136 and lay.body_flat_dim == 96
    assert all(a != b and max(a, b) < lay.num_points for a, b in lay.edges)
    assert len({tuple(sorted(e)) for e in lay.edges}) == len(lay.edges)


@pytest.mark.parametrize("edges", [[(0, 0)], [(0, 1), (1, 0)], [(0, 200)]])
def test_layout_rejects_bad_edges(edges):
    with pytest.raises(ValidationError):
        KeypointLayout(68, 48, tuple(edges))


def test_sequence_invariants():
    with pytest.raises(ValidationError):
        GestureSequence(np.zeros((0, 116, 2)))
    with pytest.raises(ValidationError):
        GestureSequence(np.zeros((3, 115, 2)))
    bad = np.zeros((2, 116, 2))
    bad[1, 3, 0] = np.nan
    with pytest.raises(ValidationError):
        GestureSequence(bad)


def test_sequence_arrays_are_read_only():
    seq = _seq(3)
    with pytest.raises(ValueError):
        seq.points[0, 0, 0] = 1.0


# -- flatten / windows ----------------------------------------------------------


def test_flatten_dims():
    face, body = flatten_frames(_seq(1))
    assert face.rows.shape == (1, 136)
    assert body.rows.shape == (1, 96)


def test_flatten_zero_frame():
    face, body = flatten_frames(GestureSequence(np.zeros((1, 116, 2))))
    assert not face.rows.any() and not body.rows.any()


def test_flatten_index_arithmetic():
    i = np.arange(116, dtype=float)
    seq = GestureSequence(np.stack([i, 2 * i], axis=1)[None])
    face, body = flatten_frames(seq)
    np.testing.assert_array_equal(face.rows[0, :6], [0, 0, 1, 2, 2, 4])
    np.testing.assert_array_equal(body.rows[0, :4], [68, 136, 69, 138])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(116), st.just(2)), elements=st.floats(-1e6, 1e6)))
def test_flatten_round_trip(points):
    seq = GestureSequence(points)
    face, body = flatten_frames(seq)
    assert unflatten_frames(face, body) == seq


def test_flatten_normalized_round_trip():
    seq = _seq(4)
    face, body = flatten_frames(seq, normalize=True)
    assert face.normalized and face.rows.max() <= 1.0
    back = unflatten_frames(face, body)
    np.testing.assert_allclose(back.points, seq.points, rtol=1e-14)


def test_unflatten_shape_errors():
    face, body = flatten_frames(_seq(2))
    with pytest.raises(ValidationError):
        unflatten_frames(face, FeatureSequence(body.rows[:1]))
    with pytest.raises(ValidationError):
        unflatten_frames(FeatureSequence(face.rows[:, :10]), body)


@pytest.mark.parametrize("T, expected", [(80, [0]), (100, [0, 10, 20]), (79, [])])
def test_slice_windows_examples(T, expected):
    seq = _seq(T)
    wins = slice_windows(seq, 80, 10)
    assert len(wins) == len(expected)
    for w, off in zip(wins, expected):
        np.testing.assert_array_equal(w.points, seq.points[off : off + 80])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.integers(1, 30), st.integers(1, 12))
def test_slice_windows_count(T, length, stride):
    seq = GestureSequence(np.arange(T * 232, dtype=float).reshape(T, 116, 2))
    wins = slice_windows(seq, length, stride)
    assert len(wins) == max(0, (T - length) // stride + 1)
    for k, w in enumerate(wins):
        assert len(w) == length
        np.testing.assert_array_equal(w.points, seq.points[k * stride : k * stride + length])


# -- transcripts -----------------------------------------------------------------


def test_transcript_invariants():
    with pytest.raises(ValidationError, match="start < end"):
        TimedTranscript((Segment("x", 1.0, 0.5),))
    with pytest.raises(ValidationError):
        TimedTranscript((Segment("a", 0.0, 1.0), Segment("b", 0.5, 2.0)))
    with pytest.raises(ValidationError):
        TimedTranscript((Segment("b", 1.0, 2.0), Segment("a", 0.0, 0.5)))


def test_image_and_flow_validation():
    with pytest.raises(ValidationError):
        ImageGrid(np.full((4, 4), 1.5))
    with pytest.raises(ValidationError):
        FlowField(np.zeros((4, 4, 3)))


# -- io round trips ------------------------------------------------------------------


def test_keypoints_round_trip(tmp_path):
    seq = _seq(2)
    gio.save_keypoints(seq, tmp_path / "k.jsonl")
    assert gio.load_keypoints(tmp_path / "k.jsonl") == seq


def test_keypoints_errors_name_field(tmp_path):
    seq = _seq(2)
    path = tmp_path / "k.jsonl"
    gio.save_keypoints(seq, path)
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["body"] = rec["body"][:-1]
    path.write_text(lines[0] + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(ValidationError, match="'body'"):
        gio.load_keypoints(path)
    rec = json.loads(lines[1])
    rec["t"] = 5
    path.write_text(lines[0] + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(ValidationError, match="'t'"):
        gio.load_keypoints(path)


def test_keypoints_reject_nan(tmp_path):
    path = tmp_path / "k.jsonl"
    path.write_text(json.dumps({"t": 0, "face": [[float("nan"), 0.0]] + [[0.0, 0.0]] * 67, "body": [[0.0, 0.0]] * 48}) + "\n")
    with pytest.raises(ValidationError):
        gio.load_keypoints(path)


@pytest.mark.parametrize("suffix", [".bin", ".csv"])
def test_features_round_trip(tmp_path, suffix):
    rows = np.random.default_rng(1).normal(size=(5, 3)).astype(np.float32).astype(np.float64)
    feats = FeatureSequence(rows, kind="speech")
    gio.save_features(feats, tmp_path / f"f{suffix}")
    back = gio.load_features(tmp_path / f"f{suffix}")
    np.testing.assert_array_equal(back.rows, rows)
    assert back.kind == "speech"


def test_features_header_flags(tmp_path):
    feats = FeatureSequence(np.ones((2, 4)), kind="gesture", normalized=True)
    gio.save_features(feats, tmp_path / "f.bin")
    back = gio.load_features(tmp_path / "f.bin")
    assert back.kind == "gesture" and back.normalized


def test_features_wrong_length(tmp_path):
    path = tmp_path / "f.bin"
    gio.save_features(FeatureSequence(np.ones((3, 2))), path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ValidationError, match="header declares"):
        gio.load_features(path)


def test_features_reject_nan(tmp_path):
    path = tmp_path / "f.bin"
    gio.save_features(FeatureSequence(np.ones((2, 2))), path)
    buf = bytearray(path.read_bytes())
    buf[-4:] = np.array([np.nan], dtype="<f4").tobytes()
    path.write_bytes(bytes(buf))
    with pytest.raises(ValidationError, match="non-finite"):
        gio.load_features(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "f.bin"
    gio.save_flow(FlowField(np.zeros((2, 2, 2))), path)
    with pytest.raises(ValidationError, match="magic"):
        gio.load_features(path)


def test_transcript_round_trip_and_rejection(tmp_path):
    tr = TimedTranscript((Segment("a", 0.0, 0.4), Segment("b", 0.5, 1.0)))
    gio.save_transcript(tr, tmp_path / "t.json")
    assert gio.load_transcript(tmp_path / "t.json") == tr
    (tmp_path / "bad.json").write_text(json.dumps([{"text": "x", "start": 1.0, "end": 0.2}]))
    with pytest.raises(ValidationError):
        gio.load_transcript(tmp_path / "bad.json")


def test_image_round_trip(tmp_path):
    px = np.random.default_rng(2).integers(0, 256, size=(6, 5, 3)) / 255.0
    gio.save_image(ImageGrid(px), tmp_path / "i.png", {"config_hash": "abc"})
    np.testing.assert_allclose(gio.load_image(tmp_path / "i.png").pixels, px, atol=1e-12)


def test_flow_and_grid_round_trip(tmp_path):
    disp = np.random.default_rng(3).normal(size=(4, 7, 2)).astype(np.float32).astype(np.float64)
    gio.save_flow(FlowField(disp), tmp_path / "f.bin")
    np.testing.assert_array_equal(gio.load_flow(tmp_path / "f.bin").displacement, disp)
    grid = disp[..., 0]
    gio.save_grid(grid, tmp_path / "g.bin")
    np.testing.assert_array_equal(gio.load_grid(tmp_path / "g.bin"), grid)


def test_stack_round_trip(tmp_path):
    x = np.random.default_rng(4).normal(size=(60, 3)).astype(np.float32).astype(np.float64)
    stack = train_codebooks(x, TrainConfig(layers=2, codes=4, epochs=1, seed=0))
    gio.save_stack(stack, tmp_path / "s.bin")
    back = gio.load_stack(tmp_path / "s.bin")
    for a, b in zip(stack.layers, back.layers):
        np.testing.assert_allclose(b.vectors, a.vectors, rtol=1e-6)
        np.testing.assert_array_equal(b.usage_counts, a.usage_counts)


def test_tokens_round_trip(tmp_path):
    tok = TokenSequence(np.array([[0, 1], [2, 3], [4, 4]]), 8)
    gio.save_tokens(tok, tmp_path / "t.json")
    assert gio.load_tokens(tmp_path / "t.json") == tok
    doc = json.loads((tmp_path / "t.json").read_text())
    doc["sentinel"] = 3
    (tmp_path / "t.json").write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="sentinel"):
        gio.load_tokens(tmp_path / "t.json")

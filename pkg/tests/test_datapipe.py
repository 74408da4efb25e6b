import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spadvsr import datapipe as dp
from spadvsr.scenegen import GroundTruthSequence


def test_normalize_examples():
    assert dp.normalize(17.5, 35.0) == 0.5
    np.testing.assert_array_equal(dp.normalize([0.0, 35.0], 35.0), [0.0, 1.0])


def test_normalize_round_trip():
    d = np.random.default_rng(0).uniform(0, 35.0, 10_000)
    back = dp.denormalize(dp.normalize(d, 35.0), 35.0)
    assert np.abs(back - d).max() <= np.spacing(1.0) * 35.0


def test_normalize_clamps_with_warning():
    with pytest.warns(dp.DepthClampWarning) as rec:
        out = dp.normalize([10.0, 40.0, 50.0], 35.0)
    assert rec[0].message.count == 2
    np.testing.assert_array_equal(out, [10 / 35, 1.0, 1.0])


def test_normalize_in_range_is_silent():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        dp.normalize([1.0, 35.0], 35.0)


@pytest.mark.parametrize("n,t,r,expected", [
    (500, 0, 2, [0, 0, 0, 1, 2]),
    (500, 7, 0, [7]),
    (500, 499, 1, [498, 499, 499]),
])
def test_window_examples(n, t, r, expected):
    assert dp.window(n, t, r).tolist() == expected


@given(st.integers(1, 50), st.data(), st.integers(0, 4))
def test_window_properties(n, data, r):
    t = data.draw(st.integers(0, n - 1))
    w = dp.window(n, t, r)
    assert len(w) == 2 * r + 1 and w[r] == t
    assert (np.diff(w) >= 0).all() and w.min() >= 0 and w.max() < n


def test_window_errors():
    with pytest.raises(IndexError):
        dp.window(5, 5, 1)
    with pytest.raises(ValueError):
        dp.window(5, 0, -1)


def test_make_windows_shape_and_centre():
    frames = np.arange(6.0)[:, None, None] * np.ones((6, 2, 3))
    w = dp.make_windows(frames, 2)
    assert w.shape == (6, 5, 2, 3)
    np.testing.assert_array_equal(w[:, 2], frames)


def _seq(n):
    return GroundTruthSequence(np.full((n, 4, 4), 5.0), np.ones((n, 4, 4)), 100.0)


@pytest.mark.parametrize("k,fps,count", [(1, 100.0, 250), (2, 50.0, 125), (100, 1.0, 3)])
def test_subsample_fps(k, fps, count):
    out = dp.subsample_fps(_seq(250), k)
    assert out.fps == fps and out.n_frames == count == int(np.ceil(250 / k))


def test_fisher_yates_examples():
    a = dp.fisher_yates(1500, 0)
    np.testing.assert_array_equal(a, dp.fisher_yates(1500, 0))
    np.testing.assert_array_equal(np.sort(a), np.arange(1500))
    assert (a != dp.fisher_yates(1500, 1)).mean() > 0.9


def _examples(n_seq, per_seq):
    return [dp.TrainingExample(np.zeros((1, 2, 2)), np.zeros((8, 8)),
                               {"sequence": f"s{i}", "frame": t})
            for i in range(n_seq) for t in range(per_seq)]


@given(st.integers(3, 30), st.integers(1, 5), st.integers(0, 100))
def test_split_has_no_sequence_leakage(n_seq, per_seq, seed):
    ex = _examples(n_seq, per_seq)
    train, val, test = dp.shuffle_split(ex, dp.SplitConfig(seed=seed))
    owners = [{e.meta["sequence"] for e in part} for part in (train, val, test)]
    assert not (owners[0] & owners[1] or owners[0] & owners[2] or owners[1] & owners[2])
    assert len(train) + len(val) + len(test) == len(ex)


def test_split_keeps_eval_order_and_counts():
    ex = _examples(10, 3)
    train, val, test = dp.shuffle_split(ex, dp.SplitConfig(counts=(6, 2, 2)))
    assert len(train) == 18 and len(val) == 6 and len(test) == 6
    assert [e.meta["frame"] for e in val] == [0, 1, 2, 0, 1, 2]
    with pytest.raises(ValueError):
        dp.shuffle_split(ex, dp.SplitConfig(counts=(5, 2, 2)))


def test_stack_examples():
    a = dp.SequenceData("a", np.zeros((3, 2, 2)), np.zeros((3, 8, 8)))
    b = dp.SequenceData("b", np.ones((2, 2, 2)), np.ones((2, 8, 8)))
    x, y = dp.stack_examples([a, b], 1)
    assert x.shape == (5, 3, 2, 2) and y.shape == (5, 8, 8)
    assert x[3:].min() == 1.0

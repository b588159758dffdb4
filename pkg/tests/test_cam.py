import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rrm.cam import (
    background_prob,
    cam_from_features,
    concat_fg_bg,
    fg_bg_probabilities,
    multiscale_cam,
    normalize_fg,
    validate_class_set,
)


def test_zero_weights_give_zero_cam(rng):
    f = rng.standard_normal((5, 4, 4))
    cam = cam_from_features(f, np.zeros((2, 5)), 8, 8)
    assert cam.shape == (2, 8, 8) and np.all(cam == 0)


def test_single_channel_identity(rng):
    f = rng.random((1, 6, 7))
    cam = cam_from_features(f, np.array([[1.0]]), 6, 7)
    assert np.array_equal(cam[0], f[0])


def test_weighted_sum_then_clamp():
    f = np.array([[[2.0]], [[3.0]]])
    assert cam_from_features(f, np.array([[1.0, -1.0]]), 1, 1).tolist() == [[[0.0]]]
    raw = cam_from_features(f, np.array([[1.0, -1.0]]), 1, 1, clamp=False)
    assert raw.tolist() == [[[-1.0]]]


def test_channel_mismatch():
    with pytest.raises(ValueError):
        cam_from_features(np.zeros((3, 2, 2)), np.zeros((1, 4)), 2, 2)


def test_linear_in_weights_before_clamp(rng):
    f = rng.random((4, 5, 5))
    w = rng.random((3, 4))
    a = cam_from_features(f, w, 9, 11)
    b = cam_from_features(f, 2 * w, 9, 11)
    np.testing.assert_allclose(b, 2 * a, rtol=1e-12)


def test_multiscale_single_identity(rng):
    c = rng.random((2, 3, 3))
    assert np.array_equal(multiscale_cam([c]), c)


def test_multiscale_identical_pair(rng):
    c = rng.random((2, 3, 3))
    np.testing.assert_allclose(multiscale_cam([c, c]), c, rtol=1e-15)


def test_multiscale_mean_half():
    out = multiscale_cam([np.zeros((1, 2, 2)), np.ones((1, 2, 2))])
    assert np.all(out == 0.5)


def test_multiscale_errors():
    with pytest.raises(ValueError):
        multiscale_cam([])
    with pytest.raises(ValueError):
        multiscale_cam([np.zeros((1, 2, 2)), np.zeros((1, 2, 3))])


@given(st.permutations(range(4)))
def test_multiscale_order_invariant(perm):
    rng = np.random.default_rng(7)
    cams = [rng.random((2, 4, 5)) * 10 for _ in range(4)]
    np.testing.assert_allclose(multiscale_cam([cams[i] for i in perm]), multiscale_cam(cams), rtol=1e-6, atol=0)


def test_normalize_zero_class_stays_zero():
    out = normalize_fg(np.zeros((1, 3, 3)))
    assert np.all(out == 0)


def test_normalize_max_one_unchanged(rng):
    c = rng.random((1, 4, 4))
    c[0, 1, 2] = 1.0
    assert np.array_equal(normalize_fg(c), c)


def test_normalize_hand_example():
    assert normalize_fg(np.array([[[2.0, 4.0]]])).tolist() == [[[0.5, 1.0]]]


def test_normalize_rejects_negative():
    with pytest.raises(ValueError):
        normalize_fg(np.array([[[-1.0, 1.0]]]))


@given(hnp.arrays(np.float64, (3, 4, 4), elements=st.floats(0, 1e6)))
def test_normalize_peak_is_one(c):
    out = normalize_fg(c)
    for k in range(3):
        if c[k].max() > 0:
            assert out[k].max() == 1.0
        else:
            assert np.all(out[k] == 0)
    assert out.min() >= 0 and out.max() <= 1


def test_background_cases():
    assert background_prob(np.ones((1, 1, 1)), 4.0).tolist() == [[0.0]]
    assert background_prob(np.zeros((1, 1, 1)), 4.0).tolist() == [[1.0]]
    assert background_prob(np.full((2, 1, 1), 0.5), 4.0).tolist() == [[0.0625]]


@pytest.mark.parametrize("gamma", [1.0, 0.5, -2.0])
def test_background_gamma_must_exceed_one(gamma):
    with pytest.raises(ValueError):
        background_prob(np.zeros((1, 2, 2)), gamma)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(1.0001, 10))
def test_background_antitone(a, b, gamma):
    lo, hi = min(a, b), max(a, b)
    p = np.array([[[lo, hi]]])
    bg = background_prob(p, gamma)
    assert bg[0, 1] <= bg[0, 0]


def test_concat_single_class():
    fg = np.zeros((1, 2, 3))
    out = concat_fg_bg(fg, background_prob(fg, 4.0))
    assert out.shape == (2, 2, 3)
    assert np.all(out[0] == 1) and np.all(out[1] == 0)


@given(st.integers(1, 6))
def test_concat_channel_count(n):
    fg = np.random.default_rng(n).random((n, 3, 2))
    bg = background_prob(fg)
    out = concat_fg_bg(fg, bg)
    assert out.shape[0] == n + 1
    assert np.array_equal(out[0], bg) and np.array_equal(out[1:], fg)


def test_concat_shape_mismatch():
    with pytest.raises(ValueError):
        concat_fg_bg(np.zeros((2, 3, 3)), np.zeros((3, 2)))


def test_fused_probabilities_in_unit_interval(rng):
    feats = [rng.standard_normal((4, s, s)) for s in (3, 6, 9)]
    p = fg_bg_probabilities(feats, rng.standard_normal((2, 4)), 12, 12)
    assert p.shape == (3, 12, 12)
    assert p.min() >= 0 and p.max() <= 1


def test_class_set_validation():
    assert validate_class_set([3, 1]) == (3, 1)
    for bad in ([], [0], [1, 1], [21]):
        with pytest.raises(ValueError):
            validate_class_set(bad, 20)

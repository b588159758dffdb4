import numpy as np
import pytest

from rrm.lattice import PermutohedralLattice, build_lattice


def exact_filter(f, v):
    k = np.exp(-0.5 * ((f[:, None, :] - f[None, :, :]) ** 2).sum(-1))
    return v @ k


@pytest.mark.parametrize(
    "d, passes, expand",
    [(d, p, True) for d in (1, 2, 3, 5) for p in (2, 1)] + [(1, 1, False), (2, 1, False)],
)
def test_dense_points_close_to_exact(d, passes, expand):
    rng = np.random.default_rng(d)
    f = rng.random((300, d)) * 5
    v = rng.random((2, 300))
    lat = PermutohedralLattice(f, passes=passes, expand=expand)
    ref = exact_filter(f, v)
    assert np.linalg.norm(lat.filter(v) - ref) / np.linalg.norm(ref) <= 0.05


def test_filter_is_linear_and_symmetric(rng):
    f = rng.random((40, 3)) * 4
    lat = PermutohedralLattice(f)
    k = lat.filter(np.eye(40))
    np.testing.assert_allclose(k, k.T, atol=1e-12)
    x, y = rng.random((1, 40)), rng.random((1, 40))
    np.testing.assert_allclose(lat.filter(2 * x - y), 2 * lat.filter(x) - lat.filter(y), atol=1e-12)


def test_translation_invariance(rng):
    f = rng.random((50, 2)) * 3
    v = rng.random((1, 50))
    a = PermutohedralLattice(f).filter(v)
    b = PermutohedralLattice(f + 1000.0).filter(v)
    # a shift lands the points on the lattice differently; the result moves only slightly
    assert np.linalg.norm(a - b) / np.linalg.norm(a) <= 0.02


def test_budget_triggers_fallback():
    rng = np.random.default_rng(0)
    f = rng.random((30, 5)) * 40  # sparse: far-apart points
    with pytest.raises(MemoryError):
        PermutohedralLattice(f, passes=2, expand=True, vertex_budget=1000)
    lat = build_lattice(f, vertex_budget=1000)
    assert lat.passes == 1 and lat.n_vertices <= 30 * 6
    out = lat.filter(np.ones((1, 30)))
    assert np.all(np.isfinite(out)) and np.all(out > 0)


def test_middle_tier_used_when_two_passes_do_not_fit():
    rng = np.random.default_rng(5)
    f = rng.random((300, 5)) * 5
    lat = build_lattice(f)
    assert lat.passes == 1 and lat.n_vertices > 300 * 6
    v = rng.random((1, 300))
    ref = exact_filter(f, v)
    assert np.linalg.norm(lat.filter(v) - ref) / np.linalg.norm(ref) <= 0.05


def test_dense_input_keeps_expanded_lattice(rng):
    yy, xx = np.mgrid[0:20, 0:20]
    f = np.stack([yy.ravel(), xx.ravel()], axis=1) / 3.0
    assert build_lattice(f).passes == 2


def test_bad_arguments():
    with pytest.raises(ValueError):
        PermutohedralLattice(np.zeros(5))
    with pytest.raises(ValueError):
        PermutohedralLattice(np.zeros((5, 2)), passes=3)
    lat = PermutohedralLattice(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        lat.filter(np.zeros((1, 5)))


@pytest.mark.parametrize("passes, expand", [(2, True), (1, True), (1, False)])
def test_every_tier_is_symmetric(passes, expand):
    rng = np.random.default_rng(11)
    f = rng.random((120, 5)) * 4
    k = PermutohedralLattice(f, passes=passes, expand=expand, vertex_budget=10**7).filter(np.eye(120))
    np.testing.assert_allclose(k, k.T, rtol=0, atol=1e-12 * np.abs(k).max())

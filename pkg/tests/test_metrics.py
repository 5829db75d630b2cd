import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from octcast.errors import AllZero, EmptyGroundTruth, NoVisibleGroundTruth, ShapeMismatch
from octcast.geometry import HandTrajectory
from octcast.metrics import ade, auc_judd, fde, min_of_k, normalize_heatmap, nss, points_to_cells, sim
from oracles import ade_loop, auc_judd_loop, fde_loop, nss_loop, pool_loop, sim_loop

unit = st.floats(0, 1, allow_nan=False)
maps = arrays(np.float64, (6, 5), elements=st.one_of(st.just(0.0), st.floats(1e-6, 10)))


def traj(rng, F=4, vis=None):
    return HandTrajectory(rng.random((F, 2, 2)), np.ones((F, 2), bool) if vis is None else vis)


def test_ade_fde_examples(rng):
    a = traj(rng)
    assert ade(a, a) == 0 and fde(a, a) == 0
    b = HandTrajectory(a.points + [0.1, 0.0], a.visible)
    assert ade(b, a) == pytest.approx(0.1) and fde(b, a) == pytest.approx(0.1)


def test_ade_fde_loop(rng):
    for _ in range(20):
        vis = rng.random((4, 2)) > 0.3
        vis[-1, 0] = True
        a, g = traj(rng), traj(rng, vis=vis)
        assert ade(a, g) == pytest.approx(ade_loop(a.points, g.points, vis), abs=1e-12)
        assert fde(a, g) == pytest.approx(fde_loop(a.points, g.points, vis), abs=1e-12)


def test_no_visible(rng):
    g = traj(rng, vis=np.zeros((4, 2), bool))
    with pytest.raises(NoVisibleGroundTruth):
        ade(traj(rng), g)
    vis = np.ones((4, 2), bool)
    vis[-1] = False
    with pytest.raises(NoVisibleGroundTruth):
        fde(traj(rng), traj(rng, vis=vis))


def test_horizon_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        ade(traj(rng, F=3), traj(rng))


def test_ade_symmetric_and_triangle(rng):
    for _ in range(20):
        a, b, c = traj(rng), traj(rng), traj(rng)
        assert ade(a, b) == pytest.approx(ade(b, a))
        assert fde(a, b) == pytest.approx(fde(b, a))
        assert ade(a, c) <= ade(a, b) + ade(b, c) + 1e-12
        assert fde(a, c) <= fde(a, b) + fde(b, c) + 1e-12


def test_min_of_k(rng):
    g = traj(rng)
    samples = [traj(rng) for _ in range(5)]
    assert min_of_k(samples[:1], g) == ade(samples[0], g)
    assert min_of_k(samples + [g], g) == 0
    assert min_of_k(samples, g, fde) == min(fde(s, g) for s in samples)
    assert all(min_of_k(samples, g) <= ade(s, g) for s in samples)


def test_normalize_heatmap(rng):
    p = rng.random((8, 8))
    p /= p.sum()
    np.testing.assert_allclose(normalize_heatmap(p, (8, 8)), p)
    np.testing.assert_allclose(normalize_heatmap(np.ones((64, 64)), (32, 32)), 1 / 1024)
    for shape in ((64, 96), (50, 70), (33, 32)):
        raw = rng.random(shape)
        out = normalize_heatmap(raw, (16, 16))
        assert abs(out.sum() - 1) < 1e-9
        np.testing.assert_allclose(out, pool_loop(raw, (16, 16)), atol=1e-12)
    with pytest.raises(AllZero):
        normalize_heatmap(np.zeros((4, 4)), (2, 2))


def test_sim_examples(rng):
    p = rng.random((4, 4))
    p /= p.sum()
    assert sim(p, p) == pytest.approx(1.0)
    a, b = np.zeros((2, 2)), np.zeros((2, 2))
    a[0, 0], b[1, 1] = 1, 1
    assert sim(a, b) == 0
    with pytest.raises(ShapeMismatch):
        sim(a, np.zeros((3, 3)))


@given(maps, maps)
def test_sim_properties(x, y):
    if x.sum() == 0 or y.sum() == 0:
        return
    p, q = x / x.sum(), y / y.sum()
    assert sim(p, q) == pytest.approx(sim(q, p))
    assert -1e-12 <= sim(p, q) <= 1 + 1e-12
    assert sim(p, q) == pytest.approx(sim_loop(p, q), abs=1e-12)


def test_auc_examples(rng):
    cells = [(0, 1), (3, 2), (2, 2)]
    assert auc_judd(np.full((4, 4), 1 / 16), cells) == pytest.approx(0.5, abs=1e-6)
    p = np.zeros((4, 4))
    for c in cells:
        p[c] = 1.0
    assert 1.0 - auc_judd(p, cells) <= 1 / (2 * 16)
    for _ in range(20):
        p = rng.random((6, 7))
        assert auc_judd(p, cells) == pytest.approx(auc_judd_loop(p, cells), abs=1e-9)
    with pytest.raises(EmptyGroundTruth):
        auc_judd(p, [])


@given(maps, st.lists(st.tuples(st.integers(0, 5), st.integers(0, 4)), min_size=1, max_size=6))
def test_auc_properties(x, cells):
    a = auc_judd(x, cells)
    assert 0 <= a <= 1
    assert a == pytest.approx(auc_judd_loop(x, cells), abs=1e-9)
    # strictly monotone transform of a nonnegative map
    sq = x**2
    assert auc_judd(sq / max(sq.sum(), 1e-300), cells) == pytest.approx(a, abs=1e-9)


def test_nss_examples(rng):
    assert nss(np.full((4, 4), 0.0625), [(1, 1)]) == 0.0
    p = np.full((4, 4), 0.05)
    p[2, 3] = 0.25
    assert nss(p, [(2, 3)]) == pytest.approx((p.max() - p.mean()) / p.std(), abs=1e-12)
    for _ in range(20):
        p = rng.random((5, 5))
        cells = [(0, 0), (4, 1), (0, 0)]
        assert nss(p, cells) == pytest.approx(nss_loop(p, cells), abs=1e-9)
    with pytest.raises(EmptyGroundTruth):
        nss(p, [])


@given(maps, st.floats(0.1, 10), st.floats(-5, 5))
def test_nss_affine_invariance(x, a, b):
    cells = [(1, 1), (4, 3)]
    if x.std() < 1e-6:
        return
    assert nss(a * x + b, cells) == pytest.approx(nss(x, cells), abs=1e-9)


def test_points_to_cells():
    assert points_to_cells([(0.0, 0.0), (0.99, 0.5), (1.0, 1.0)], (4, 8)) == [(0, 0), (2, 7), (3, 7)]

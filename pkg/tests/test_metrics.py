import math

import numpy as np
import pytest

from spgen.metrics import (
    DegenerateMapError,
    SaliencyMap,
    align_saccades,
    align_scanpaths,
    batch_evaluate,
    build_saliency_map,
    congruency,
    fixation_map,
    multimatch,
    nss,
    otsu_binarize,
    otsu_from_histogram,
    otsu_threshold,
    simplify_scanpath,
)
from spgen.metrics.batch import worker_cap
from spgen.scanpath import ScanPath

from oracles import brute_align_cost, exhaustive_otsu, naive_nss, naive_saliency


def random_path(rng, lo=2, hi=8):
    return rng.uniform(0, 1, (int(rng.integers(lo, hi + 1)), 2))


# saliency maps --------------------------------------------------------------------------------


def test_single_fixation_peaks_at_its_pixel():
    s = build_saliency_map([np.array([[0.25, 0.75]])], 2.0, 16, 20)
    assert np.unravel_index(np.argmax(s.raw), s.shape) == (12, 5)
    assert s.raw.max() == 1.0


def test_coincident_fixations_collapse():
    one = build_saliency_map([np.array([[0.4, 0.6]])], 1.5, 12, 12)
    two = build_saliency_map([np.array([[0.4, 0.6], [0.4, 0.6]])], 1.5, 12, 12)
    assert one.raw.tobytes() == two.raw.tobytes()
    assert fixation_map(np.array([[0.4, 0.6], [0.4, 0.6]]), 12, 12).sum() == 1


def test_saliency_matches_naive_convolution():
    rng = np.random.default_rng(0)
    for _ in range(10):
        pts = rng.uniform(0, 1, (5, 2))
        sigma = float(rng.uniform(0.8, 3.0))
        got = build_saliency_map([pts[:2], pts[2:]], sigma, 15, 17).raw
        np.testing.assert_allclose(got, naive_saliency(pts, sigma, 15, 17), atol=1e-5)


def test_saliency_errors():
    with pytest.raises(ValueError, match="outside"):
        build_saliency_map([np.array([[1.2, 0.5]])], 1.0, 8, 8)
    with pytest.raises(ValueError):
        build_saliency_map([np.array([[0.5, 0.5]])], 0.0, 8, 8)
    with pytest.raises(ValueError):
        SaliencyMap(-np.ones((2, 2)))


def test_normalized_view_moments():
    s = SaliencyMap(np.random.default_rng(1).uniform(0, 1, (9, 9)))
    assert abs(s.normalized.mean()) < 1e-6 and abs(s.normalized.std() - 1) < 1e-6


# NSS -----------------------------------------------------------------------------------------


def test_nss_analytic_example():
    # 2 x 3 grid with mean 0 and std 1 holding 2 and -1 in its first row
    r = math.sqrt(0.75)
    p, q = (-0.5 + r) / 2, (-0.5 - r) / 2
    grid = np.array([[2.0, -1.0, p], [p, q, q]])
    assert abs(grid.mean()) < 1e-12 and abs(grid.std() - 1) < 1e-12
    sal = SaliencyMap(grid + 2.0)
    assert nss(np.array([[0.0, 0.0], [1 / 3, 0.0]]), sal) == pytest.approx(0.5, abs=1e-12)


def test_nss_all_pixels_is_zero():
    sal = SaliencyMap(np.random.default_rng(2).uniform(0, 1, (6, 7)))
    ys, xs = np.mgrid[0:6, 0:7]
    pts = np.stack([xs.ravel() / 7, ys.ravel() / 6], axis=1)
    assert abs(nss(pts, sal)) < 1e-6


def test_nss_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(100):
        sal = rng.uniform(0, 1, (9, 9))
        pts = rng.uniform(0, 1, (int(rng.integers(1, 12)), 2))
        assert nss(pts, SaliencyMap(sal)) == pytest.approx(naive_nss(pts, sal), abs=1e-6)


def test_nss_and_congruency_permutation_invariant():
    rng = np.random.default_rng(4)
    sal = SaliencyMap(rng.uniform(0, 1, (10, 10)))
    pts = rng.uniform(0, 1, (8, 2))
    perm = pts[rng.permutation(8)]
    assert nss(pts, sal) == nss(perm, sal)
    assert congruency(pts, sal) == congruency(perm, sal)


def test_nss_constant_map_raises():
    with pytest.raises(DegenerateMapError):
        nss(np.array([[0.5, 0.5]]), SaliencyMap(np.ones((4, 4))))


# Otsu / congruency ------------------------------------------------------------------------------


def test_otsu_bimodal():
    sal = SaliencyMap(np.r_[np.zeros(50), np.ones(50)].reshape(10, 10))
    t = otsu_threshold(sal)
    p = sal.normalized
    assert p.min() < t < p.max()
    fg = otsu_binarize(sal)
    assert fg.sum() == 50 and fg[p > 0].all()


def test_otsu_both_classes_non_empty():
    rng = np.random.default_rng(5)
    for _ in range(20):
        fg = SaliencyMap(rng.uniform(0, 1, (8, 8)) ** 3).binarized()
        assert 0 < fg.sum() < fg.size


def test_otsu_matches_exhaustive_search():
    rng = np.random.default_rng(6)
    for _ in range(100):
        bins = int(rng.integers(2, 24))
        counts = rng.integers(0, 30, bins) * (rng.uniform(size=bins) < 0.7)
        if np.count_nonzero(counts) < 2:
            counts[0], counts[-1] = 1, 1
        assert otsu_from_histogram(counts) == exhaustive_otsu(counts)


def test_otsu_degenerate():
    with pytest.raises(DegenerateMapError):
        otsu_from_histogram([0, 5, 0])
    with pytest.raises(DegenerateMapError):
        otsu_threshold(SaliencyMap(np.full((3, 3), 2.0)))


@pytest.fixture()
def block_map():
    s = np.zeros((10, 10))
    s[:5, :5] = 1.0
    return SaliencyMap(s)


def test_congruency_exact_cases(block_map):
    inside = np.array([[0.1, 0.1], [0.3, 0.2], [0.0, 0.4]])
    outside = np.array([[0.8, 0.8], [0.7, 0.1], [0.1, 0.9]])
    assert congruency(inside, block_map) == 1.0
    assert congruency(outside, block_map) == 0.0
    assert congruency(np.r_[inside[:2], outside[:2]], block_map) == 0.5


def test_congruency_in_unit_interval():
    rng = np.random.default_rng(7)
    for _ in range(30):
        c = congruency(rng.uniform(0, 1, (5, 2)), SaliencyMap(rng.uniform(0, 1, (7, 7))))
        assert 0.0 <= c <= 1.0


# simplification ------------------------------------------------------------------------------


def test_simplify_keeps_large_right_angle_path():
    sp = np.array([[0.1, 0.1], [0.9, 0.1], [0.9, 0.9], [0.1, 0.9]])
    np.testing.assert_array_equal(simplify_scanpath(sp), sp)


def test_simplify_merges_collinear():
    sp = np.array([[0.1, 0.5], [0.5, 0.5], [0.9, 0.5]])
    np.testing.assert_array_equal(simplify_scanpath(sp), sp[[0, 2]])
    assert isinstance(simplify_scanpath(ScanPath(sp)), ScanPath)


def test_simplify_merges_short_saccades():
    sp = np.array([[0.5, 0.5], [0.52, 0.5], [0.52, 0.53], [0.1, 0.1]])
    out = simplify_scanpath(sp, dir_thresh_deg=0.0)
    assert len(out) < len(sp)


def test_simplify_idempotent_and_never_longer():
    rng = np.random.default_rng(8)
    for _ in range(200):
        sp = random_path(rng, 1, 12)
        once = simplify_scanpath(sp)
        assert 1 <= len(once) <= len(sp)
        np.testing.assert_array_equal(simplify_scanpath(once), once)


# alignment -----------------------------------------------------------------------------------


def test_identical_alignment_is_diagonal():
    sp = random_path(np.random.default_rng(9), 5, 5)
    al = align_scanpaths(sp, sp)
    assert al.pairs == tuple((i, i) for i in range(4)) and al.cost == 0.0


def test_one_saccade_against_many():
    a = np.array([[0.0, 0.0], [0.5, 0.5]])
    b = random_path(np.random.default_rng(10), 5, 5)
    al = align_scanpaths(a, b)
    assert al.pairs == tuple((0, j) for j in range(4))


def test_alignment_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(200):
        u = rng.normal(0, 0.3, (int(rng.integers(1, 5)), 2))
        v = rng.normal(0, 0.3, (int(rng.integers(1, 5)), 2))
        al = align_saccades(u, v)
        assert al.cost == pytest.approx(brute_align_cost(u, v), abs=1e-12)
        assert al.pairs[0] == (0, 0) and al.pairs[-1] == (len(u) - 1, len(v) - 1)
        for (i, j), (a, b) in zip(al.pairs, al.pairs[1:]):
            assert (a - i, b - j) in {(0, 1), (1, 0), (1, 1)}


def test_single_fixation_aligns_trivially():
    al = align_scanpaths(np.array([[0.5, 0.5]]), np.array([[0.1, 0.1], [0.2, 0.9]]))
    assert al.pairs == ((0, 0),)


# multimatch ----------------------------------------------------------------------------------


def test_self_similarity_is_one():
    rng = np.random.default_rng(12)
    for _ in range(20):
        sp = random_path(rng, 1, 10)
        assert multimatch(sp, sp).as_tuple() == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_multimatch_symmetric_and_bounded():
    rng = np.random.default_rng(13)
    for _ in range(100):
        a, b = random_path(rng, 1, 8), random_path(rng, 1, 8)
        ab, ba = multimatch(a, b), multimatch(b, a)
        np.testing.assert_allclose(ab.as_tuple(), ba.as_tuple(), atol=1e-9)
        assert all(0.0 <= x <= 1.0 for x in ab.as_tuple())


def test_multimatch_hand_case():
    mm = multimatch(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[0.0, 0.0], [0.0, 1.0]]))
    assert mm.direction == pytest.approx(0.5)
    assert mm.length == pytest.approx(1.0)
    assert mm.position == pytest.approx(1.0)
    assert mm.shape == pytest.approx(1 - math.sqrt(2) / (2 * math.sqrt(2)))


def test_multimatch_rejects_empty():
    with pytest.raises(ValueError):
        multimatch(np.zeros((0, 2)), np.array([[0.5, 0.5]]))


# batch evaluation ------------------------------------------------------------------------------


def _mm_pairs(n, seed):
    rng = np.random.default_rng(seed)
    return [(random_path(rng, 1, 8), random_path(rng, 1, 8)) for _ in range(n)]


def test_batch_parallel_matches_sequential():
    pairs = _mm_pairs(200, 14)
    seq = batch_evaluate(pairs, "multimatch", workers=1)
    par = batch_evaluate(pairs, "multimatch", workers=4, chunk_size=7)
    assert seq == par
    assert [r.index for r in par] == list(range(200))
    assert seq[3].values == multimatch(*pairs[3]).as_tuple()


def test_batch_empty_and_invalid():
    assert batch_evaluate([], "nss", workers=4) == []
    with pytest.raises(ValueError):
        batch_evaluate([], "nss", workers=0)
    with pytest.raises(ValueError):
        batch_evaluate([], "auc")


def test_batch_records_row_errors():
    good = (np.array([[0.5, 0.5]]), SaliencyMap(np.eye(4)))
    flat = (np.array([[0.5, 0.5]]), SaliencyMap(np.ones((4, 4))))
    rows = batch_evaluate([good, flat, good], "all", workers=2)
    assert [r.ok for r in rows] == [True, False, True]
    assert "DegenerateMapError" in rows[1].error and rows[1].values is None
    assert len(rows[0].values) == 2


def test_worker_cap_env(monkeypatch):
    monkeypatch.setenv("SPGEN_THREADS", "2")
    assert worker_cap(8) == 2 and worker_cap(1) == 1
    monkeypatch.setenv("SPGEN_THREADS", "many")
    with pytest.raises(ValueError):
        worker_cap(4)
    monkeypatch.delenv("SPGEN_THREADS")
    assert worker_cap(8) == 8

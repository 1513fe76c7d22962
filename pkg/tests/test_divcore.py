import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tastediv.divcore import (
    DistanceMatrix,
    classical_mds,
    cosine_distance_matrix,
    diversity_batch,
    rao_stirling,
    read_distances,
    shannon_entropy,
    volume,
    write_distances,
)
from tastediv.ingest import ConsumptionMatrix


def naive_rao_stirling(p, d):
    total = 0.0
    for i in range(len(p)):
        for j in range(len(p)):
            total += p[i] * p[j] * d[i][j]
    return total


def dm(grid, labels=None):
    grid = np.asarray(grid, dtype=float)
    return DistanceMatrix(labels or [f"c{i}" for i in range(len(grid))], grid)


def sym(n, upper):
    d = np.zeros((n, n))
    for (i, j), v in zip(itertools.combinations(range(n), 2), upper):
        d[i, j] = d[j, i] = v
    return d


class TestCosine:
    def test_identical_columns(self):
        cm = ConsumptionMatrix(["u1", "u2"], ["a", "b"], [[0.5, 0.5], [0.5, 0.5]])
        assert cosine_distance_matrix(cm).d[0, 1] == pytest.approx(0.0, abs=1e-15)

    def test_disjoint_columns(self):
        cm = ConsumptionMatrix(["u1", "u2"], ["a", "b"], [[1.0, 0.0], [0.0, 1.0]])
        assert cosine_distance_matrix(cm).d[0, 1] == 1.0

    def test_hand_computed(self):
        # columns (1, 1) and (1, 0); rows need not be normalized for the geometry
        cm = ConsumptionMatrix(["u1", "u2"], ["a", "b"], [[1.0, 1.0], [1.0, 0.0]])
        assert cosine_distance_matrix(cm).d[0, 1] == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-12)

    def test_zero_column_named(self):
        cm = ConsumptionMatrix(["u1"], ["a", "b"], [[1.0, 0.0]])
        with pytest.raises(ValueError, match="'b'"):
            cosine_distance_matrix(cm)

    @settings(max_examples=100, deadline=None)
    @given(arrays(float, (5, 4), elements=st.floats(0.01, 1.0)))
    def test_distance_invariants(self, x):
        x = x / x.sum(axis=1, keepdims=True)
        d = cosine_distance_matrix(ConsumptionMatrix([f"u{i}" for i in range(5)], list("abcd"), x)).d
        assert np.all(np.diag(d) == 0)
        assert np.array_equal(d, d.T)
        assert d.min() >= 0 and d.max() <= 1

    def test_roundtrip_csv(self, tmp_path):
        d = dm(sym(3, [0.25, 1.0, 0.5]), ["x", "y", "z"])
        write_distances(tmp_path / "d.csv", d)
        back = read_distances(tmp_path / "d.csv")
        assert back.categories == ["x", "y", "z"]
        np.testing.assert_allclose(back.d, d.d)
        assert (tmp_path / "d.csv").read_text().splitlines()[1] == "x,0.000000,0.250000,1.000000"


class TestRaoStirling:
    def test_single_category(self):
        assert rao_stirling([1.0], dm([[0.0]])) == 0.0

    def test_two_far_categories(self):
        assert rao_stirling([0.5, 0.5], dm(sym(2, [1.0]))) == pytest.approx(0.5)

    def test_three_categories(self):
        d = sym(3, [0.2, 1.0, 0.5])
        expected = naive_rao_stirling([0.6, 0.3, 0.1], d)
        assert expected == pytest.approx(0.222, abs=1e-12)
        assert rao_stirling([0.6, 0.3, 0.1], dm(d)) == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            rao_stirling([0.5, 0.5], dm(sym(3, [1, 1, 1])))


class TestBaselines:
    @pytest.mark.parametrize(
        "p, expected",
        [([1.0], 0.0), ([0.25] * 4, math.log(4)), ([0.9, 0.1], 0.3250829733914482)],
    )
    def test_entropy(self, p, expected):
        oracle = -sum(x * math.log(x) for x in p if x > 0)
        assert oracle == pytest.approx(expected, abs=1e-12)
        assert shannon_entropy(p) == pytest.approx(expected, abs=1e-12)

    def test_entropy_zero_entries(self):
        assert shannon_entropy([0.5, 0.5, 0.0]) == pytest.approx(math.log(2))

    @pytest.mark.parametrize("p, n", [([0.5, 0.5, 0], 2), ([1.0], 1), ([0.99, 0.01], 2)])
    def test_volume(self, p, n):
        assert volume(p) == n

    def test_volume_ignores_balance(self):
        assert volume([0.99, 0.01]) == volume([0.5, 0.5])

    def test_volume_eps(self):
        assert volume([0.99, 0.01], eps=0.05) == 1


class TestBatch:
    def test_order_and_consistency(self):
        cm = ConsumptionMatrix(["b", "a"], ["x", "y"], [[0.5, 0.5], [1.0, 0.0]])
        d = dm(sym(2, [0.8]), ["x", "y"])
        reports = diversity_batch(cm, d)
        assert [r.user_id for r in reports] == ["b", "a"]
        assert reports[0].rao_stirling == rao_stirling([0.5, 0.5], d)
        assert reports[1].volume == 1 and reports[1].entropy == 0.0

    def test_empty(self):
        cm = ConsumptionMatrix([], ["x", "y"], np.zeros((0, 2)))
        assert diversity_batch(cm, dm(sym(2, [1.0]), ["x", "y"])) == []

    def test_category_mismatch(self):
        cm = ConsumptionMatrix(["a"], ["x", "y"], [[0.5, 0.5]])
        with pytest.raises(ValueError):
            diversity_batch(cm, dm(sym(2, [1.0]), ["y", "x"]))


@st.composite
def instances(draw, max_n=6):
    n = draw(st.integers(1, max_n))
    raw = draw(arrays(float, n, elements=st.floats(0.0, 1.0)))
    if raw.sum() == 0:
        raw[0] = 1.0
    p = raw / raw.sum()
    upper = draw(arrays(float, n * (n - 1) // 2, elements=st.floats(0.0, 1.0)))
    return p, sym(n, upper)


@settings(max_examples=300, deadline=None)
@given(instances())
def test_brute_force_equivalence(inst):
    p, d = inst
    assert rao_stirling(p, d) == pytest.approx(naive_rao_stirling(p, d), abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(instances())
def test_bounds(inst):
    p, d = inst
    rs = rao_stirling(p, d)
    gini_simpson = 1 - float((p**2).sum())
    assert -1e-15 <= rs <= gini_simpson * d.max() + 1e-12
    assert shannon_entropy(p) <= math.log(volume(p)) + 1e-12
    if volume(p) == 1:
        assert shannon_entropy(p) == 0.0
        assert rs == 0.0


@settings(max_examples=200, deadline=None)
@given(instances(), st.randoms(use_true_random=False))
def test_permutation_invariance(inst, rnd):
    p, d = inst
    perm = list(range(len(p)))
    rnd.shuffle(perm)
    q, e = p[perm], d[np.ix_(perm, perm)]
    assert rao_stirling(q, e) == pytest.approx(rao_stirling(p, d), abs=1e-12)
    assert shannon_entropy(q) == pytest.approx(shannon_entropy(p), abs=1e-12)
    assert volume(q) == volume(p)


@settings(max_examples=200, deadline=None)
@given(instances(), st.floats(0.0, 1.0))
def test_distance_scaling(inst, alpha):
    p, d = inst
    assert rao_stirling(p, alpha * d) == pytest.approx(alpha * rao_stirling(p, d), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 3, elements=st.floats(0.0, 0.9)), st.integers(0, 2), st.floats(0.01, 0.1))
def test_disparity_sensitivity(upper, which, bump):
    p = np.full(3, 1 / 3)
    d = sym(3, upper)
    bumped = upper.copy()
    bumped[which] += bump
    assert rao_stirling(p, sym(3, bumped)) > rao_stirling(p, d)
    assert shannon_entropy(p) == pytest.approx(math.log(3))
    assert volume(p) == 3


def embedded_distances(coords):
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


class TestMds:
    def test_equilateral(self):
        emb = classical_mds(dm(sym(3, [1, 1, 1])))
        np.testing.assert_allclose(embedded_distances(emb.coords), sym(3, [1, 1, 1]), atol=1e-9)
        assert not emb.degenerate

    def test_collinear(self):
        d = sym(3, [1, 2, 1])
        emb = classical_mds(dm(d))
        assert abs(emb.eigenvalues[1]) < 1e-9
        assert emb.degenerate and emb.coords.shape == (3, 1)
        np.testing.assert_allclose(embedded_distances(emb.coords), d, atol=1e-9)

    def test_needs_three(self):
        with pytest.raises(ValueError):
            classical_mds(dm(sym(2, [1])))

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, (6, 2), elements=st.floats(-1, 1)))
    def test_fidelity_for_planar_points(self, pts):
        d = embedded_distances(pts)
        emb = classical_mds(dm(d))
        assert emb.eigenvalues[0] >= emb.eigenvalues[1]
        np.testing.assert_allclose(emb.coords.mean(axis=0), 0, atol=1e-9)
        if not emb.degenerate:
            np.testing.assert_allclose(embedded_distances(emb.coords), d, atol=1e-6)

    def test_relabeling(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(7, 2))
        d = embedded_distances(pts)
        perm = rng.permutation(7)
        a = classical_mds(dm(d))
        b = classical_mds(dm(d[np.ix_(perm, perm)]))
        np.testing.assert_allclose(np.abs(b.coords), np.abs(a.coords[perm]), atol=1e-9)

    def test_sign_convention(self):
        rng = np.random.default_rng(5)
        emb = classical_mds(dm(embedded_distances(rng.normal(size=(5, 2)))))
        for k in range(emb.coords.shape[1]):
            col = emb.coords[:, k]
            assert col[np.argmax(np.abs(col))] > 0

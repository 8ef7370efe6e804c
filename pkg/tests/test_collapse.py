import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nclab.collapse import (
    DegenerateGeometryError,
    MissingClassError,
    class_statistics,
    group_class_statistics,
    nc1_per_group,
    nc1_variability,
    nc2_equiangularity,
    nc2_equinorm,
    nc3_self_duality,
    nc4_mismatch,
    nc_configuration_distance,
    nc_report,
    weighted_group_nc1,
)
from nclab.nnet import FeatureBatch


def fb(features, labels, groups=None):
    return FeatureBatch(np.asarray(features, dtype=float), labels, groups)


# ---------------------------------------------------------------- naive oracles

def naive_means(h, y, k_total):
    means = []
    for k in range(k_total):
        acc = [0.0] * h.shape[1]
        count = 0
        for i in range(len(y)):
            if y[i] == k:
                count += 1
                for j in range(h.shape[1]):
                    acc[j] += h[i, j]
        means.append([a / count for a in acc])
    glob = [sum(m[j] for m in means) / k_total for j in range(h.shape[1])]
    return means, glob


def naive_norm(v):
    return math.sqrt(sum(x * x for x in v))


def naive_nc1(h, y, rows=None):
    means, _ = naive_means(h, y, int(max(y)) + 1)
    rows = range(len(y)) if rows is None else rows
    dists = [naive_norm([h[i, j] - means[y[i]][j] for j in range(h.shape[1])]) for i in rows]
    return sum(dists) / len(dists)


def naive_centered(h, y, k_total):
    means, glob = naive_means(h, y, k_total)
    return [[m[j] - glob[j] for j in range(len(glob))] for m in means]


def naive_equinorm(h, y, k_total):
    norms = [naive_norm(c) for c in naive_centered(h, y, k_total)]
    mean = sum(norms) / k_total
    var = sum((n - mean) ** 2 for n in norms) / k_total
    return math.sqrt(var) / mean


def naive_equiangular(h, y, k_total):
    cent = naive_centered(h, y, k_total)
    unit = [[x / naive_norm(c) for x in c] for c in cent]
    vals = []
    for a in range(k_total):
        for b in range(a + 1, k_total):
            vals.append(abs(sum(p * q for p, q in zip(unit[a], unit[b])) + 1 / (k_total - 1)))
    return sum(vals) / len(vals)


def naive_selfdual(h, y, w):
    cent = naive_centered(h, y, w.shape[0])
    mn = math.sqrt(sum(x * x for row in cent for x in row))
    wn = math.sqrt(sum(x * x for x in w.ravel()))
    return math.sqrt(sum((cent[k][j] / mn - w[k, j] / wn) ** 2 for k in range(w.shape[0]) for j in range(w.shape[1])))


def naive_nc4(h, y, w):
    means, _ = naive_means(h, y, w.shape[0])
    miss = 0
    for i in range(len(y)):
        scores = [sum(h[i, j] * w[k, j] for j in range(h.shape[1])) for k in range(w.shape[0])]
        dists = [naive_norm([h[i, j] - means[k][j] for j in range(h.shape[1])]) for k in range(w.shape[0])]
        lin = max(range(len(scores)), key=lambda k: (scores[k], -k))
        near = min(range(len(dists)), key=lambda k: (dists[k], k))
        miss += lin != near
    return miss / len(y)


def naive_divergence(h, y, g):
    dists = []
    for k in sorted(set(y)):
        cells = []
        for grp in (0, 1):
            rows = [i for i in range(len(y)) if y[i] == k and g[i] == grp]
            cells.append([sum(h[i, j] for i in rows) / len(rows) for j in range(h.shape[1])])
        dists.append(naive_norm([a - b for a, b in zip(*cells)]))
    return sum(dists) / len(dists)


def random_instance(seed, k_total=None):
    rng = np.random.default_rng(seed)
    k_total = k_total or int(rng.integers(2, 5))
    n = int(rng.integers(4 * k_total, 200))
    p = int(rng.integers(1, 9))
    y = np.r_[np.arange(k_total), np.arange(k_total), rng.integers(0, k_total, n - 2 * k_total)]
    g = np.r_[np.zeros(k_total), np.ones(k_total), rng.integers(0, 2, n - 2 * k_total)].astype(int)
    h = rng.normal(size=(n, p)) * rng.uniform(0.1, 3) + rng.normal(size=p)
    w = rng.normal(size=(k_total, p))
    return h, y, g, w


# ---------------------------------------------------------------- examples

class TestClassStatistics:
    def test_hand_example(self):
        st_ = class_statistics(fb([[1, 0], [3, 0], [0, 2], [0, 4]], [0, 0, 1, 1]))
        np.testing.assert_allclose(st_.class_means, [[2, 0], [0, 3]])
        np.testing.assert_allclose(st_.global_mean, [1, 1.5])
        np.testing.assert_allclose(np.linalg.norm(st_.normalized_means, axis=1), 1.0)

    def test_identical_features_degenerate(self):
        st_ = class_statistics(fb(np.ones((4, 3)), [0, 1, 0, 1]))
        assert st_.degenerate.all()
        np.testing.assert_array_equal(st_.class_means[0], st_.class_means[1])

    def test_single_sample_per_class(self):
        st_ = class_statistics(fb([[5, -1], [2, 2]], [0, 1]))
        np.testing.assert_array_equal(st_.class_means, [[5, -1], [2, 2]])

    def test_missing_class(self):
        with pytest.raises(MissingClassError, match="class 1"):
            class_statistics(fb([[1.0], [2.0]], [0, 0]), num_classes=2)

    def test_global_mean_unweighted(self):
        st_ = class_statistics(fb([[0.0], [0.0], [0.0], [4.0]], [0, 0, 0, 1]))
        assert st_.global_mean[0] == 2.0


class TestNC1:
    def test_zero_at_class_means(self):
        b = fb([[1, 1], [1, 1], [4, 0]], [0, 0, 1])
        assert nc1_variability(b, class_statistics(b)) == 0.0

    def test_one_dimensional_example(self):
        b = fb([[0], [2], [4], [6]], [0, 0, 1, 1], [0, 0, 1, 1])
        s = class_statistics(b)
        assert nc1_variability(b, s) == 1.0
        assert nc1_per_group(b, s) == {0: 1.0, 1: 1.0}

    def test_single_group_equals_global(self):
        h, y, _, _ = random_instance(1)
        b = fb(h, y, np.zeros(len(y), dtype=int))
        s = class_statistics(b)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            per = nc1_per_group(b, s)
        assert per == {0: pytest.approx(nc1_variability(b, s), abs=1e-15)}

    def test_empty_group_warns(self):
        b = fb([[0], [1]], [0, 1], [1, 1])
        with pytest.warns(UserWarning, match="group 0"):
            out = nc1_per_group(b, class_statistics(b))
        assert set(out) == {1}

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-50, 50), st.floats(-50, 50))
    def test_translation_invariance(self, seed, dx, dy):
        rng = np.random.default_rng(seed)
        h = rng.normal(size=(30, 2))
        y = np.r_[0, 1, rng.integers(0, 2, 28)]
        b1, b2 = fb(h, y), fb(h + [dx, dy], y)
        assert nc1_variability(b2, class_statistics(b2)) == pytest.approx(
            nc1_variability(b1, class_statistics(b1)), rel=1e-9, abs=1e-9)

    @pytest.mark.parametrize("seed", range(100))
    def test_weighted_identity(self, seed):
        h, y, g, _ = random_instance(seed)
        b = fb(h, y, g)
        s = class_statistics(b)
        assert abs(weighted_group_nc1(nc1_per_group(b, s), b) - nc1_variability(b, s)) < 1e-12


class TestNC2:
    def test_binary_equinorm_is_zero(self):
        h, y, _, _ = random_instance(5, k_total=2)
        assert nc2_equinorm(class_statistics(fb(h, y))) < 1e-12

    def test_three_class_equinorm_by_hand(self):
        s = class_statistics(fb([[1, 0], [0, 1], [-1, 0]], [0, 1, 2]))
        norms = np.array([math.sqrt(10) / 3, 2 / 3, math.sqrt(10) / 3])
        np.testing.assert_allclose(np.linalg.norm(s.centered_means, axis=1), norms, atol=1e-15)
        assert nc2_equinorm(s) == pytest.approx(norms.std() / norms.mean(), abs=1e-15)

    def test_equinorm_scale_invariant(self):
        h, y, _, _ = random_instance(9, k_total=4)
        a = nc2_equinorm(class_statistics(fb(h, y)))
        assert nc2_equinorm(class_statistics(fb(7.5 * h, y))) == pytest.approx(a, rel=1e-12)

    def test_binary_equiangular_zero(self):
        h, y, _, _ = random_instance(11, k_total=2)
        s = class_statistics(fb(h, y))
        assert float(s.normalized_means[0] @ s.normalized_means[1]) == pytest.approx(-1.0, abs=1e-12)
        assert nc2_equiangularity(s) < 1e-12

    def test_equilateral_triangle(self):
        angles = np.deg2rad([90, 210, 330])
        pts = np.c_[np.cos(angles), np.sin(angles)]
        assert nc2_equiangularity(class_statistics(fb(pts, [0, 1, 2]))) < 1e-12

    def test_orthogonal_means(self):
        # three orthonormal class means shifted so their centred versions are orthogonal
        basis = np.eye(3)
        s = class_statistics(fb(basis, [0, 1, 2]))
        s.normalized_means = basis  # direct evaluation on orthonormal unit means
        assert nc2_equiangularity(s) == pytest.approx(0.5, abs=1e-15)

    def test_degenerate_raises(self):
        s = class_statistics(fb(np.ones((2, 2)), [0, 1]))
        with pytest.raises(DegenerateGeometryError):
            nc2_equiangularity(s)
        with pytest.raises(DegenerateGeometryError):
            nc2_equinorm(s)


class TestNC3:
    def setup_method(self):
        h, y, _, _ = random_instance(21, k_total=3)
        self.s = class_statistics(fb(h, y))

    def test_exact_self_duality(self):
        assert nc3_self_duality(self.s, self.s.centered_means) < 1e-12

    def test_rescaled(self):
        assert nc3_self_duality(self.s, 4.2 * self.s.centered_means) < 1e-12

    def test_negated_is_two(self):
        assert nc3_self_duality(self.s, -self.s.centered_means) == pytest.approx(2.0, abs=1e-12)

    def test_zero_weights_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            nc3_self_duality(self.s, np.zeros_like(self.s.class_means))


class TestNC4:
    def _clusters(self):
        rng = np.random.default_rng(0)
        centres = np.array([[5.0, 0.0], [-5.0, 0.0]])
        y = np.repeat([0, 1], 50)
        return centres[y] + 0.1 * rng.normal(size=(100, 2)), y

    def test_ncc_aligned(self):
        h, y = self._clusters()
        b = fb(h, y)
        s = class_statistics(b)
        assert nc4_mismatch(b, s, s.centered_means) == 0.0

    def test_flipped_weights(self):
        h, y = self._clusters()
        b = fb(h, y)
        s = class_statistics(b)
        assert nc4_mismatch(b, s, -s.centered_means) == 1.0

    def test_single_sample_range(self):
        b = fb([[1.0, 2.0], [0.0, 0.0]], [0, 1])
        s = class_statistics(b)
        one = fb([[1.0, 2.0]], [0])
        assert nc4_mismatch(one, s, np.array([[1.0, -1.0], [0.5, 0.5]])) in (0.0, 1.0)


class TestGroupConfigurations:
    def test_one_sample_per_cell(self):
        h = np.array([[0.0, 1], [2, 3], [4, 5], [6, 7]])
        gs = group_class_statistics(fb(h, [0, 0, 1, 1], [0, 1, 0, 1]))
        np.testing.assert_array_equal(gs.means[(1, 0)], [4, 5])
        assert gs.counts == {(0, 0): 1, (0, 1): 1, (1, 0): 1, (1, 1): 1}

    def test_single_group_partition(self):
        h, y, _, _ = random_instance(2, k_total=2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gs = group_class_statistics(fb(h, y, np.zeros(len(y), dtype=int)))
        s = class_statistics(fb(h, y))
        for k in (0, 1):
            np.testing.assert_allclose(gs.means[(k, 0)], s.class_means[k], atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_weighted_consistency(self, seed):
        h, y, g, _ = random_instance(seed)
        gs = group_class_statistics(fb(h, y, g))
        s = class_statistics(fb(h, y))
        for k in range(s.num_classes):
            rebuilt = sum(gs.counts[(k, a)] * gs.means[(k, a)] for a in (0, 1) if (k, a) in gs.means)
            np.testing.assert_allclose(rebuilt, s.class_counts[k] * s.class_means[k], atol=1e-9)

    def test_distance_hand_example(self):
        from nclab.collapse import GroupClassStatistics

        gs = GroupClassStatistics(
            means={(0, 0): np.array([0.0, 0.0]), (0, 1): np.array([3.0, 4.0]),
                   (1, 0): np.array([1.0, 1.0]), (1, 1): np.array([1.0, 1.0])},
            counts={},
        )
        assert nc_configuration_distance(gs) == 2.5

    def test_identical_cells_zero_and_symmetry(self):
        h = np.array([[1.0], [1.0], [2.0], [2.0]])
        assert nc_configuration_distance(group_class_statistics(fb(h, [0, 0, 1, 1], [0, 1, 0, 1]))) == 0.0
        hr, yr, gr, _ = random_instance(3)
        a = nc_configuration_distance(group_class_statistics(fb(hr, yr, gr)))
        b = nc_configuration_distance(group_class_statistics(fb(hr, yr, 1 - gr)))
        assert a == pytest.approx(b, abs=1e-15)


@pytest.mark.parametrize("seed", range(100))
def test_brute_force_equivalence(seed):
    h, y, g, w = random_instance(seed)
    b = fb(h, y, g)
    s = class_statistics(b)
    k_total = s.num_classes
    assert abs(nc1_variability(b, s) - naive_nc1(h, y)) < 1e-10
    per = nc1_per_group(b, s)
    for grp in (0, 1):
        rows = [i for i in range(len(y)) if g[i] == grp]
        assert abs(per[grp] - naive_nc1(h, y, rows)) < 1e-10
    assert abs(nc2_equinorm(s) - naive_equinorm(h, y, k_total)) < 1e-10
    assert abs(nc2_equiangularity(s) - naive_equiangular(h, y, k_total)) < 1e-10
    assert abs(nc3_self_duality(s, w) - naive_selfdual(h, y, w)) < 1e-10
    assert abs(nc4_mismatch(b, s, w) - naive_nc4(h, y, w)) < 1e-10
    assert abs(nc_configuration_distance(group_class_statistics(b)) - naive_divergence(h, y, g)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_report_ranges(seed):
    h, y, g, w = random_instance(seed)
    r = nc_report(fb(h, y, g), w)
    for v in (r.nc1_global, r.nc2_equinorm, r.nc2_equiangular, r.nc3_selfdual, r.config_divergence):
        assert v >= 0 and math.isfinite(v)
    assert 0.0 <= r.nc4_mismatch <= 1.0


def test_centred_metrics_translation_invariant():
    h, y, g, w = random_instance(4)
    a = nc_report(fb(h, y, g), w)
    b = nc_report(fb(h + 13.0, y, g), w)
    for name in ("nc2_equinorm", "nc2_equiangular", "nc3_selfdual"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-9)

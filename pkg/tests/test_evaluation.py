import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_params
from rdlearn.evaluation import (
    EmpiricalEnergyDist,
    exact_divergences,
    fit_pca,
    hamming_histogram,
    mean_stderr,
    project,
    r_theta,
    wasserstein_1d,
)
from rdlearn.rbm import RbmParams, free_energy
from rdlearn.targets import MisInstance, TargetModel, effective_energy, sample_sk_couplings

samples_1d = st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=30)


def random_simplex(rng, n):
    v = rng.exponential(size=n) + 1e-3
    return v / v.sum()


def wasserstein_quadrature(a, b, per_unit=1000):
    """Midpoint sum of |F_a - F_b| for integer-valued samples; grid nodes land on every jump."""
    a, b = np.sort(a), np.sort(b)
    lo, hi = min(a[0], b[0]), max(a[-1], b[-1])
    t = np.linspace(lo, hi, int(hi - lo) * per_unit + 1)
    mid = 0.5 * (t[1:] + t[:-1])
    fa = np.searchsorted(a, mid, side="right") / a.size
    fb = np.searchsorted(b, mid, side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * np.diff(t)))


class TestRTheta:
    def test_two_point(self):
        # zero RBM has constant F; MIS energy -|x| gives residuals c and c + 2
        t = TargetModel(MisInstance(2, np.zeros((0, 2), dtype=int), 2.0))
        p = RbmParams.zeros(2, 1)
        assert r_theta(p, t, np.array([[0, 0], [1, 1]])) == pytest.approx(2.0, rel=1e-14)

    def test_perfect_fit_zero(self):
        t = TargetModel(MisInstance(3, np.zeros((0, 2), dtype=int), 2.0))
        p = RbmParams(np.zeros((3, 2)), np.ones(3), np.zeros(2))
        assert r_theta(p, t, np.array([[1, 0, 1], [0, 0, 0], [1, 1, 1]])) == pytest.approx(0.0, abs=1e-13)

    def test_matches_pair_double_loop(self, rng):
        t = TargetModel(sample_sk_couplings(6, rng), 0.9)
        p = random_params(rng, 6, 4)
        val = rng.integers(0, 2, (25, 6))
        f, e = free_energy(p, val), effective_energy(t, val)
        ref = sum(((f[i] - f[j]) - (e[i] - e[j])) ** 2 for i in range(25) for j in range(25)) / 625
        assert r_theta(p, t, val) == pytest.approx(ref, rel=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            r_theta(RbmParams.zeros(2, 1), TargetModel(MisInstance(2, np.zeros((0, 2), dtype=int))), np.zeros((0, 2)))


class TestWasserstein:
    def test_point_masses(self):
        assert wasserstein_1d([3.0], [7.0]) == 4.0

    def test_identical(self):
        assert wasserstein_1d([1.0, 2.0, 2.0, 5.0], [5.0, 2.0, 1.0, 2.0]) == 0.0

    def test_shift(self, rng):
        a = rng.normal(size=100)
        assert wasserstein_1d(a, a + 0.75) == pytest.approx(0.75, rel=1e-12)

    def test_against_quadrature(self, rng):
        for _ in range(5):
            a = rng.integers(-20, 20, size=int(rng.integers(1, 40))).astype(float)
            b = rng.integers(-20, 20, size=int(rng.integers(1, 40))).astype(float)
            assert wasserstein_1d(a, b) == pytest.approx(wasserstein_quadrature(a, b), abs=1e-8)

    @settings(max_examples=100)
    @given(samples_1d, samples_1d)
    def test_scipy_cross_check(self, a, b):
        assert wasserstein_1d(a, b) == pytest.approx(scipy.stats.wasserstein_distance(a, b), rel=1e-9, abs=1e-9)

    @given(samples_1d, samples_1d, samples_1d)
    def test_metric_axioms(self, a, b, c):
        ab, ba = wasserstein_1d(a, b), wasserstein_1d(b, a)
        assert ab >= 0
        assert ab == pytest.approx(ba, abs=1e-9)
        assert wasserstein_1d(a, a) == 0.0
        assert ab <= wasserstein_1d(a, c) + wasserstein_1d(c, b) + 1e-9

    def test_empirical_dist(self, rng):
        t = TargetModel(sample_sk_couplings(5, rng), 2.0)
        x = rng.integers(0, 2, (30, 5))
        d = EmpiricalEnergyDist.of(t, x)
        assert len(d) == 30 and np.all(np.diff(d.values) >= 0)
        assert wasserstein_1d(d, effective_energy(t, x)) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            wasserstein_1d([], [1.0])


class TestPca:
    def test_single_axis_data(self):
        x = np.zeros((10, 4))
        x[5:, 0] = 1.0
        x[::5, 2] = 1.0
        pca = fit_pca(x)
        np.testing.assert_allclose(np.abs(pca.components[0]), [1, 0, 0, 0], atol=1e-12)
        assert pca.components[0][0] > 0

    def test_orthonormal_and_ordered(self, rng):
        pca = fit_pca(rng.integers(0, 2, (200, 12)))
        np.testing.assert_allclose(pca.components @ pca.components.T, np.eye(2), atol=1e-12)
        assert pca.explained_variance[0] >= pca.explained_variance[1]

    def test_variance_matches_numpy_svd(self, rng):
        x = rng.integers(0, 2, (300, 9)).astype(float)
        x[:, 3] = x[:, 1]
        xc = x - x.mean(axis=0)
        s = np.linalg.svd(xc, compute_uv=False)
        pca = fit_pca(x)
        np.testing.assert_allclose(pca.explained_variance, s[:2] ** 2 / 299, rtol=1e-10)

    def test_full_spectrum_reconstruction(self, rng):
        x = rng.integers(0, 2, (50, 5)).astype(float)
        pca = fit_pca(x, n_components=5)
        z = project(pca, x)
        np.testing.assert_allclose(z @ pca.components + pca.mean, x, atol=1e-10)

    def test_projection_contracts_distances(self, rng):
        x = rng.integers(0, 2, (40, 8))
        z = project(fit_pca(x), x)
        dz = np.linalg.norm(z[:, None] - z[None], axis=-1)
        dx = np.linalg.norm(x[:, None] - x[None], axis=-1)
        assert np.all(dz <= dx + 1e-10)

    def test_projection_of_mean_is_origin(self, rng):
        x = rng.integers(0, 2, (40, 6))
        pca = fit_pca(x)
        np.testing.assert_allclose(project(pca, pca.mean), [[0.0, 0.0]], atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(ValueError, match="nonzero variance"):
            fit_pca(np.ones((10, 4)))
        x = np.zeros((10, 4))
        x[5:] = 1  # all columns identical: rank one
        with pytest.raises(ValueError, match="nonzero variance"):
            fit_pca(x)
        with pytest.raises(ValueError):
            fit_pca(np.eye(2))

    def test_dimension_mismatch(self, rng):
        pca = fit_pca(rng.integers(0, 2, (20, 5)))
        with pytest.raises(ValueError):
            project(pca, np.zeros((3, 4)))


class TestHamming:
    def test_complement_pair(self):
        h = hamming_histogram(np.array([[0, 0, 0, 0], [1, 1, 1, 1]]), 2, np.random.default_rng(0))
        np.testing.assert_array_equal(h, [1.0])

    def test_identical(self):
        h = hamming_histogram(np.ones((6, 5), dtype=np.uint8), 6, np.random.default_rng(0))
        assert h.shape == (15,)
        np.testing.assert_array_equal(h, 0.0)

    def test_matches_loop(self, rng):
        x = rng.integers(0, 2, (8, 7))
        h = hamming_histogram(x, 8, np.random.default_rng(3))
        ref = sorted(np.sum(x[i] != x[j]) / 7 for i in range(8) for j in range(i + 1, 8))
        np.testing.assert_allclose(np.sort(h), ref)

    def test_bad_k(self, rng):
        with pytest.raises(ValueError):
            hamming_histogram(np.zeros((3, 2)), 4, rng)


class TestExactDivergences:
    def test_equal_distributions(self, rng):
        p = random_simplex(rng, 6)
        ex = exact_divergences(p, p)
        for v in (ex.kl_fwd, ex.kl_rev, ex.kl2_fwd, ex.kl2_rev, ex.ratio_div):
            assert v == pytest.approx(0.0, abs=1e-15)
        assert ex.mh_acceptance_expectation == pytest.approx(1.0, abs=1e-15)

    def test_two_state_closed_form(self):
        p, q = np.array([0.5, 0.5]), np.array([0.25, 0.75])
        d = math.log(0.5 / 0.25) - math.log(0.5 / 0.75)
        # pairs (x', x) with different states contribute d^2
        expected = (0.5 * 0.75 + 0.5 * 0.25) * d * d
        assert exact_divergences(p, q).ratio_div == pytest.approx(expected, rel=1e-14)

    def test_decomposition_identity(self, rng):
        for _ in range(200):
            p, q = random_simplex(rng, 5), random_simplex(rng, 5)
            ex = exact_divergences(p, q, check=False)
            assert ex.decomposition == pytest.approx(ex.ratio_div, rel=1e-12, abs=1e-14)

    def test_acceptance_bound(self):
        rng = np.random.default_rng(99)
        violations = 0
        for _ in range(10_000):
            n = int(rng.integers(2, 9))
            ex = exact_divergences(random_simplex(rng, n), random_simplex(rng, n))
            violations += math.exp(-math.sqrt(ex.ratio_div)) > ex.mh_acceptance_expectation + 1e-15
        assert violations == 0

    @settings(max_examples=100)
    @given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4), st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4))
    def test_symmetric_nonnegative(self, a, b):
        p, q = np.array(a) / sum(a), np.array(b) / sum(b)
        pq, qp = exact_divergences(p, q), exact_divergences(q, p)
        assert pq.ratio_div == pytest.approx(qp.ratio_div, rel=1e-10, abs=1e-14)
        assert pq.ratio_div >= 0
        if not np.allclose(p, q, atol=1e-6):
            assert pq.ratio_div > 0

    def test_zero_entry(self):
        with pytest.raises(ValueError, match="zero"):
            exact_divergences([0.0, 1.0], [0.5, 0.5])
        with pytest.raises(ValueError, match="sums to"):
            exact_divergences([0.5, 0.6], [0.5, 0.5])


class TestMeanStderr:
    def test_values(self):
        m, se = mean_stderr([1.0, 2.0, 3.0, 4.0])
        assert m == 2.5
        assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)

    def test_single(self):
        m, se = mean_stderr([7.0])
        assert m == 7.0 and math.isnan(se)

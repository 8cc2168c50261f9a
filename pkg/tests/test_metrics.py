"""Tests for subspace distances, the mean subspace, and distance traces."""

import warnings

import numpy as np
import pytest

from manifoldmc import geometry, metrics
from helpers import random_grassmann_pair


@pytest.fixture
def rng():
    return np.random.default_rng(414213)


def fibonacci_lines(n):
    """n quasi-uniform line representatives on G_{3,1} (half sphere)."""
    i = np.arange(n)
    phi = (1 + np.sqrt(5)) / 2
    z = 1 - (i + 0.5) / n  # only z >= 0 after folding
    theta = 2 * np.pi * i / phi
    r = np.sqrt(np.clip(1 - z**2, 0, None))
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
    pts[pts[:, 2] < 0] *= -1.0
    return pts[:, :, None]


class TestPrincipalAngles:
    def test_self_zero(self, rng):
        x = geometry.random_uniform(6, 3, rng)
        assert np.allclose(metrics.principal_angles(x, x), 0.0, atol=1e-7)

    def test_orthogonal_spans(self):
        x = np.eye(4)[:, :2]
        y = np.eye(4)[:, 2:]
        assert np.allclose(metrics.principal_angles(x, y), np.pi / 2, atol=1e-12)

    def test_sorted_and_bounded(self, rng):
        for _ in range(10):
            x = geometry.random_uniform(7, 3, rng)
            y = geometry.random_uniform(7, 3, rng)
            th = metrics.principal_angles(x, y)
            assert np.all(np.diff(th) >= 0)
            assert np.all(th >= 0) and np.all(th <= np.pi / 2 + 1e-12)

    def test_known_rotation(self):
        """Rotating a line by alpha gives a single principal angle alpha."""
        x = np.array([[1.0], [0.0]])
        for alpha in (0.1, 0.6, 1.2, 1.5):
            y = np.array([[np.cos(alpha)], [np.sin(alpha)]])
            assert abs(metrics.principal_angles(x, y)[0] - alpha) < 1e-9
            assert abs(metrics.pf_distance(x, y) - np.sin(alpha)) < 1e-9
            assert abs(metrics.geodesic_distance(x, y) - alpha) < 1e-9


class TestDistances:
    def test_projector_identity(self, rng):
        """pf distance equals ||XX^T - YY^T||_F / sqrt(2)."""
        for _ in range(20):
            x = geometry.random_uniform(8, 3, rng)
            y = geometry.random_uniform(8, 3, rng)
            direct = np.linalg.norm(x @ x.T - y @ y.T) / np.sqrt(2)
            assert abs(metrics.pf_distance(x, y) - direct) < 1e-10

    def test_rotation_invariance(self, rng):
        for _ in range(10):
            x = geometry.random_uniform(6, 2, rng)
            y = geometry.random_uniform(6, 2, rng)
            q = np.linalg.qr(rng.standard_normal((2, 2)))[0]
            r = np.linalg.qr(rng.standard_normal((2, 2)))[0]
            assert abs(metrics.pf_distance(x @ q, y @ r) - metrics.pf_distance(x, y)) < 1e-12
            assert (
                abs(metrics.geodesic_distance(x @ q, y @ r) - metrics.geodesic_distance(x, y))
                < 1e-12
            )

    def test_metric_axioms(self, rng):
        """Symmetry and the triangle inequality on random triples."""
        for _ in range(1000):
            x = geometry.random_uniform(5, 2, rng)
            y = geometry.random_uniform(5, 2, rng)
            z = geometry.random_uniform(5, 2, rng)
            dxy = metrics.pf_distance(x, y)
            dyx = metrics.pf_distance(y, x)
            assert abs(dxy - dyx) < 1e-12
            assert dxy <= metrics.pf_distance(x, z) + metrics.pf_distance(z, y) + 1e-12

    def test_identity_of_indiscernibles(self, rng):
        x = geometry.random_uniform(6, 2, rng)
        q = np.linalg.qr(rng.standard_normal((2, 2)))[0]
        assert metrics.pf_distance(x, x @ q) < 1e-7
        y = geometry.random_uniform(6, 2, rng)
        assert metrics.pf_distance(x, y) > 1e-3  # almost surely distinct spans

    def test_bounds_and_ordering(self, rng):
        """geodesic >= pf, pf <= sqrt(k), geodesic <= (pi/2) sqrt(k)."""
        for _ in range(20):
            x = geometry.random_uniform(9, 3, rng)
            y = geometry.random_uniform(9, 3, rng)
            dp = metrics.pf_distance(x, y)
            dg = metrics.geodesic_distance(x, y)
            assert dg >= dp - 1e-12
            assert dp <= np.sqrt(3) + 1e-12
            assert dg <= (np.pi / 2) * np.sqrt(3) + 1e-12

    def test_maximal_distance(self):
        x = np.eye(6)[:, :3]
        y = np.eye(6)[:, 3:]
        assert abs(metrics.pf_distance(x, y) - np.sqrt(3)) < 1e-12
        assert abs(metrics.geodesic_distance(x, y) - (np.pi / 2) * np.sqrt(3)) < 1e-12


class TestMeanSubspace:
    def sum_sq(self, u, samples):
        return sum(metrics.pf_distance(u, s) ** 2 for s in samples)

    def scattered_chain(self, rng, d, k, n, spread=0.4):
        base = geometry.random_uniform(d, k, rng)
        out = []
        for _ in range(n):
            v = geometry.grassmann_project(base, rng.standard_normal((d, k)))
            v *= spread * rng.random() / max(np.linalg.norm(v), 1e-12)
            out.append(geometry.grassmann_geodesic(base, v, 1.0)[0])
        return np.array(out)

    def test_single_sample(self, rng):
        x = geometry.random_uniform(5, 2, rng)
        assert metrics.pf_distance(metrics.pf_mean(x[None]), x) < 1e-7

    def test_matches_grid_search(self, rng):
        """Closed form agrees with exhaustive search over lines in R^3."""
        samples = self.scattered_chain(rng, 3, 1, 20, spread=0.5)
        grid = fibonacci_lines(10_000)
        objective = np.array([self.sum_sq(g, samples) for g in grid])
        best = grid[int(np.argmin(objective))]
        mean = metrics.pf_mean(samples)
        assert metrics.pf_distance(mean, best) < 1e-2
        assert self.sum_sq(mean, samples) <= objective.min() + 1e-9

    def test_beats_perturbations(self, rng):
        for _ in range(50):
            samples = self.scattered_chain(rng, 5, 2, 15)
            mean = metrics.pf_mean(samples)
            base_obj = self.sum_sq(mean, samples)
            for _ in range(100):
                v = geometry.grassmann_project(mean, rng.standard_normal((5, 2)))
                v /= max(np.linalg.norm(v), 1e-12)
                radius = 0.2 * rng.random()
                moved = geometry.grassmann_geodesic(mean, v, radius)[0]
                assert base_obj <= self.sum_sq(moved, samples) + 1e-12

    def test_two_samples_equidistant(self, rng):
        for _ in range(10):
            x = geometry.random_uniform(4, 2, rng)
            y = geometry.random_uniform(4, 2, rng)
            mean = metrics.pf_mean(np.array([x, y]))
            assert abs(metrics.pf_distance(mean, x) - metrics.pf_distance(mean, y)) < 1e-10

    def test_orthogonal_pair_warns(self):
        """For two orthogonal lines the mean is not unique."""
        x = np.array([[1.0], [0.0]])
        y = np.array([[0.0], [1.0]])
        with pytest.warns(UserWarning, match="not unique"):
            metrics.pf_mean(np.array([x, y]))

    def test_no_spurious_warning(self, rng):
        samples = self.scattered_chain(rng, 4, 2, 10)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            metrics.pf_mean(samples)

    def test_invariants(self, rng):
        samples = self.scattered_chain(rng, 6, 3, 12)
        mean = metrics.pf_mean(samples)
        assert mean.shape == (6, 3)
        assert geometry.orthonormality_residual(mean) < 1e-10

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            metrics.pf_mean(np.zeros((0, 3, 1)))


class TestTrace:
    def test_constant_chain_zero(self, rng):
        x = geometry.random_uniform(5, 2, rng)
        trace = metrics.pf_trace(np.array([x, x, x]), x)
        assert np.allclose(trace, 0.0, atol=1e-7)

    def test_matches_pairwise(self, rng):
        x = geometry.random_uniform(5, 2, rng)
        y = geometry.random_uniform(5, 2, rng)
        ref = geometry.random_uniform(5, 2, rng)
        trace = metrics.pf_trace(np.array([x, y]), ref)
        assert abs(trace[0] - metrics.pf_distance(x, ref)) < 1e-14
        assert abs(trace[1] - metrics.pf_distance(y, ref)) < 1e-14

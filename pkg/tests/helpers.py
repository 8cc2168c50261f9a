"""Shared numerical oracles for the test suite.

These deliberately avoid the library's own closed forms: geodesics are
checked against direct integration of the embedded geodesic equation
X'' = -X (X'^T X'), which both manifolds satisfy.
"""

import numpy as np

from manifoldmc import geometry


def rk4_geodesic(x0, v0, t, step=1e-4):
    """Integrate the geodesic ODE with classical Runge-Kutta.

    Returns (X(t), V(t)).  The local error is O(step^5), so with step 1e-4
    over t of order 1 the global error sits far below 1e-6.
    """

    def rhs(x, v):
        return v, -x @ (v.T @ v)

    n = max(1, int(round(abs(t) / step)))
    h = t / n
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    for _ in range(n):
        k1x, k1v = rhs(x, v)
        k2x, k2v = rhs(x + 0.5 * h * k1x, v + 0.5 * h * k1v)
        k3x, k3v = rhs(x + 0.5 * h * k2x, v + 0.5 * h * k2v)
        k4x, k4v = rhs(x + h * k3x, v + h * k3v)
        x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
    return x, v


def random_stiefel_pair(d, k, rng, speed=1.0):
    """Random point and tangent vector on the Stiefel manifold."""
    x = geometry.random_uniform(d, k, rng)
    v = geometry.stiefel_project(x, rng.standard_normal((d, k)))
    v *= speed / np.linalg.norm(v)
    return x, v

def random_grassmann_pair(d, k, rng, speed=1.0):
    """Random point and horizontal tangent vector on the Grassmann manifold."""
    x = geometry.random_uniform(d, k, rng)
    v = geometry.grassmann_project(x, rng.standard_normal((d, k)))
    v *= speed / np.linalg.norm(v)
    return x, v


def span_distance(x, y):
    """Projection-Frobenius distance computed from first principles.

    Uses the projector identity d = ||X X^T - Y Y^T||_F / sqrt(2), which is
    independent of the library's principal-angle implementation and does not
    cancel catastrophically near zero.
    """
    diff = x @ x.T - y @ y.T
    return float(np.linalg.norm(diff) / np.sqrt(2.0))

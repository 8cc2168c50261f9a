"""Geometry of the Stiefel and Grassmann manifolds embedded in Euclidean space.

A point on the Stiefel manifold is a d x k matrix X with orthonormal columns,
X^T X = I_k.  The Grassmann manifold of k-dimensional subspaces of R^d is
represented by the same matrices, with two representatives considered equal
when their column spans agree.  All operations below work on plain numpy
arrays and use the metric inherited from the ambient Euclidean inner product
<A, B> = trace(A^T B).

Tangent vectors:
    Stiefel:   X^T V skew-symmetric.
    Grassmann: X^T V = 0 (the horizontal space of the quotient).

Geodesics are returned as (point, velocity) pairs so that repeated flows can
be chained; both satisfy the embedded geodesic equation
    X'' + X (X'^T X') = 0.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

# Residual above which a matrix handed to a geodesic is rejected as
# non-tangent.  Velocities produced by the projections land far below this.
TANGENCY_TOL = 1e-8


def _check_point_shape(x: np.ndarray) -> tuple[int, int]:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"expected a d x k matrix, got shape {x.shape}")
    d, k = x.shape
    if k > d:
        raise ValueError(f"need k <= d, got shape {x.shape}")
    return d, k


def _check_pair(x: np.ndarray, v: np.ndarray) -> None:
    if np.shape(x) != np.shape(v):
        raise ValueError(
            f"point and vector shapes differ: {np.shape(x)} vs {np.shape(v)}"
        )
    _check_point_shape(x)


def orthonormality_residual(x: np.ndarray) -> float:
    """Max-norm deviation of X^T X from the identity."""
    x = np.asarray(x)
    k = x.shape[1]
    return float(np.max(np.abs(x.T @ x - np.eye(k))))


def stiefel_tangency_residual(x: np.ndarray, v: np.ndarray) -> float:
    """Max-norm deviation of X^T V from skew-symmetry."""
    a = np.asarray(x).T @ np.asarray(v)
    return float(np.max(np.abs(a + a.T)))


def grassmann_tangency_residual(x: np.ndarray, v: np.ndarray) -> float:
    """Max-norm of X^T V, which vanishes on the horizontal space."""
    return float(np.max(np.abs(np.asarray(x).T @ np.asarray(v))))


def stiefel_project(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Orthogonally project an ambient d x k matrix onto the Stiefel tangent space.

    Args:
        x: point with orthonormal columns.
        v: arbitrary ambient matrix of the same shape.

    Returns:
        V - X sym(X^T V), where sym(A) = (A + A^T) / 2.
    """
    _check_pair(x, v)
    a = x.T @ v
    return v - x @ ((a + a.T) / 2.0)


def grassmann_project(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Orthogonally project an ambient d x k matrix onto the Grassmann horizontal space.

    Args:
        x: subspace representative with orthonormal columns.
        v: arbitrary ambient matrix of the same shape.

    Returns:
        (I - X X^T) V.
    """
    _check_pair(x, v)
    return v - x @ (x.T @ v)


def stiefel_geodesic(
    x: np.ndarray, v: np.ndarray, t: float
) -> tuple[np.ndarray, np.ndarray]:
    """Flow along the Stiefel geodesic with initial point x and velocity v.

    Uses the closed form for the embedded metric: with A = X^T V and
    S = V^T V,

        [X(t), V(t)] = [X, V] expm(t [[A, -S], [I, A]]) diag(e^{-tA}, e^{-tA})

    Args:
        x: starting point, orthonormal columns.
        v: tangent vector at x (X^T V skew-symmetric).
        t: flow time, may be negative.

    Returns:
        (X(t), V(t)) where V(t) is the geodesic velocity at X(t).

    Raises:
        ValueError: if v is not tangent at x to within TANGENCY_TOL.
    """
    _check_pair(x, v)
    res = stiefel_tangency_residual(x, v)
    if res > TANGENCY_TOL:
        raise ValueError(f"velocity is not tangent: skew residual {res:.3e}")
    if t == 0.0 or not np.any(v):
        return np.array(x, dtype=float), np.array(v, dtype=float)
    d, k = x.shape
    a = x.T @ v
    a = (a - a.T) / 2.0  # exact skew part; the residual above is tiny
    s = v.T @ v
    block = np.zeros((2 * k, 2 * k))
    block[:k, :k] = a
    block[:k, k:] = -s
    block[k:, :k] = np.eye(k)
    block[k:, k:] = a
    w = np.hstack([x, v]) @ expm(t * block)
    rot = expm(-t * a)
    return w[:, :k] @ rot, w[:, k:] @ rot


def grassmann_geodesic(
    x: np.ndarray, v: np.ndarray, t: float
) -> tuple[np.ndarray, np.ndarray]:
    """Flow along the Grassmann geodesic with initial point x and velocity v.

    With the thin SVD V = U diag(sigma) W^T,

        X(t) = X W cos(sigma t) W^T + U sin(sigma t) W^T
        V(t) = -X W sigma sin(sigma t) W^T + U sigma cos(sigma t) W^T

    Zero singular values are retained; their directions simply do not move.

    Args:
        x: subspace representative with orthonormal columns.
        v: horizontal tangent vector at x (X^T V = 0).
        t: flow time, may be negative.

    Returns:
        (X(t), V(t)) where V(t) is the geodesic velocity at X(t).

    Raises:
        ValueError: if v is not horizontal at x to within TANGENCY_TOL.
    """
    _check_pair(x, v)
    res = grassmann_tangency_residual(x, v)
    if res > TANGENCY_TOL:
        raise ValueError(f"velocity is not tangent: X^T V residual {res:.3e}")
    if t == 0.0 or not np.any(v):
        return np.array(x, dtype=float), np.array(v, dtype=float)
    u, sigma, wt = np.linalg.svd(v, full_matrices=False)
    cs = np.cos(sigma * t)
    sn = np.sin(sigma * t)
    xw = x @ wt.T
    x_t = (xw * cs + u * sn) @ wt
    v_t = (-xw * (sigma * sn) + u * (sigma * cs)) @ wt
    return x_t, v_t


def reorthonormalize(x: np.ndarray) -> np.ndarray:
    """Restore orthonormal columns without changing the column span.

    QR factorization with the sign convention that R has positive diagonal,
    which makes the result deterministic and leaves an already-orthonormal
    input unchanged up to roundoff.

    Raises:
        ValueError: if the input is numerically rank-deficient.
    """
    x = np.asarray(x, dtype=float)
    _check_point_shape(x)
    q, r = np.linalg.qr(x)
    diag = np.diag(r)
    if np.min(np.abs(diag)) < 1e-12 * max(1.0, float(np.max(np.abs(diag)))):
        raise ValueError("input is rank-deficient, span is not well defined")
    signs = np.sign(diag)
    signs[signs == 0] = 1.0
    return q * signs


def random_uniform(d: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a point from the uniform (Haar) distribution on the Stiefel manifold.

    A d x k matrix of iid standard normals has a QR factorization whose Q
    factor, with the positive-diagonal sign convention, is Haar distributed.
    The same draw serves as a uniform Grassmann representative.
    """
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got d={d}, k={k}")
    return reorthonormalize(rng.standard_normal((d, k)))

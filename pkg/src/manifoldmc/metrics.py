"""Distances, means, and traces for collections of subspaces.

All functions take d x k representatives with orthonormal columns and depend
on them only through their column spans, so Stiefel samples can be passed
directly when only the spanned subspace matters.
"""

from __future__ import annotations

import warnings

import numpy as np

# Eigenvalue gap below which the mean subspace is flagged as ill defined.
MEAN_TIE_TOL = 1e-12


def principal_angles(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Principal angles between span(x) and span(y), nondecreasing, in [0, pi/2].

    Computed as arccos of the singular values of X^T Y, clipped to [0, 1]
    before arccos to absorb roundoff at the spectrum edges.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    sigma = np.linalg.svd(x.T @ y, compute_uv=False)
    return np.arccos(np.clip(sigma, 0.0, 1.0))


def pf_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Projection-Frobenius distance sqrt(sum_j sin^2 theta_j).

    Equals ||X X^T - Y Y^T||_F / sqrt(2); the maximum over G_{d,k} is
    sqrt(k), attained by orthogonal subspaces.
    """
    theta = principal_angles(x, y)
    return float(np.sqrt(np.sum(np.sin(theta) ** 2)))


def geodesic_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Arc-length distance sqrt(sum_j theta_j^2) on the Grassmann manifold."""
    theta = principal_angles(x, y)
    return float(np.sqrt(np.sum(theta**2)))


def pf_mean(samples) -> np.ndarray:
    """Subspace minimizing the summed squared projection-Frobenius distance.

    The minimizer has a closed form: sum of squared distances equals
    N*k - trace(U^T M U) with M = sum_j X_j X_j^T, so the optimal U spans
    the top-k eigenvectors of M.

    Args:
        samples: sequence of d x k representatives, or an (N, d, k) array.

    Returns:
        d x k orthonormal representative of the mean subspace.

    Warns:
        if the k-th and (k+1)-th eigenvalues of M are within MEAN_TIE_TOL,
        in which case the mean subspace is not unique; a deterministic
        choice is still returned.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ValueError("need a nonempty sequence of d x k matrices")
    _, d, k = arr.shape
    m = np.einsum("nij,nlj->il", arr, arr)
    eigvals, eigvecs = np.linalg.eigh(m)
    if k < d and eigvals[d - k] - eigvals[d - k - 1] < MEAN_TIE_TOL:
        warnings.warn(
            "mean subspace is not unique: eigenvalue tie at the cut "
            f"(gap {eigvals[d - k] - eigvals[d - k - 1]:.3e})",
            stacklevel=2,
        )
    u = eigvecs[:, d - k:][:, ::-1]
    # fix each column's sign by its largest-magnitude entry, for determinism
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    return np.ascontiguousarray(u * signs)


def pf_trace(samples, reference: np.ndarray) -> np.ndarray:
    """Projection-Frobenius distance of every sample to a reference subspace."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 3:
        raise ValueError("need a sequence of d x k matrices")
    return np.array([pf_distance(s, reference) for s in arr])

"""Posterior prediction and reconstruction utilities.

Everything here consumes a Chain produced by hmc_sample over one of the
model targets.  Windows are half-open [start, stop) index ranges into the
sample axis; None means the whole chain.

Posterior averages of the loading frame are only meaningful after fixing the
column permutation and sign indeterminacy of factor models, so the joint
label predictor first sorts columns by decreasing scale and aligns signs
against the first windowed sample.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .hmc import Chain

COND_LIMIT = 1e12
NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 100


def window_slice(n: int, window: tuple[int, int] | None) -> tuple[int, int]:
    """Validate a half-open sample window against a chain of length n."""
    if window is None:
        return 0, n
    start, stop = int(window[0]), int(window[1])
    if not 0 <= start < stop <= n:
        raise ValueError(f"window [{start}, {stop}) invalid for {n} samples")
    return start, stop


def gaussian_conditional_mean(
    mean: np.ndarray,
    cov: np.ndarray,
    observed_idx: np.ndarray,
    observed_values: np.ndarray,
    target_idx: np.ndarray,
) -> np.ndarray:
    """Conditional mean of the target coordinates given the observed ones.

    Raises LinAlgError when the observed block is too ill-conditioned to
    invert reliably.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    obs = np.asarray(observed_idx, dtype=int)
    tgt = np.asarray(target_idx, dtype=int)
    values = np.asarray(observed_values, dtype=float)
    d = mean.shape[0]
    if cov.shape != (d, d):
        raise ValueError("covariance shape must match the mean")
    for idx in (obs, tgt):
        if idx.size and (idx.min() < 0 or idx.max() >= d):
            raise ValueError("index out of range")
    if len(np.intersect1d(obs, tgt)) > 0:
        raise ValueError("observed and target indices must be disjoint")
    if values.shape != obs.shape:
        raise ValueError("observed values must match observed indices")
    if tgt.size == 0:
        return np.zeros(0)
    if obs.size == 0:
        return mean[tgt].copy()
    cov_bb = cov[np.ix_(obs, obs)]
    if np.linalg.cond(cov_bb) > COND_LIMIT:
        raise np.linalg.LinAlgError(
            "observed-block covariance is numerically singular")
    weights = np.linalg.solve(cov_bb, values - mean[obs])
    return mean[tgt] + cov[np.ix_(tgt, obs)] @ weights


def posterior_mean_covariance(
    chain: Chain, window: tuple[int, int] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Average implied data mean and covariance over a window of samples.

    Supports the two marginal Gaussian models: loading-frame chains with
    (lam, sigma2) blocks or with (psi, phi) blocks.
    """
    start, stop = window_slice(len(chain), window)
    u_all = chain.blocks["U"][start:stop]
    mu_all = chain.blocks["mu"][start:stop]
    d = u_all.shape[1]
    cov = np.zeros((d, d))
    if "psi" in chain.blocks:
        psi_all = chain.natural_block("psi")[start:stop]
        phi_all = chain.natural_block("phi")[start:stop]
        for u, psi, phi in zip(u_all, psi_all, phi_all):
            cov += (u @ u.T + np.diag(psi)) * np.outer(phi, phi)
    elif "sigma2" in chain.blocks:
        lam_all = chain.natural_block("lam")[start:stop]
        s2_all = chain.natural_block("sigma2")[start:stop]
        eye = np.eye(d)
        for u, lam, s2 in zip(u_all, lam_all, s2_all):
            cov += (u * lam**2) @ u.T + s2[0] * eye
    else:
        raise ValueError("chain does not carry a marginal Gaussian model")
    m = stop - start
    return mu_all.mean(axis=0), cov / m


def posterior_reconstruct(
    chain: Chain, kind: str, window: tuple[int, int] | None = None
) -> np.ndarray:
    """Posterior mean reconstruction of the data matrix.

    For binary data this is the mean success probability per entry; for
    continuous data the mean of the linear predictor.  Requires explicit
    factors in the chain.
    """
    if "Z" not in chain.blocks:
        raise ValueError("reconstruction requires explicit factors")
    start, stop = window_slice(len(chain), window)
    u_all = chain.blocks["U"][start:stop]
    lam_all = chain.natural_block("lam")[start:stop]
    z_all = chain.blocks["Z"][start:stop]
    mu_all = chain.blocks["mu"][start:stop]
    total = np.zeros((z_all.shape[1], u_all.shape[1]))
    for u, lam, z, mu in zip(u_all, lam_all, z_all, mu_all):
        eta = z @ (u * lam).T + mu
        total += expit(eta) if kind == "binary" else eta
    return total / (stop - start)


def binary_decision(probabilities: np.ndarray) -> np.ndarray:
    """Threshold posterior probabilities at one half; ties go to zero."""
    return (np.asarray(probabilities) > 0.5).astype(float)


def order_factors(
    chain: Chain, window: tuple[int, int] | None = None
) -> dict[str, np.ndarray]:
    """Windowed samples with columns sorted by decreasing scale.

    Column signs are aligned against the first windowed sample so that
    averaging U, Z or beta across samples is meaningful.  Returns stacked
    arrays keyed by block name, scales in natural coordinates.
    """
    start, stop = window_slice(len(chain), window)
    u_all = chain.blocks["U"][start:stop].copy()
    lam_all = chain.natural_block("lam")[start:stop].copy()
    out = {"U": u_all, "lam": lam_all}
    for name in ("Z", "beta"):
        if name in chain.blocks:
            out[name] = chain.blocks[name][start:stop].copy()
    for extra in ("mu", "beta0", "sigma2"):
        if extra in chain.blocks:
            out[extra] = chain.blocks[extra][start:stop].copy()
    m = stop - start
    for s in range(m):
        perm = np.argsort(-lam_all[s], kind="stable")
        out["U"][s] = out["U"][s][:, perm]
        out["lam"][s] = out["lam"][s][perm]
        if "Z" in out:
            out["Z"][s] = out["Z"][s][:, perm]
        if "beta" in out:
            out["beta"][s] = out["beta"][s][perm]
    anchor = out["U"][0]
    for s in range(1, m):
        signs = np.where(np.sum(out["U"][s] * anchor, axis=0) < 0.0, -1.0, 1.0)
        out["U"][s] *= signs
        if "Z" in out:
            out["Z"][s] *= signs
        if "beta" in out:
            out["beta"][s] *= signs
    return out


def poisson_latent_mode(
    counts: np.ndarray,
    mask: np.ndarray,
    loadings: np.ndarray,
    mu: np.ndarray,
) -> np.ndarray:
    """Mode of the factor posterior for one row of counts.

    Maximizes sum_obs(x eta - exp(eta)) - 0.5 z'z with eta = loadings z + mu.
    The objective is strictly concave, so damped Newton converges; raises
    RuntimeError if it somehow does not.
    """
    f = loadings[mask]
    x = counts[mask]
    offset = mu[mask]
    k = loadings.shape[1]
    z = np.zeros(k)

    def objective(zv):
        eta = f @ zv + offset
        return float(np.sum(x * eta - np.exp(eta))) - 0.5 * float(zv @ zv)

    obj = objective(z)
    for _ in range(NEWTON_MAX_ITER):
        eta = f @ z + offset
        rate = np.exp(eta)
        grad = f.T @ (x - rate) - z
        if np.linalg.norm(grad) < NEWTON_TOL:
            return z
        hess = -(f.T * rate) @ f - np.eye(k)
        step = np.linalg.solve(hess, -grad)
        scale = 1.0
        for _ in range(30):
            cand = z + scale * step
            cand_obj = objective(cand)
            if cand_obj > obj:
                z, obj = cand, cand_obj
                break
            scale *= 0.5
        else:
            return z  # no further improvement possible at float precision
    raise RuntimeError("latent mode search did not converge")


def joint_label_probabilities(
    chain: Chain,
    counts: np.ndarray,
    mask: np.ndarray,
    window: tuple[int, int] | None = None,
) -> np.ndarray:
    """Label probability for new count rows under the joint model.

    Uses posterior-mean parameters (after factor alignment) and plugs in the
    per-row factor mode given the counts alone; the unknown label integrates
    to one and drops out of the factor posterior.
    """
    aligned = order_factors(chain, window)
    f_bar = np.mean(aligned["U"] * aligned["lam"][:, None, :], axis=0)
    beta_bar = aligned["beta"].mean(axis=0)
    beta0_bar = float(aligned["beta0"].mean())
    mu_bar = aligned["mu"].mean(axis=0)
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    probs = np.zeros(counts.shape[0])
    for j in range(counts.shape[0]):
        z = poisson_latent_mode(counts[j], mask[j], f_bar, mu_bar)
        probs[j] = expit(float(z @ beta_bar + beta0_bar))
    return probs

"""Bayesian linear dimensionality reduction models.

Five log posteriors over product states, all with orthonormal d x k loading
frames sampled on the Stiefel or Grassmann manifold:

    ppca            y_j ~ N(mu, U diag(lam)^2 U^T + sigma2 I), factors
                    integrated out analytically; U on the Stiefel manifold.
    latent_gaussian same likelihood with the factors z_j kept explicit,
                    which admits entrywise missing data.
    fa_grassmann    y_j ~ N(mu, Phi (U U^T + Psi) Phi) with diagonal Psi and
                    Phi; the density depends on U only through U U^T, so U
                    lives on the Grassmann manifold.
    epca_bernoulli  binary entries with logit(p_ji) = (z_j^T diag(lam) U^T + mu)_i.
    joint_poisson_logistic
                    count entries with log rate z_j^T diag(lam) U^T + mu and a
                    Bernoulli label with logit beta^T z_j + beta0, sharing z_j.

Conventions shared by every model:

    * Positive parameters (lam, sigma2, psi, phi) are sampled as logarithms;
      gradients returned under those names are with respect to the log
      coordinate and the log-normal prior already includes the
      change-of-variables term.
    * U carries the uniform distribution on its compact manifold; the
      constant does not enter the log posterior.
    * Location and regression parameters (mu, beta, beta0) get N(0, 10^2)
      priors, explicit factors get N(0, 1).
    * Gradients for U are plain ambient matrices; the sampler projects them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

from .hmc import Geometry, ParameterBlock, ProductState, TargetDensity

MEAN_PRIOR_SD = 10.0
COEF_PRIOR_SD = 10.0

_LOG2PI = float(np.log(2.0 * np.pi))

CONTINUOUS = "continuous"
BINARY = "binary"
COUNT = "count"


@dataclass
class MaskedDataMatrix:
    """Data matrix with an observation mask and an entry kind.

    values holds zeros at unobserved positions; mask is True where observed.
    labels, when present, is one binary label per row.
    """

    values: np.ndarray
    mask: np.ndarray
    kind: str
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-d array")
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.values.shape:
            raise ValueError("mask shape must match values shape")
        if self.kind not in (CONTINUOUS, BINARY, COUNT):
            raise ValueError(f"unknown data kind {self.kind!r}")
        observed = self.values[self.mask]
        if not np.all(np.isfinite(observed)):
            raise ValueError("observed entries must be finite")
        if self.kind == BINARY and not np.all((observed == 0) | (observed == 1)):
            raise ValueError("binary data must contain only 0 and 1")
        if self.kind == COUNT and (
            np.any(observed < 0) or np.any(observed != np.round(observed))
        ):
            raise ValueError("count data must contain nonnegative integers")
        if not np.all(np.where(self.mask, 0.0, self.values) == 0.0):
            # keep the storage canonical so masked sums are safe
            self.values = np.where(self.mask, self.values, 0.0)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=float)
            if self.labels.shape != (self.values.shape[0],):
                raise ValueError("labels must hold one value per row")
            if not np.all((self.labels == 0) | (self.labels == 1)):
                raise ValueError("labels must be binary")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def fully_observed(self) -> bool:
        return bool(self.mask.all())


@dataclass
class PPCAParams:
    """Parameters of the Gaussian models; Z present only in the latent form."""

    U: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    sigma2: float | None = None
    Z: np.ndarray | None = None


@dataclass
class FAParams:
    U: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    mu: np.ndarray


@dataclass
class JointParams:
    U: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    Z: np.ndarray
    beta: np.ndarray
    beta0: float


def _normal_prior(x: np.ndarray, sd: float) -> tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    logp = -0.5 * float(np.sum((x / sd) ** 2)) - x.size * (np.log(sd) + 0.5 * _LOG2PI)
    return logp, -x / sd**2


def _require_kind(data: MaskedDataMatrix, kind: str, model: str) -> None:
    if data.kind != kind:
        raise ValueError(f"{model} requires {kind} data, got {data.kind!r}")


def _require_full(data: MaskedDataMatrix, model: str) -> None:
    if not data.fully_observed():
        raise ValueError(f"{model} requires fully observed rows")


# ---------------------------------------------------------------------------
# Gaussian marginal models (ppca, fa_grassmann)
# ---------------------------------------------------------------------------

def _gaussian_core(y: np.ndarray, mu: np.ndarray, cov: np.ndarray):
    """Shared sufficient pieces for a dense Gaussian likelihood.

    Returns (loglik, M, grad_mu) where dloglik = 0.5 trace(M dCov) for any
    differential of the covariance.
    """
    n = y.shape[0]
    chol = np.linalg.cholesky(cov)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    prec = np.linalg.inv(cov)
    resid = y - mu
    s0 = resid.T @ resid
    loglik = -0.5 * (n * y.shape[1] * _LOG2PI + n * logdet + float(np.sum(prec * s0)))
    m = prec @ s0 @ prec - n * prec
    grad_mu = prec @ resid.sum(axis=0)
    return loglik, m, grad_mu


def _ppca_core(u, lam, mu, sigma2, y):
    cov = (u * lam**2) @ u.T + sigma2 * np.eye(u.shape[0])
    loglik, m, grad_mu = _gaussian_core(y, mu, cov)
    mu_mat = m @ u
    grads = {
        "U": mu_mat * lam**2,
        "lam": lam**2 * np.sum(u * mu_mat, axis=0),  # wrt log lam
        "mu": grad_mu,
        "sigma2": np.array([0.5 * sigma2 * float(np.trace(m))]),  # wrt log sigma2
    }
    return loglik, grads


def ppca_log_likelihood(params: PPCAParams, data: MaskedDataMatrix):
    """Marginal Gaussian data term and its gradients (log coords for scales)."""
    _require_kind(data, CONTINUOUS, "ppca")
    _require_full(data, "ppca")
    lam = np.asarray(params.lam, dtype=float)
    if np.any(lam <= 0) or params.sigma2 is None or params.sigma2 <= 0:
        raise ValueError("lam and sigma2 must be positive")
    return _ppca_core(params.U, lam, params.mu, float(params.sigma2), data.values)


def ppca_log_posterior(params: PPCAParams, data: MaskedDataMatrix):
    """Marginal log posterior; U uniform on the Stiefel manifold."""
    loglik, grads = ppca_log_likelihood(params, data)
    logp = loglik
    pm, gm = _normal_prior(params.mu, MEAN_PRIOR_SD)
    logp += pm
    grads["mu"] = grads["mu"] + gm
    log_lam = np.log(params.lam)
    pl, gl = _normal_prior(log_lam, 1.0)
    logp += pl
    grads["lam"] = grads["lam"] + gl
    ps, gs = _normal_prior(np.log([params.sigma2]), 1.0)
    logp += ps
    grads["sigma2"] = grads["sigma2"] + gs
    return logp, grads


def _fa_core(u, psi, phi, mu, y):
    c = u @ u.T + np.diag(psi)
    cov = c * np.outer(phi, phi)
    loglik, m, grad_mu = _gaussian_core(y, mu, cov)
    mp = m * np.outer(phi, phi)
    grads = {
        "U": mp @ u,
        "psi": 0.5 * psi * phi**2 * np.diag(m),  # wrt log psi
        "phi": phi * ((m * c) @ phi),  # wrt log phi
        "mu": grad_mu,
    }
    return loglik, grads


def fa_grassmann_log_likelihood(params: FAParams, data: MaskedDataMatrix):
    _require_kind(data, CONTINUOUS, "fa_grassmann")
    _require_full(data, "fa_grassmann")
    psi = np.asarray(params.psi, dtype=float)
    phi = np.asarray(params.phi, dtype=float)
    if np.any(psi <= 0) or np.any(phi <= 0):
        raise ValueError("psi and phi must be positive")
    return _fa_core(params.U, psi, phi, params.mu, data.values)


def fa_grassmann_log_posterior(params: FAParams, data: MaskedDataMatrix):
    """Factor-analysis log posterior; U uniform on the Grassmann manifold."""
    loglik, grads = fa_grassmann_log_likelihood(params, data)
    logp = loglik
    pm, gm = _normal_prior(params.mu, MEAN_PRIOR_SD)
    logp += pm
    grads["mu"] = grads["mu"] + gm
    for name, value in (("psi", params.psi), ("phi", params.phi)):
        p, g = _normal_prior(np.log(value), 1.0)
        logp += p
        grads[name] = grads[name] + g
    return logp, grads


# ---------------------------------------------------------------------------
# Explicit-factor models (latent_gaussian, epca_bernoulli, joint)
# ---------------------------------------------------------------------------

def _latent_gaussian_core(u, lam, mu, sigma2, z, data):
    eta = z @ (u * lam).T + mu
    resid = np.where(data.mask, data.values - eta, 0.0)
    n_obs = int(data.mask.sum())
    loglik = -0.5 * (
        float(np.sum(resid**2)) / sigma2 + n_obs * (np.log(sigma2) + _LOG2PI)
    )
    r = resid / sigma2
    grad_f = r.T @ z
    grads = {
        "U": grad_f * lam,
        "lam": lam * np.sum(u * grad_f, axis=0),
        "mu": r.sum(axis=0),
        "Z": r @ (u * lam),
        "sigma2": np.array([0.5 * float(np.sum(resid**2)) / sigma2 - 0.5 * n_obs]),
    }
    return loglik, grads


def latent_gaussian_log_likelihood(params: PPCAParams, data: MaskedDataMatrix):
    """Gaussian data term with explicit factors; missing entries allowed."""
    _require_kind(data, CONTINUOUS, "latent_gaussian")
    if params.Z is None:
        raise ValueError("latent_gaussian requires explicit factors Z")
    lam = np.asarray(params.lam, dtype=float)
    if np.any(lam <= 0) or params.sigma2 is None or params.sigma2 <= 0:
        raise ValueError("lam and sigma2 must be positive")
    return _latent_gaussian_core(
        params.U, lam, params.mu, float(params.sigma2), params.Z, data
    )


def latent_gaussian_log_posterior(params: PPCAParams, data: MaskedDataMatrix):
    loglik, grads = latent_gaussian_log_likelihood(params, data)
    logp = loglik
    pm, gm = _normal_prior(params.mu, MEAN_PRIOR_SD)
    logp += pm
    grads["mu"] = grads["mu"] + gm
    pz, gz = _normal_prior(params.Z, 1.0)
    logp += pz
    grads["Z"] = grads["Z"] + gz
    pl, gl = _normal_prior(np.log(params.lam), 1.0)
    logp += pl
    grads["lam"] = grads["lam"] + gl
    ps, gs = _normal_prior(np.log([params.sigma2]), 1.0)
    logp += ps
    grads["sigma2"] = grads["sigma2"] + gs
    return logp, grads


def _softplus(eta):
    # equals log(1 + exp(eta)); several times faster than np.logaddexp(0, .)
    return np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))


def _epca_core(u, lam, mu, z, data):
    eta = z @ (u * lam).T + mu
    # values are zero-filled at masked entries, so x*eta needs no masking
    loglik = float(np.sum(data.values * eta) - np.sum(_softplus(eta) * data.mask))
    r = (data.values - expit(eta)) * data.mask
    grad_f = r.T @ z
    grads = {
        "U": grad_f * lam,
        "lam": lam * np.sum(u * grad_f, axis=0),
        "mu": r.sum(axis=0),
        "Z": r @ (u * lam),
    }
    return loglik, grads


def epca_bernoulli_log_likelihood(params: PPCAParams, data: MaskedDataMatrix):
    _require_kind(data, BINARY, "epca_bernoulli")
    if params.Z is None:
        raise ValueError("epca_bernoulli requires explicit factors Z")
    lam = np.asarray(params.lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("lam must be positive")
    return _epca_core(params.U, lam, params.mu, params.Z, data)


def epca_bernoulli_log_posterior(params: PPCAParams, data: MaskedDataMatrix):
    """Bernoulli principal components with logit link and explicit factors."""
    loglik, grads = epca_bernoulli_log_likelihood(params, data)
    logp = loglik
    pm, gm = _normal_prior(params.mu, MEAN_PRIOR_SD)
    logp += pm
    grads["mu"] = grads["mu"] + gm
    pz, gz = _normal_prior(params.Z, 1.0)
    logp += pz
    grads["Z"] = grads["Z"] + gz
    pl, gl = _normal_prior(np.log(params.lam), 1.0)
    logp += pl
    grads["lam"] = grads["lam"] + gl
    return logp, grads


def _joint_core(u, lam, mu, z, beta, beta0, data, log_factorials=None):
    # overflowing rates yield nonfinite values that the sampler treats as a
    # divergence, so suppress the intermediate warnings here
    with np.errstate(over="ignore", invalid="ignore"):
        eta = z @ (u * lam).T + mu
        rate = np.exp(eta)
        if log_factorials is None:
            log_factorials = np.where(data.mask, gammaln(data.values + 1.0), 0.0)
        picked = np.where(data.mask, data.values * eta - rate - log_factorials, 0.0)
        loglik = float(np.sum(picked))
        r = np.where(data.mask, data.values - rate, 0.0)
        grad_f = r.T @ z
        a = z @ beta + beta0
        y = data.labels
        loglik += float(np.sum(y * a - _softplus(a)))
        ry = y - expit(a)
        grads = {
            "U": grad_f * lam,
            "lam": lam * np.sum(u * grad_f, axis=0),
            "mu": r.sum(axis=0),
            "Z": r @ (u * lam) + np.outer(ry, beta),
            "beta": z.T @ ry,
            "beta0": np.array([float(np.sum(ry))]),
        }
    return loglik, grads


def joint_log_likelihood(params: JointParams, data: MaskedDataMatrix):
    _require_kind(data, COUNT, "joint_poisson_logistic")
    if data.labels is None:
        raise ValueError("joint_poisson_logistic requires row labels")
    lam = np.asarray(params.lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("lam must be positive")
    return _joint_core(
        params.U, lam, params.mu, params.Z, params.beta, float(params.beta0), data
    )


def joint_log_posterior(params: JointParams, data: MaskedDataMatrix):
    """Shared-factor Poisson counts plus logistic label."""
    loglik, grads = joint_log_likelihood(params, data)
    logp = loglik
    for name, value, sd in (
        ("mu", params.mu, MEAN_PRIOR_SD),
        ("beta", params.beta, COEF_PRIOR_SD),
        ("beta0", np.array([float(params.beta0)]), COEF_PRIOR_SD),
        ("Z", params.Z, 1.0),
    ):
        p, g = _normal_prior(value, sd)
        logp += p
        grads[name] = grads[name] + g
    pl, gl = _normal_prior(np.log(params.lam), 1.0)
    logp += pl
    grads["lam"] = grads["lam"] + gl
    return logp, grads


# ---------------------------------------------------------------------------
# Sampler plumbing: states and targets
# ---------------------------------------------------------------------------

def _positive_prior_terms(theta):
    """Standard normal prior on a log coordinate, with gradient."""
    return (
        -0.5 * float(np.sum(theta**2)) - theta.size * 0.5 * _LOG2PI,
        -theta,
    )


def ppca_target(data: MaskedDataMatrix) -> TargetDensity:
    _require_kind(data, CONTINUOUS, "ppca")
    _require_full(data, "ppca")
    y = data.values

    def fused(state):
        # nonfinite values from overflowing scales are rejected downstream
        with np.errstate(over="ignore", invalid="ignore"):
            lam = np.exp(state["lam"])
            sigma2 = float(np.exp(state["sigma2"][0]))
            logp, grads = _ppca_core(state["U"], lam, state["mu"], sigma2, y)
            pm, gm = _normal_prior(state["mu"], MEAN_PRIOR_SD)
            pl, gl = _positive_prior_terms(state["lam"])
            ps, gs = _positive_prior_terms(state["sigma2"])
            grads["mu"] += gm
            grads["lam"] += gl
            grads["sigma2"] += gs
            return logp + pm + pl + ps, grads

    return TargetDensity(fused)


def latent_gaussian_target(data: MaskedDataMatrix) -> TargetDensity:
    _require_kind(data, CONTINUOUS, "latent_gaussian")

    def fused(state):
        with np.errstate(over="ignore", invalid="ignore"):
            lam = np.exp(state["lam"])
            sigma2 = float(np.exp(state["sigma2"][0]))
            logp, grads = _latent_gaussian_core(
                state["U"], lam, state["mu"], sigma2, state["Z"], data
            )
            pm, gm = _normal_prior(state["mu"], MEAN_PRIOR_SD)
            pz, gz = _normal_prior(state["Z"], 1.0)
            pl, gl = _positive_prior_terms(state["lam"])
            ps, gs = _positive_prior_terms(state["sigma2"])
            grads["mu"] += gm
            grads["Z"] += gz
            grads["lam"] += gl
            grads["sigma2"] += gs
            return logp + pm + pz + pl + ps, grads

    return TargetDensity(fused)


def fa_grassmann_target(data: MaskedDataMatrix) -> TargetDensity:
    _require_kind(data, CONTINUOUS, "fa_grassmann")
    _require_full(data, "fa_grassmann")
    y = data.values

    def fused(state):
        with np.errstate(over="ignore", invalid="ignore"):
            psi = np.exp(state["psi"])
            phi = np.exp(state["phi"])
            logp, grads = _fa_core(state["U"], psi, phi, state["mu"], y)
            pm, gm = _normal_prior(state["mu"], MEAN_PRIOR_SD)
            pp, gp = _positive_prior_terms(state["psi"])
            pf, gf = _positive_prior_terms(state["phi"])
            grads["mu"] += gm
            grads["psi"] += gp
            grads["phi"] += gf
            return logp + pm + pp + pf, grads

    return TargetDensity(fused)


def epca_bernoulli_target(data: MaskedDataMatrix) -> TargetDensity:
    _require_kind(data, BINARY, "epca_bernoulli")

    def fused(state):
        with np.errstate(over="ignore", invalid="ignore"):
            lam = np.exp(state["lam"])
            logp, grads = _epca_core(state["U"], lam, state["mu"], state["Z"], data)
            pm, gm = _normal_prior(state["mu"], MEAN_PRIOR_SD)
            pz, gz = _normal_prior(state["Z"], 1.0)
            pl, gl = _positive_prior_terms(state["lam"])
            grads["mu"] += gm
            grads["Z"] += gz
            grads["lam"] += gl
            return logp + pm + pz + pl, grads

    return TargetDensity(fused)


def joint_target(data: MaskedDataMatrix) -> TargetDensity:
    _require_kind(data, COUNT, "joint_poisson_logistic")
    if data.labels is None:
        raise ValueError("joint_poisson_logistic requires row labels")
    log_factorials = np.where(data.mask, gammaln(data.values + 1.0), 0.0)

    def fused(state):
        with np.errstate(over="ignore", invalid="ignore"):
            lam = np.exp(state["lam"])
            logp, grads = _joint_core(
                state["U"], lam, state["mu"], state["Z"],
                state["beta"], float(state["beta0"][0]), data, log_factorials,
            )
            for name, sd in (("mu", MEAN_PRIOR_SD), ("beta", COEF_PRIOR_SD),
                             ("beta0", COEF_PRIOR_SD), ("Z", 1.0)):
                p, g = _normal_prior(state[name], sd)
                logp += p
                grads[name] += g
            pl, gl = _positive_prior_terms(state["lam"])
            grads["lam"] += gl
            return logp + pl, grads

    return TargetDensity(fused)


def _pca_basis(data: MaskedDataMatrix, k: int):
    """Column means and top-k right singular directions of the filled matrix."""
    from . import geometry

    col_n = np.maximum(data.mask.sum(axis=0), 1)
    col_mean = data.values.sum(axis=0) / col_n
    filled = np.where(data.mask, data.values, col_mean)
    centered = filled - filled.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    u = geometry.reorthonormalize(vt[:k].T)
    return col_mean, u, svals[:k], centered


def initial_state(model: str, data: MaskedDataMatrix, k: int,
                  rng: np.random.Generator) -> ProductState:
    """Data-driven starting state for each model.

    Deterministic given (data, k, rng state).  The loading frame starts at
    the principal directions of the mean-filled data matrix; scales and
    factors start at matching magnitudes.
    """
    n, d = data.values.shape
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    col_mean, u, svals, centered = _pca_basis(data, k)
    lam0 = np.log(np.maximum(svals / np.sqrt(max(n, 2)), 1e-3))
    z0 = centered @ u / np.maximum(svals / np.sqrt(max(n, 2)), 1e-3)
    blocks = []
    if model == "ppca":
        resid = max(float(np.var(centered)) * 0.5, 1e-4)
        blocks = [
            ParameterBlock("U", Geometry.stiefel(d, k), u),
            ParameterBlock("lam", Geometry.log_positive(k), lam0),
            ParameterBlock("mu", Geometry.euclidean(d), col_mean),
            ParameterBlock("sigma2", Geometry.log_positive(1), np.log([resid])),
        ]
    elif model == "latent_gaussian":
        resid = max(float(np.var(centered)) * 0.5, 1e-4)
        blocks = [
            ParameterBlock("U", Geometry.stiefel(d, k), u),
            ParameterBlock("lam", Geometry.log_positive(k), lam0),
            ParameterBlock("mu", Geometry.euclidean(d), col_mean),
            ParameterBlock("sigma2", Geometry.log_positive(1), np.log([resid])),
            ParameterBlock("Z", Geometry.euclidean(n, k), z0),
        ]
    elif model == "fa_grassmann":
        std = np.maximum(np.sqrt(np.var(data.values, axis=0)), 1e-3)
        blocks = [
            ParameterBlock("U", Geometry.grassmann(d, k), u),
            ParameterBlock("psi", Geometry.log_positive(d), np.zeros(d)),
            ParameterBlock("phi", Geometry.log_positive(d), np.log(std)),
            ParameterBlock("mu", Geometry.euclidean(d), col_mean),
        ]
    elif model == "epca_bernoulli":
        obs_mean = np.clip(col_mean, 0.05, 0.95)
        blocks = [
            ParameterBlock("U", Geometry.stiefel(d, k), u),
            ParameterBlock("lam", Geometry.log_positive(k), np.zeros(k)),
            ParameterBlock("mu", Geometry.euclidean(d), np.log(obs_mean / (1 - obs_mean))),
            ParameterBlock("Z", Geometry.euclidean(n, k), 0.1 * rng.standard_normal((n, k))),
        ]
    elif model == "joint_poisson_logistic":
        obs_mean = np.maximum(col_mean, 0.05)
        frac = 0.5 if data.labels is None else float(np.clip(np.mean(data.labels), 0.05, 0.95))
        blocks = [
            ParameterBlock("U", Geometry.stiefel(d, k), u),
            ParameterBlock("lam", Geometry.log_positive(k), np.zeros(k)),
            ParameterBlock("mu", Geometry.euclidean(d), np.log(obs_mean)),
            ParameterBlock("Z", Geometry.euclidean(n, k), 0.1 * rng.standard_normal((n, k))),
            ParameterBlock("beta", Geometry.euclidean(k), 0.1 * rng.standard_normal(k)),
            ParameterBlock("beta0", Geometry.euclidean(1), np.array([np.log(frac / (1 - frac))])),
        ]
    else:
        raise ValueError(f"unknown model {model!r}")
    return ProductState(blocks)


MODEL_TARGETS = {
    "ppca": ppca_target,
    "latent_gaussian": latent_gaussian_target,
    "fa_grassmann": fa_grassmann_target,
    "epca_bernoulli": epca_bernoulli_target,
    "joint_poisson_logistic": joint_target,
}

"""Experiment drivers: synthetic generators, fits, sweeps and diagnostics.

Every run_* function writes its outputs (CSV plus a manifest.json echoing the
configuration, seed and package versions) into an output directory and also
returns the headline numbers, so the drivers are usable both from the CLI
and directly from test code.  All randomness is derived from the experiment
seed; re-running with the same seed and configuration reproduces every
output file byte for byte.

Sample windows are half-open [start, stop) ranges over the emitted chain.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import expit

from . import io, metrics, predict
from .geometry import random_uniform
from .hmc import HMCConfig, adapt_step_size, hmc_sample
from .models import (
    BINARY,
    CONTINUOUS,
    COUNT,
    MODEL_TARGETS,
    MaskedDataMatrix,
    initial_state,
)

BIT_ROWS, BIT_COLS = 600, 16
BIT_PROTOTYPES = 3
BIT_FLIP_RATE = 0.2
BIT_MISSING = 4800


@dataclass
class ExperimentConfig:
    """Settings shared by the CLI-facing experiment drivers."""

    name: str
    model: str = ""
    d: int = 0
    k: int = 3
    n: int = 0
    corruption_rate: float = BIT_FLIP_RATE
    missing_fraction: float = 0.5
    hmc: HMCConfig | None = None
    window: tuple[int, int] | None = None
    burn_in: int = 50
    seed: int = 0
    input_path: str = ""
    baseline_path: str = ""
    out_dir: str = "."

    def __post_init__(self):
        for label, rate in (("corruption_rate", self.corruption_rate),
                            ("missing_fraction", self.missing_fraction)):
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{label} must lie in [0, 1], got {rate}")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")


def _manifest_payload(seed, hmc: HMCConfig, extra: dict) -> dict:
    payload = {"seed": seed, "hmc": asdict(hmc), "versions": io.package_versions()}
    payload["hmc"]["target_acceptance"] = list(hmc.target_acceptance)
    payload.update(extra)
    return payload


def default_hmc(num_samples: int, leapfrog_steps: int, seed: int) -> HMCConfig:
    return HMCConfig(step_size=0.02, leapfrog_steps=leapfrog_steps,
                     num_samples=num_samples, seed=seed)


def fit_chain(model: str, data: MaskedDataMatrix, k: int, hmc: HMCConfig,
              record=None):
    """Adapt the step size, then sample; returns the chain.

    The initial state is data-driven; adaptation iterations are discarded
    and the chain starts from the warmed-up state.
    """
    target = MODEL_TARGETS[model](data)
    init = initial_state(model, data, k, np.random.default_rng([hmc.seed, 1]))
    step, warm = adapt_step_size(target, init, hmc, return_state=True)
    return hmc_sample(target, warm, replace(hmc, step_size=step), record=record)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def gen_bitvectors(seed: int):
    """Corrupted, half-missing copies of three random 16-bit prototypes.

    Each prototype is repeated 200 times in a block; every bit is flipped
    independently at rate 0.2 and exactly half of the 9600 entries are
    masked.  Returns (truth, masked corrupted data).
    """
    rng = np.random.default_rng(seed)
    prototypes = rng.integers(0, 2, size=(BIT_PROTOTYPES, BIT_COLS))
    truth = np.repeat(prototypes, BIT_ROWS // BIT_PROTOTYPES, axis=0).astype(float)
    flips = rng.random((BIT_ROWS, BIT_COLS)) < BIT_FLIP_RATE
    noisy = np.where(flips, 1.0 - truth, truth)
    mask = np.ones(BIT_ROWS * BIT_COLS, dtype=bool)
    mask[rng.choice(BIT_ROWS * BIT_COLS, size=BIT_MISSING, replace=False)] = False
    mask = mask.reshape(BIT_ROWS, BIT_COLS)
    data = MaskedDataMatrix(np.where(mask, noisy, 0.0), mask, BINARY)
    return truth, data


def make_low_rank_dataset(n: int, d: int, k: int, noise_sd: float, seed):
    """Complete continuous data from a rank-k Gaussian factor model.

    Factor scales decrease linearly from 3 to 1.  Returns the data and the
    generating parameters, including the implied marginal covariance.
    """
    rng = np.random.default_rng(seed)
    u = random_uniform(d, k, rng)
    lam = np.linspace(3.0, 1.0, k)
    mu = rng.standard_normal(d)
    z = rng.standard_normal((n, k))
    values = z @ (u * lam).T + mu + noise_sd * rng.standard_normal((n, d))
    cov = (u * lam**2) @ u.T + noise_sd**2 * np.eye(d)
    info = {"U": u, "lam": lam, "mu": mu, "sigma2": noise_sd**2, "cov": cov, "Z": z}
    return MaskedDataMatrix(values, np.ones((n, d), dtype=bool), CONTINUOUS), info


def make_joint_dataset(n: int, d: int, k: int, beta_norm: float, seed):
    """Counts plus a label sharing latent factors.

    Log rates are mu + z diag(lam) U^T with well separated factor scales;
    the label weight vector puts all of beta_norm on the largest-scale
    factor, so the dominant coefficient after sorting is the first one.
    """
    rng = np.random.default_rng(seed)
    u = random_uniform(d, k, rng)
    lam = 3.0 * (k - np.arange(k)) / k
    mu = rng.normal(np.log(2.0), 0.1, size=d)
    z = rng.standard_normal((n, k))
    eta = z @ (u * lam).T + mu
    counts = rng.poisson(np.exp(eta)).astype(float)
    beta = np.zeros(k)
    beta[0] = beta_norm
    labels = rng.binomial(1, expit(z @ beta)).astype(float)
    data = MaskedDataMatrix(counts, np.ones((n, d), dtype=bool), COUNT, labels=labels)
    info = {"U": u, "lam": lam, "mu": mu, "beta": beta, "beta0": 0.0, "Z": z}
    return data, info


# ---------------------------------------------------------------------------
# Bit-vector reconstruction
# ---------------------------------------------------------------------------

def run_bit_experiment(out_dir, seed: int = 0, k: int = 3,
                       hmc: HMCConfig | None = None,
                       window: tuple[int, int] = (100, 500)):
    """Fit the binary components model to the corrupted bit vectors.

    Writes the dataset, the loading-frame chain, sampler diagnostics, the
    per-iteration error traces and the windowed-average reconstruction.
    Reconstruction errors count disagreeing entries against the noise-free
    truth over the whole matrix.  Returns (summary dict, chain).
    """
    out = io.ensure_dir(out_dir)
    if hmc is None:
        hmc = default_hmc(num_samples=10000, leapfrog_steps=80, seed=seed)
    truth, data = gen_bitvectors(seed)
    w0, w1 = predict.window_slice(hmc.num_samples, window) \
        if hmc.num_samples >= window[1] else (0, hmc.num_samples)

    target = MODEL_TARGETS["epca_bernoulli"](data)
    init = initial_state("epca_bernoulli", data, k, np.random.default_rng([seed, 1]))
    step, warm = adapt_step_size(target, init, hmc, return_state=True)

    per_sample = np.zeros(hmc.num_samples)
    window_avg = np.full(hmc.num_samples, np.nan)
    prob_sum = np.zeros_like(truth)
    tail_sum = np.zeros_like(truth)
    tail_count = 0

    def stream(i, state):
        nonlocal tail_count
        eta = state["Z"] @ (state["U"] * np.exp(state["lam"])).T + state["mu"]
        per_sample[i] = np.mean((eta > 0.0) != (truth > 0.5))
        if w0 <= i < w1:
            prob_sum[:] += expit(eta)
        if w0 <= i:
            used = min(i + 1, w1) - w0
            window_avg[i] = np.mean((prob_sum > 0.5 * used) != (truth > 0.5))
        if i >= w1:
            tail_sum[:] += expit(eta)
            tail_count += 1

    chain = hmc_sample(target, warm, replace(hmc, step_size=step),
                       record=("U", "lam", "mu"), callback=stream)

    recon = predict.binary_decision(prob_sum / max(w1 - w0, 1))
    window_error = float(np.mean(recon != truth))
    if tail_count:
        tail_error = float(np.mean(predict.binary_decision(tail_sum / tail_count) != truth))
    else:
        tail_error = float("nan")

    io.write_dataset(out / "truth.csv",
                     MaskedDataMatrix(truth, np.ones_like(truth, dtype=bool), BINARY))
    io.write_dataset(out / "data.csv", data)
    for name in ("U", "lam", "mu"):
        io.write_chain_block(out / f"chain_{name}.csv", chain, name)
    io.write_diagnostics(out / "diagnostics.csv", chain)
    io.write_trace(out / "error_trace.csv", "per_sample_error", per_sample)
    io.write_trace(out / "window_trace.csv", "window_avg_error", window_avg)
    io.write_matrix(out / "reconstruction.csv", recon)

    summary = {
        "window": [w0, w1],
        "window_error": window_error,
        "tail_error": tail_error,
        "acceptance_rate": chain.acceptance_rate,
        "step_size": step,
    }
    io.write_manifest(out / "summary.json", summary)
    io.write_manifest(out / "manifest.json", _manifest_payload(
        seed, hmc, {"experiment": "bit_reconstruction", "k": k,
                    "window": [w0, w1], "step_size": step}))
    return summary, chain


# ---------------------------------------------------------------------------
# Leave-one-out conditional prediction
# ---------------------------------------------------------------------------

def run_loo_prediction(out_dir, data: MaskedDataMatrix,
                       baseline_mean: np.ndarray, baseline_cov: np.ndarray,
                       k: int, hmc: HMCConfig, seed: int = 0,
                       predictand_counts=None, assignments: int = 100,
                       burn_in: int = 50):
    """Hold out each row, fit the subspace factor model on the rest, and
    predict random subsets of the held-out entries by Gaussian conditioning.

    Predictions use the posterior-mean data covariance over the post-burn-in
    window and are compared against the supplied baseline (mean, covariance)
    under mean absolute error.  Writes loo_errors.csv with one row per
    (hold-out row, predictand count), averaged over random assignments.
    """
    if not data.fully_observed():
        raise ValueError("leave-one-out prediction requires complete data")
    out = io.ensure_dir(out_dir)
    n, d = data.values.shape
    if n < 3:
        raise ValueError("need at least 3 rows")
    if predictand_counts is None:
        predictand_counts = tuple(range(1, d))
    rows = []
    for j in range(n):
        train = MaskedDataMatrix(np.delete(data.values, j, axis=0),
                                 np.ones((n - 1, d), dtype=bool), CONTINUOUS)
        chain = fit_chain("fa_grassmann", train, k,
                          replace(hmc, seed=int(hmc.seed + j)),
                          record=("U", "psi", "phi", "mu"))
        post_mean, post_cov = predict.posterior_mean_covariance(
            chain, window=(min(burn_in, len(chain) - 1), len(chain)))
        held = data.values[j]
        rng = np.random.default_rng([seed, 7, j])
        for count in predictand_counts:
            if count == 0:
                warnings.warn("predictand count 0 yields no prediction")
                rows.append([str(j), "0", "", ""])
                continue
            if count > d:
                raise ValueError(f"predictand count {count} exceeds {d} columns")
            bayes_err = np.zeros(assignments)
            base_err = np.zeros(assignments)
            for a in range(assignments):
                perm = rng.permutation(d)
                tgt, obs = perm[:count], perm[count:]
                bayes = predict.gaussian_conditional_mean(
                    post_mean, post_cov, obs, held[obs], tgt)
                base = predict.gaussian_conditional_mean(
                    baseline_mean, baseline_cov, obs, held[obs], tgt)
                bayes_err[a] = np.mean(np.abs(held[tgt] - bayes))
                base_err[a] = np.mean(np.abs(held[tgt] - base))
            rows.append([str(j), str(count),
                         io.format_float(bayes_err.mean()),
                         io.format_float(base_err.mean())])
    io.write_rows(out / "loo_errors.csv",
                   ["holdout", "predictand_count", "bayes_error", "baseline_error"],
                   rows)
    by_count = {}
    for row in rows:
        if row[2] == "":
            continue
        by_count.setdefault(int(row[1]), []).append((float(row[2]), float(row[3])))
    summary = {
        "mean_bayes_error": {str(c): float(np.mean([p[0] for p in v]))
                             for c, v in sorted(by_count.items())},
        "mean_baseline_error": {str(c): float(np.mean([p[1] for p in v]))
                                for c, v in sorted(by_count.items())},
    }
    io.write_manifest(out / "summary.json", summary)
    io.write_manifest(out / "manifest.json", _manifest_payload(
        seed, hmc, {"experiment": "loo_prediction", "k": k,
                    "assignments": assignments, "burn_in": burn_in,
                    "predictand_counts": list(predictand_counts)}))
    return summary


# ---------------------------------------------------------------------------
# Imputation sweep
# ---------------------------------------------------------------------------

def _column_mean_fill(train: MaskedDataMatrix) -> np.ndarray:
    observed = train.mask.sum(axis=0)
    totals = train.values.sum(axis=0)
    overall = totals.sum() / max(train.mask.sum(), 1)
    return np.where(observed > 0, totals / np.maximum(observed, 1), overall)


def run_imputation_sweep(out_dir, data: MaskedDataMatrix, k: int,
                         hmc: HMCConfig, seed: int = 0,
                         fractions=tuple(f / 10 for f in range(1, 9)),
                         trials: int = 20, burn_in: int = 50):
    """Mask random entries of complete data, impute, and score against truth.

    For each (fraction, trial) the explicit-factor Gaussian model is fit on
    the masked data and missing entries are imputed by the posterior mean of
    the low-rank fit; the baseline imputes each column's observed mean.
    Rows left with no observed entries are dropped from the trial with a
    warning.  Writes imputation.csv with per-trial mean absolute errors.
    """
    if not data.fully_observed():
        raise ValueError("imputation sweep requires complete data as ground truth")
    out = io.ensure_dir(out_dir)
    n, d = data.values.shape
    rows = []
    wins = {}
    for f_idx, fraction in enumerate(fractions):
        if not 0.0 <= fraction < 1.0:
            raise ValueError(f"missing fraction {fraction} outside [0, 1)")
        for trial in range(trials):
            if fraction == 0.0:
                rows.append([io.format_float(fraction), str(trial), "", ""])
                continue
            rng = np.random.default_rng([seed, f_idx, trial])
            missing = rng.random((n, d)) < fraction
            keep = ~np.all(missing, axis=1)
            if not np.all(keep):
                warnings.warn(f"dropping {int(np.sum(~keep))} fully missing rows "
                              f"(fraction {fraction}, trial {trial})")
            truth = data.values[keep]
            miss = missing[keep]
            train = MaskedDataMatrix(np.where(miss, 0.0, truth), ~miss, CONTINUOUS)
            chain = fit_chain("latent_gaussian", train, k,
                              replace(hmc, seed=int(hmc.seed + 1000 * f_idx + trial)),
                              record=("U", "lam", "mu", "sigma2", "Z"))
            recon = predict.posterior_reconstruct(
                chain, CONTINUOUS,
                window=(min(burn_in, len(chain) - 1), len(chain)))
            model_mae = float(np.mean(np.abs(recon[miss] - truth[miss])))
            base = np.broadcast_to(_column_mean_fill(train), truth.shape)
            base_mae = float(np.mean(np.abs(base[miss] - truth[miss])))
            rows.append([io.format_float(fraction), str(trial),
                         io.format_float(model_mae), io.format_float(base_mae)])
            stat = wins.setdefault(fraction, [0, 0.0, 0.0])
            stat[0] += model_mae < base_mae
            stat[1] += model_mae
            stat[2] += base_mae
    io.write_rows(out / "imputation.csv",
                   ["fraction", "trial", "model_mae", "baseline_mae"], rows)
    summary = {
        f"{frac:g}": {
            "wins": stat[0], "trials": trials,
            "mean_model_mae": stat[1] / trials,
            "mean_baseline_mae": stat[2] / trials,
        }
        for frac, stat in sorted(wins.items())
    }
    io.write_manifest(out / "summary.json", summary)
    io.write_manifest(out / "manifest.json", _manifest_payload(
        seed, hmc, {"experiment": "imputation_sweep", "k": k, "trials": trials,
                    "burn_in": burn_in,
                    "fractions": [float(f) for f in fractions]}))
    return summary


# ---------------------------------------------------------------------------
# Cross-validated joint prediction
# ---------------------------------------------------------------------------

def run_joint_cv(out_dir, data: MaskedDataMatrix, k: int, hmc: HMCConfig,
                 seed: int = 0, folds: int = 10, burn_in: int = 50):
    """K-fold label prediction with the shared-factor count model.

    Each fold's labels are predicted from its counts alone via the latent
    mode under posterior-mean parameters, against a majority-class baseline
    read off the training labels.  Writes cv_errors.csv.
    """
    if data.labels is None:
        raise ValueError("cross-validation requires labels")
    out = io.ensure_dir(out_dir)
    n = data.n_rows
    if folds < 2 or folds > n:
        raise ValueError(f"folds must lie in [2, {n}]")
    order = np.random.default_rng([seed, 11]).permutation(n)
    chunks = np.array_split(order, folds)
    rows = []
    model_errors = []
    base_errors = []
    for fold, test_idx in enumerate(chunks):
        train_idx = np.setdiff1d(order, test_idx)
        train = MaskedDataMatrix(data.values[train_idx], data.mask[train_idx],
                                 COUNT, labels=data.labels[train_idx])
        if len(np.unique(train.labels)) < 2:
            warnings.warn(f"fold {fold}: training labels are single-class")
        chain = fit_chain("joint_poisson_logistic", train, k,
                          replace(hmc, seed=int(hmc.seed + fold)))
        probs = predict.joint_label_probabilities(
            chain, data.values[test_idx], data.mask[test_idx],
            window=(min(burn_in, len(chain) - 1), len(chain)))
        pred = predict.binary_decision(probs)
        majority = 1.0 if train.labels.mean() > 0.5 else 0.0
        truth = data.labels[test_idx]
        model_err = float(np.mean(pred != truth))
        base_err = float(np.mean(majority != truth))
        rows.append([str(fold), str(len(test_idx)),
                     io.format_float(model_err), io.format_float(base_err)])
        model_errors.append(model_err)
        base_errors.append(base_err)
    io.write_rows(out / "cv_errors.csv",
                   ["fold", "n_test", "model_error", "baseline_error"], rows)
    summary = {
        "mean_model_error": float(np.mean(model_errors)),
        "mean_baseline_error": float(np.mean(base_errors)),
        "folds": folds,
    }
    io.write_manifest(out / "summary.json", summary)
    io.write_manifest(out / "manifest.json", _manifest_payload(
        seed, hmc, {"experiment": "joint_cv", "k": k, "folds": folds,
                    "burn_in": burn_in}))
    return summary


def run_joint_replications(out_dir, seed: int, hmc: HMCConfig,
                           replications: int = 20, n: int = 250, d: int = 53,
                           k: int = 5, beta_norm: float = 3.0,
                           burn_in: int = 50, level: float = 0.95):
    """Repeatedly simulate the joint model and interval-estimate the
    dominant label coefficient.

    Per replication: fresh synthetic data, a full fit, factor alignment,
    then an equal-tailed credible interval for the coefficient of the
    largest-scale factor.  Writes beta_intervals.csv with the interval and
    whether it excludes zero.
    """
    out = io.ensure_dir(out_dir)
    alpha = 0.5 * (1.0 - level)
    rows = []
    excluded = 0
    for rep in range(replications):
        data, _ = make_joint_dataset(n, d, k, beta_norm, seed=[seed, 5, rep])
        chain = fit_chain("joint_poisson_logistic", data, k,
                          replace(hmc, seed=int(hmc.seed + rep)))
        aligned = predict.order_factors(
            chain, window=(min(burn_in, len(chain) - 1), len(chain)))
        dominant = aligned["beta"][:, 0]
        lo, hi = np.quantile(dominant, [alpha, 1.0 - alpha])
        excludes = bool(lo > 0.0 or hi < 0.0)
        excluded += excludes
        rows.append([str(rep), io.format_float(lo), io.format_float(hi),
                     str(int(excludes))])
    io.write_rows(out / "beta_intervals.csv",
                   ["replication", "lower", "upper", "excludes_zero"], rows)
    summary = {"replications": replications, "excluding_zero": excluded,
               "level": level}
    io.write_manifest(out / "summary.json", summary)
    io.write_manifest(out / "manifest.json", _manifest_payload(
        seed, hmc, {"experiment": "joint_replications", "k": k, "n": n, "d": d,
                    "beta_norm": beta_norm, "replications": replications,
                    "burn_in": burn_in, "level": level}))
    return summary


# ---------------------------------------------------------------------------
# Chain diagnostics
# ---------------------------------------------------------------------------

def diagnose_samples(samples: np.ndarray, window: tuple[int, int] | None = None):
    """Distance trace of frame samples around their windowed subspace mean.

    The mean is taken over the given window (default: the latter half) and
    every sample's subspace distance to it is reported.  Frames are compared
    through their column spans, so Stiefel chains are handled identically to
    Grassmann chains.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3:
        raise ValueError("expected samples of shape (m, d, k)")
    m = samples.shape[0]
    if window is None:
        window = (m // 2, m)
    w0, w1 = predict.window_slice(m, window)
    mean = metrics.pf_mean(samples[w0:w1])
    distances = metrics.pf_trace(samples, mean)
    return mean, distances


def diagnose(out_dir, chain_path, diagnostics_path=None,
             window: tuple[int, int] | None = None):
    """CLI-facing diagnostics: pF trace plus sampler health summary."""
    out = io.ensure_dir(out_dir)
    name, samples = io.read_chain_block(chain_path)
    mean, distances = diagnose_samples(samples, window)
    io.write_trace(out / "pf_trace.csv", "pf_distance", distances)
    io.write_matrix(out / "pf_mean.csv", mean, prefix="c")
    summary = {
        "block": name,
        "samples": int(samples.shape[0]),
        "max_pf_distance": float(distances.max()),
        "median_pf_distance": float(np.median(distances)),
    }
    if diagnostics_path is not None:
        diag = io.read_diagnostics(diagnostics_path)
        finite = diag["energy_error"][np.isfinite(diag["energy_error"])]
        summary["acceptance_rate"] = float(diag["accepted"].mean())
        summary["mean_abs_energy_error"] = (
            float(np.mean(np.abs(finite))) if finite.size else float("nan"))
        summary["divergences"] = int(np.sum(~np.isfinite(diag["energy_error"])))
    io.write_manifest(out / "summary.json", summary)
    return summary

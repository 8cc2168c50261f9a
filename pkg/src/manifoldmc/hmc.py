"""Hamiltonian Monte Carlo with geodesic position updates.

The state is a product of named blocks, each carrying one of four geometries:

    stiefel d k    orthonormal d x k frame, geodesic flow on the Stiefel manifold
    grassmann d k  subspace representative, geodesic flow on the Grassmann manifold
    euclidean      unconstrained array, straight-line flow
    log_positive   logarithm of a positive quantity, straight-line flow

Velocities live in the ambient space of each block and are orthogonally
projected to the tangent space after every modification.  Because the
compact manifold blocks carry the uniform prior, the accept-reject step
needs only the target log density and the Euclidean kinetic energy.

log_positive blocks hold the log of the underlying positive parameter; the
target density is responsible for including the change-of-variables term,
which the bundled models do.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geometry

# Position drift above which a manifold block is reorthonormalized
# mid-trajectory (and its velocity reprojected).
REORTH_TRIGGER = 1e-9
# Drift above which an accepted state is snapped back before being emitted,
# so emitted states always satisfy the block invariants.
EMIT_SNAP = 1e-10

STIEFEL = "stiefel"
GRASSMANN = "grassmann"
EUCLIDEAN = "euclidean"
LOG_POSITIVE = "log_positive"


@dataclass(frozen=True)
class Geometry:
    """Geometry tag of one state block."""

    kind: str
    shape: tuple[int, ...]

    @classmethod
    def stiefel(cls, d: int, k: int) -> "Geometry":
        return cls(STIEFEL, (d, k))

    @classmethod
    def grassmann(cls, d: int, k: int) -> "Geometry":
        return cls(GRASSMANN, (d, k))

    @classmethod
    def euclidean(cls, *shape: int) -> "Geometry":
        return cls(EUCLIDEAN, tuple(shape))

    @classmethod
    def log_positive(cls, *shape: int) -> "Geometry":
        return cls(LOG_POSITIVE, tuple(shape))

    def __post_init__(self):
        if self.kind not in (STIEFEL, GRASSMANN, EUCLIDEAN, LOG_POSITIVE):
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if self.kind in (STIEFEL, GRASSMANN):
            if len(self.shape) != 2 or not 1 <= self.shape[1] <= self.shape[0]:
                raise ValueError(f"bad manifold shape {self.shape}")
        elif len(self.shape) == 0:
            raise ValueError("blocks must have at least one dimension")

    @property
    def is_manifold(self) -> bool:
        return self.kind in (STIEFEL, GRASSMANN)


@dataclass(frozen=True)
class ParameterBlock:
    name: str
    geometry: Geometry
    value: np.ndarray

    def __post_init__(self):
        value = np.asarray(self.value, dtype=float)
        object.__setattr__(self, "value", value)
        if value.shape != self.geometry.shape:
            raise ValueError(
                f"block {self.name!r}: value shape {value.shape} does not "
                f"match geometry shape {self.geometry.shape}"
            )


class ProductState:
    """Ordered, named collection of parameter blocks."""

    def __init__(self, blocks):
        blocks = tuple(blocks)
        names = [b.name for b in blocks]
        if len(set(names)) != len(names):
            raise ValueError("block names must be unique")
        self.names: tuple[str, ...] = tuple(names)
        self.geometries: dict[str, Geometry] = {b.name: b.geometry for b in blocks}
        self.values: dict[str, np.ndarray] = {b.name: b.value for b in blocks}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def replace(self, values: dict[str, np.ndarray]) -> "ProductState":
        """New state sharing this one's layout, with the given block values."""
        new = object.__new__(ProductState)
        new.names = self.names
        new.geometries = self.geometries
        new.values = {n: values[n] for n in self.names}
        return new

    def copy(self) -> "ProductState":
        return self.replace({n: self.values[n].copy() for n in self.names})

    def validate(self, tol: float = 1e-10) -> None:
        """Raise if any block violates its geometry's invariants."""
        for name in self.names:
            value = self.values[name]
            if not np.all(np.isfinite(value)):
                raise ValueError(f"block {name!r} contains non-finite entries")
            geo = self.geometries[name]
            if geo.is_manifold:
                res = geometry.orthonormality_residual(value)
                if res > tol:
                    raise ValueError(
                        f"block {name!r} is not orthonormal: residual {res:.3e}"
                    )


@dataclass
class HMCConfig:
    step_size: float
    leapfrog_steps: int
    num_samples: int
    seed: int
    target_acceptance: tuple[float, float] = (0.6, 0.8)
    adapt_iterations: int = 100

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be at least 1")
        if self.num_samples < 1:
            raise ValueError("num_samples must be at least 1")
        lo, hi = self.target_acceptance
        if not 0 <= lo < hi <= 1:
            raise ValueError("target_acceptance must be an increasing pair in [0, 1]")
        if self.adapt_iterations < 50:
            raise ValueError("adapt_iterations must be at least 50")


class TargetDensity:
    """Log density over a ProductState together with its ambient gradients.

    Wraps a single fused callable state -> (log_density, gradients) where
    gradients maps every block name to an array of the block's shape.  For
    log_positive blocks both value and gradient are with respect to the log
    coordinate.
    """

    def __init__(self, logp_and_grad):
        self._fused = logp_and_grad

    def logp_and_grad(self, state: ProductState) -> tuple[float, dict[str, np.ndarray]]:
        logp, grads = self._fused(state)
        return float(logp), grads

    def log_density(self, state: ProductState) -> float:
        return self.logp_and_grad(state)[0]

    def gradient(self, state: ProductState) -> dict[str, np.ndarray]:
        return self.logp_and_grad(state)[1]


@dataclass
class Chain:
    """Output of hmc_sample: per-block sample arrays plus per-iteration records."""

    blocks: dict[str, np.ndarray]
    geometries: dict[str, Geometry]
    log_density: np.ndarray
    energy_error: np.ndarray
    accepted: np.ndarray
    step_size: float

    def __len__(self) -> int:
        return len(self.log_density)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))

    def natural_block(self, name: str) -> np.ndarray:
        """Samples of a block in natural coordinates (exp of log_positive)."""
        values = self.blocks[name]
        if self.geometries[name].kind == LOG_POSITIVE:
            return np.exp(values)
        return values


def _project(geo: Geometry, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    if geo.kind == STIEFEL:
        return geometry.stiefel_project(x, v)
    if geo.kind == GRASSMANN:
        return geometry.grassmann_project(x, v)
    return v


def _flow(geo: Geometry, x: np.ndarray, v: np.ndarray, t: float):
    if geo.kind == STIEFEL:
        return geometry.stiefel_geodesic(x, v, t)
    if geo.kind == GRASSMANN:
        return geometry.grassmann_geodesic(x, v, t)
    return x + t * v, v


def draw_velocity(state: ProductState, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Standard normal velocity per block, projected to the tangent space."""
    velocity = {}
    for name in state.names:
        v = rng.standard_normal(state.geometries[name].shape)
        velocity[name] = _project(state.geometries[name], state.values[name], v)
    return velocity


def kinetic_energy(velocity: dict[str, np.ndarray]) -> float:
    return 0.5 * sum(float(np.sum(v * v)) for v in velocity.values())


class _TrajectoryDiverged(Exception):
    """Non-finite value encountered mid-trajectory; proposal is rejected."""


def _finite_eval(target: TargetDensity, state: ProductState):
    logp, grads = target.logp_and_grad(state)
    if not np.isfinite(logp):
        raise _TrajectoryDiverged
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise _TrajectoryDiverged
    return logp, grads


def _leapfrog(target, state, velocity, grads, step_size, num_steps):
    """Integrate num_steps leapfrog steps; returns (state, velocity, logp, grads).

    `grads` must be the target gradient at `state`.  Raises
    _TrajectoryDiverged on any non-finite intermediate value.
    """
    half = 0.5 * step_size
    values = dict(state.values)
    velocity = dict(velocity)
    names = state.names
    geos = state.geometries
    logp = None
    for _ in range(num_steps):
        for n in names:
            velocity[n] = _project(geos[n], values[n], velocity[n] + half * grads[n])
        try:
            for n in names:
                geo = geos[n]
                x, v = _flow(geo, values[n], velocity[n], step_size)
                if geo.is_manifold and geometry.orthonormality_residual(x) > REORTH_TRIGGER:
                    x = geometry.reorthonormalize(x)
                    v = _project(geo, x, v)
                values[n], velocity[n] = x, v
            logp, grads = _finite_eval(target, state.replace(values))
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise _TrajectoryDiverged from exc
        for n in names:
            velocity[n] = _project(geos[n], values[n], velocity[n] + half * grads[n])
    return state.replace(values), velocity, logp, grads


def leapfrog(target, state, velocity, step_size, num_steps):
    """Public trajectory integrator, mainly useful for reversibility checks.

    Args:
        target: TargetDensity.
        state: starting ProductState.
        velocity: per-block tangent velocity (dict).
        step_size: leapfrog step.
        num_steps: number of full steps.

    Returns:
        (final state, final velocity dict).
    """
    _, grads = target.logp_and_grad(state)
    out_state, out_velocity, _, _ = _leapfrog(
        target, state, velocity, grads, step_size, num_steps
    )
    return out_state, out_velocity


def _hmc_iteration(target, state, logp, grads, step_size, num_steps, rng):
    """One proposal-accept cycle.

    Returns (state, logp, grads, accepted, energy_error).
    """
    velocity = draw_velocity(state, rng)
    h0 = logp - kinetic_energy(velocity)
    try:
        new_state, new_velocity, new_logp, new_grads = _leapfrog(
            target, state, velocity, grads, step_size, num_steps
        )
    except _TrajectoryDiverged:
        return state, logp, grads, False, np.inf
    h1 = new_logp - kinetic_energy(new_velocity)
    denergy = h1 - h0
    if denergy >= 0 or np.log(rng.uniform()) < denergy:
        snapped = {}
        for n in new_state.names:
            x = new_state.values[n]
            geo = new_state.geometries[n]
            if geo.is_manifold and geometry.orthonormality_residual(x) > EMIT_SNAP:
                x = geometry.reorthonormalize(x)
            snapped[n] = x
        return new_state.replace(snapped), new_logp, new_grads, True, denergy
    return state, logp, grads, False, denergy


def _init_eval(target, init):
    init.validate()
    logp, grads = target.logp_and_grad(init)
    if not np.isfinite(logp):
        raise ValueError(f"log density is not finite at the initial state: {logp}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"gradient of block {name!r} is not finite at the initial state")
    return logp, grads


def hmc_sample(
    target: TargetDensity,
    init: ProductState,
    config: HMCConfig,
    record=None,
    callback=None,
) -> Chain:
    """Run geodesic HMC and return the chain.

    Args:
        target: log density with gradients.
        init: starting state; must satisfy its block invariants.
        config: sampler settings; config.step_size and config.leapfrog_steps
            are used as-is (run adapt_step_size first if calibration is wanted).
        record: iterable of block names to store, or None for all blocks.
        callback: optional callable (iteration, state) invoked on every
            emitted state, e.g. to stream derived quantities without storing
            large blocks.

    Returns:
        Chain with config.num_samples states and per-iteration records.
    """
    logp, grads = _init_eval(target, init)
    rng = np.random.default_rng(config.seed)
    recorded = tuple(record) if record is not None else init.names
    for name in recorded:
        if name not in init.names:
            raise ValueError(f"cannot record unknown block {name!r}")
    samples: dict[str, list] = {n: [] for n in recorded}
    log_density = np.empty(config.num_samples)
    energy_error = np.empty(config.num_samples)
    accepted = np.zeros(config.num_samples, dtype=bool)
    state = init
    for i in range(config.num_samples):
        state, logp, grads, acc, denergy = _hmc_iteration(
            target, state, logp, grads, config.step_size, config.leapfrog_steps, rng
        )
        for n in recorded:
            samples[n].append(state.values[n])
        log_density[i] = logp
        energy_error[i] = denergy
        accepted[i] = acc
        if callback is not None:
            callback(i, state)
    return Chain(
        blocks={n: np.stack(samples[n]) for n in recorded},
        geometries={n: init.geometries[n] for n in recorded},
        log_density=log_density,
        energy_error=energy_error,
        accepted=accepted,
        step_size=config.step_size,
    )


def adapt_step_size(
    target: TargetDensity,
    init: ProductState,
    config: HMCConfig,
    return_state: bool = False,
):
    """Calibrate the step size to the configured acceptance band.

    Runs short measurement windows, doubling the step when acceptance is
    above the band and halving it when below, reusing the warmed-up state
    between windows.  All adaptation iterations are discarded.

    Returns the calibrated step size (and the final warmed-up state when
    return_state is True).  Emits a warning if the confirmation window does
    not land inside the band; raises RuntimeError if acceptance stays at
    zero after an aggressive halving sweep.
    """
    lo, hi = config.target_acceptance
    eps = config.step_size
    if lo <= 0.0 and hi >= 1.0:
        return (eps, init) if return_state else eps
    logp, grads = _init_eval(target, init)
    rng = np.random.default_rng(config.seed)
    window = max(25, min(100, config.adapt_iterations // 4))
    state = init
    zero_streak = 0
    too_small = 0.0  # largest step observed to accept too much
    too_big = np.inf  # smallest step observed to accept too little

    def measure(step, n):
        nonlocal state, logp, grads
        hits = 0
        for _ in range(n):
            state, logp, grads, acc, _ = _hmc_iteration(
                target, state, logp, grads, step, config.leapfrog_steps, rng
            )
            hits += acc
        return hits / n

    rate = measure(eps, window)
    used = window
    best_rate = rate
    while not lo <= rate <= hi and used + window <= config.adapt_iterations:
        best_rate = max(best_rate, rate)
        if rate > hi:
            too_small = max(too_small, eps)
            zero_streak = 0
        else:
            too_big = min(too_big, eps)
            zero_streak = zero_streak + 1 if rate == 0.0 else 0
            if zero_streak > 50:
                raise RuntimeError(
                    "step-size adaptation failed: acceptance stayed at zero "
                    f"down to step {eps:.3e}; the target may be degenerate"
                )
        if np.isfinite(too_big) and too_small > 0.0:
            eps = float(np.sqrt(too_small * too_big))  # bisect the bracket
        elif rate > hi:
            eps *= 2.0
        else:
            eps /= 2.0
        rate = measure(eps, window)
        used += window
    best_rate = max(best_rate, rate)
    if best_rate == 0.0:
        raise RuntimeError(
            "step-size adaptation failed: every measured window rejected all "
            f"proposals (last step {eps:.3e}); the target may be degenerate"
        )
    # the last window was measured at the returned step, so it doubles as
    # the post-adaptation check
    if not lo <= rate <= hi:
        warnings.warn(
            f"step-size adaptation ended with acceptance {rate:.3f} "
            f"outside [{lo}, {hi}] at step {eps:.3e}",
            stacklevel=2,
        )
    return (eps, state) if return_state else eps


def gradient_check(
    target: TargetDensity,
    state: ProductState,
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Relative error between analytic and central-difference gradients.

    Returns, per block, ||g_fd - g||_F / max(||g_fd||_F, 1e-12) over the
    checked entries (all entries, or max_entries randomly chosen ones).
    """
    _, grads = target.logp_and_grad(state)
    errors = {}
    for name in state.names:
        base = state.values[name]
        flat_idx = np.arange(base.size)
        if max_entries is not None and base.size > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            flat_idx = rng.choice(base.size, size=max_entries, replace=False)
        fd = np.zeros(len(flat_idx))
        for j, idx in enumerate(flat_idx):
            bumped = base.copy().reshape(-1)
            bumped[idx] += step
            hi = target.log_density(state.replace({**state.values, name: bumped.reshape(base.shape)}))
            bumped[idx] -= 2 * step
            lo = target.log_density(state.replace({**state.values, name: bumped.reshape(base.shape)}))
            fd[j] = (hi - lo) / (2 * step)
        analytic = grads[name].reshape(-1)[flat_idx]
        errors[name] = float(
            np.linalg.norm(fd - analytic) / max(np.linalg.norm(fd), 1e-12)
        )
    return errors

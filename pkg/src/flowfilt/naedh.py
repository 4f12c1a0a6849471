"""N-step analytic EDH update and the surrounding filtering loop.

For nonlinear measurement models the closed-form flow is applied piecewise
over a substep schedule; at the start of each subinterval the observation
function is re-linearized at the current particle-cloud mean and the
eigenspace basis rebuilt. The prior mean and covariance that parameterize
the flow (through E, F, x_tilde) stay fixed at their pre-update values for
all substeps; only the linearization point moves.

The nonlinear observation enters through the effective measurement
z_eff = z - h(x_lin) + H x_lin, which makes the affine flow formulas
locally exact at the linearization point. Innovation components flagged as
angles are wrapped to (-pi, pi] first.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .flow import (
    apply_substep,
    build_flow_basis,
    ccr_schedule,
    linear_schedule,
    make_substep_operator,
)
from .gaussian import (
    GaussianBelief,
    LinearMeasurement,
    ParticleEnsemble,
    ensemble_mean,
    kalman_update,
    sample_ensemble,
    symmetrize,
)

__all__ = [
    "MeasurementModel",
    "DynamicsModel",
    "FilterState",
    "FilterRun",
    "FlowUpdateError",
    "wrap_angle",
    "naedh_update",
    "predict",
    "run_filter",
    "verify_jacobian",
]


class FlowUpdateError(RuntimeError):
    """A measurement update could not be completed.

    Carries the failing substep index (analytic updates) or the pseudo-time
    reached (integrated updates) for diagnostics.
    """

    def __init__(self, message: str, substep: int | None = None,
                 lambda_reached: float | None = None):
        super().__init__(message)
        self.substep = substep
        self.lambda_reached = lambda_reached


def wrap_angle(x):
    """Wrap angle(s) to (-pi, pi]."""
    return np.pi - np.remainder(np.pi - np.asarray(x, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class MeasurementModel:
    """Possibly nonlinear observation model z = h(x) + v, v ~ N(0, R).

    h maps a state (n_x,) to an observation (n_z,); implementations may
    additionally accept (n, n_x) batches row-wise (the bootstrap particle
    filter exploits this). jacobian maps a state to the (n_z, n_x) matrix
    of partials of h. innovation_wrap optionally flags observation
    components that are angles, whose innovations get wrapped to (-pi, pi].
    """

    h: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    R: np.ndarray
    innovation_wrap: np.ndarray | None = None

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        R.setflags(write=False)
        if np.linalg.eigvalsh(symmetrize(R)).min() <= 0.0:
            raise ValueError("measurement noise covariance must be positive definite")
        object.__setattr__(self, "R", R)
        if self.innovation_wrap is not None:
            w = np.array(self.innovation_wrap, dtype=bool)
            w.setflags(write=False)
            if w.shape != (R.shape[0],):
                raise ValueError("innovation_wrap must have one flag per observation row")
            object.__setattr__(self, "innovation_wrap", w)

    @property
    def n_z(self) -> int:
        return self.R.shape[0]

    def innovation(self, z: np.ndarray, predicted: np.ndarray) -> np.ndarray:
        innov = np.asarray(z, dtype=float) - predicted
        if self.innovation_wrap is not None:
            innov = np.where(self.innovation_wrap, wrap_angle(innov), innov)
        return innov

    def effective_observation(self, x_lin: np.ndarray, z: np.ndarray,
                              H: np.ndarray) -> np.ndarray:
        """z_eff = wrapped(z - h(x_lin)) + H x_lin for the affine flow formulas."""
        return self.innovation(z, self.h(x_lin)) + H @ x_lin


@dataclass(frozen=True)
class DynamicsModel:
    """Linear dynamics x' = transition x + w, w ~ N(0, process_noise)."""

    transition: np.ndarray
    process_noise: np.ndarray

    def __post_init__(self):
        T = np.array(self.transition, dtype=float)
        Q = np.array(self.process_noise, dtype=float)
        T.setflags(write=False)
        Q.setflags(write=False)
        n = T.shape[0]
        if T.shape != (n, n) or Q.shape != (n, n):
            raise ValueError("transition and process_noise must be square and same size")
        scale = max(np.max(np.abs(Q)), 1e-300)
        if np.max(np.abs(Q - Q.T)) > 1e-12 * scale:
            raise ValueError("process_noise is not symmetric")
        if np.linalg.eigvalsh(symmetrize(Q)).min() < -1e-12 * scale:
            raise ValueError("process_noise is not positive semidefinite")
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "process_noise", Q)


@dataclass(frozen=True)
class FilterState:
    """A particle cloud coupled to its companion Gaussian belief."""

    ensemble: ParticleEnsemble
    belief: GaussianBelief

    def __post_init__(self):
        if self.ensemble.dim != self.belief.dim:
            raise ValueError(
                f"ensemble dimension {self.ensemble.dim} does not match "
                f"belief dimension {self.belief.dim}"
            )


def initial_state(belief: GaussianBelief, n_p: int, seed) -> FilterState:
    return FilterState(sample_ensemble(belief, n_p, seed), belief)


def naedh_update(
    state: FilterState,
    model: MeasurementModel,
    z: np.ndarray,
    n_substeps: int,
    kind: str = "ccr",
) -> FilterState:
    """One N-step analytic EDH measurement update.

    Linearizes at the prior mean, builds the substep schedule (ccr from the
    initial basis' largest eigenvalue, or uniform), then per substep:
    re-linearize at the current ensemble mean (from the second substep on),
    rebuild the eigenspace basis against the *prior* belief, and transport
    every particle by the closed-form subinterval operator. Afterwards the
    companion belief is refreshed: mean from the transported cloud,
    covariance from a Kalman update linearized at the post-flow mean.
    """
    if n_substeps < 1:
        raise ValueError("substep count must be >= 1")
    belief = state.belief
    z = np.asarray(z, dtype=float)

    def local_basis(x_lin, substep):
        H = np.asarray(model.jacobian(x_lin), dtype=float)
        z_eff = model.effective_observation(x_lin, z, H)
        try:
            meas = LinearMeasurement(H, model.R, z_eff)
            return build_flow_basis(belief, meas)
        except ValueError as exc:
            raise FlowUpdateError(
                f"substep {substep}: {exc}", substep=substep
            ) from exc

    basis = local_basis(belief.mean, 1)
    if kind == "ccr":
        schedule = ccr_schedule(basis.alpha_max, n_substeps)
    elif kind == "linear":
        schedule = linear_schedule(n_substeps)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")

    particles = state.ensemble
    for k, (lam_a, lam_b) in enumerate(schedule.intervals(), start=1):
        if k > 1:
            basis = local_basis(ensemble_mean(particles), k)
        op = make_substep_operator(basis, lam_a, lam_b)
        particles = apply_substep(op, basis, particles)
        if not np.all(np.isfinite(particles.particles)):
            raise FlowUpdateError(f"non-finite particle after substep {k}", substep=k)

    mean_post = ensemble_mean(particles)
    H_post = np.asarray(model.jacobian(mean_post), dtype=float)
    z_eff = model.effective_observation(mean_post, z, H_post)
    refreshed = kalman_update(belief, LinearMeasurement(H_post, model.R, z_eff))
    return FilterState(particles, GaussianBelief(mean_post, refreshed.cov))


def _noise_factor(Q: np.ndarray) -> np.ndarray:
    """Factor L with L L' = Q for PSD (possibly singular) Q."""
    w, v = np.linalg.eigh(symmetrize(Q))
    return v * np.sqrt(np.clip(w, 0.0, None))


def predict(state: FilterState, dyn: DynamicsModel, seed) -> FilterState:
    """Propagate particles and belief through the linear dynamics."""
    T, Q = dyn.transition, dyn.process_noise
    if T.shape[0] != state.belief.dim:
        raise ValueError("dynamics dimension does not match state")
    X = state.ensemble.particles @ T.T
    if np.any(Q):
        rng = np.random.default_rng(seed)
        X = X + rng.standard_normal(X.shape) @ _noise_factor(Q).T
    mean = T @ state.belief.mean
    cov = symmetrize(T @ state.belief.cov @ T.T + Q)
    return FilterState(ParticleEnsemble(X), GaussianBelief(mean, cov))


@dataclass(frozen=True)
class FilterRun:
    """Trajectory of filter states with per-update wall times."""

    states: list
    update_times: np.ndarray
    means: np.ndarray  # post-update ensemble means, (n_obs, n_x)


def run_filter(
    initial: GaussianBelief,
    dyn: DynamicsModel,
    model: MeasurementModel,
    observations,
    n_p: int,
    n_substeps: int,
    kind: str = "ccr",
    seed: int = 0,
) -> FilterRun:
    """Alternate predict / naedh_update over a measurement sequence.

    Per-step RNG streams are spawned from the seed, so a fixed seed gives a
    bit-identical trajectory. A failed update propagates with its step index.
    """
    observations = [np.asarray(z, dtype=float) for z in observations]
    children = np.random.SeedSequence(seed).spawn(len(observations) + 1)
    state = initial_state(initial, n_p, children[0])
    states = [state]
    times = np.zeros(len(observations))
    means = np.zeros((len(observations), initial.dim))
    for t, z in enumerate(observations):
        state = predict(state, dyn, children[t + 1])
        tic = time.perf_counter()
        try:
            state = naedh_update(state, model, z, n_substeps, kind)
        except FlowUpdateError as exc:
            raise FlowUpdateError(
                f"update {t + 1} failed: {exc}", substep=exc.substep
            ) from exc
        times[t] = time.perf_counter() - tic
        means[t] = ensemble_mean(state.ensemble)
        states.append(state)
    return FilterRun(states=states, update_times=times, means=means)


def verify_jacobian(
    model: MeasurementModel,
    states,
    rel_tol: float = 1e-5,
    step: float = 1e-6,
) -> float:
    """Check the model's Jacobian against central finite differences.

    Returns the worst relative deviation over the given states; raises if it
    exceeds rel_tol.
    """
    worst = 0.0
    for x in states:
        x = np.asarray(x, dtype=float)
        J = np.asarray(model.jacobian(x), dtype=float)
        fd = np.empty_like(J)
        for i in range(x.shape[0]):
            dx = np.zeros_like(x)
            dx[i] = step
            fd[:, i] = model.innovation(model.h(x + dx), model.h(x - dx)) / (2 * step)
        dev = np.max(np.abs(J - fd)) / max(np.max(np.abs(J)), 1e-300)
        worst = max(worst, dev)
    if worst > rel_tol:
        raise ValueError(f"jacobian deviates from finite differences by {worst:.3e}")
    return worst

"""Gaussian beliefs, linear measurements, particle ensembles.

Foundational value types for the flow filters plus the exact Kalman
measurement update, which doubles as the equivalence oracle for the
analytic flow. All covariance factorizations go through eigendecomposition
(unique symmetric square roots) or Cholesky (sampling); every covariance
returned to a caller is explicitly re-symmetrized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianBelief",
    "LinearMeasurement",
    "ParticleEnsemble",
    "symmetric_sqrt_inverse",
    "kalman_update",
    "sample_ensemble",
    "ensemble_moments",
]


def _frozen(a, dtype=float) -> np.ndarray:
    """Copy to a float ndarray and lock it read-only."""
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a Gaussian state belief.

    The covariance must be symmetric (to 1e-12 relative) and positive
    definite; both are checked at construction.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean)
        cov = _frozen(self.cov)
        if mean.ndim != 1:
            raise ValueError(f"mean must be a vector, got shape {mean.shape}")
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ValueError(f"cov shape {cov.shape} does not match state dimension {n}")
        scale = np.max(np.abs(cov)) if cov.size else 0.0
        asym = np.max(np.abs(cov - cov.T)) if cov.size else 0.0
        if asym > 1e-12 * max(scale, 1e-300):
            raise ValueError(f"cov is not symmetric: max|cov - cov.T| = {asym:.3e}")
        w = np.linalg.eigvalsh(symmetrize(cov))
        if w.min() <= 0.0:
            raise ValueError(f"cov is not positive definite: min eigenvalue = {w.min():.3e}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class LinearMeasurement:
    """Affine-Gaussian measurement z = H x + v, v ~ N(0, R).

    R must be symmetric positive definite and H full row rank (singular
    values above 1e-10 of the largest).
    """

    H: np.ndarray
    R: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        H = _frozen(self.H)
        R = _frozen(self.R)
        z = _frozen(self.z)
        if H.ndim != 2:
            raise ValueError(f"H must be a matrix, got shape {H.shape}")
        n_z = H.shape[0]
        if R.shape != (n_z, n_z):
            raise ValueError(f"R shape {R.shape} does not match {n_z} measurement rows")
        if z.shape != (n_z,):
            raise ValueError(f"z shape {z.shape} does not match {n_z} measurement rows")
        scale = np.max(np.abs(R))
        if np.max(np.abs(R - R.T)) > 1e-12 * max(scale, 1e-300):
            raise ValueError("R is not symmetric")
        w = np.linalg.eigvalsh(symmetrize(R))
        if w.min() <= 0.0:
            raise ValueError(f"R is not positive definite: min eigenvalue = {w.min():.3e}")
        sv = np.linalg.svd(H, compute_uv=False)
        if sv.min() <= 1e-10 * sv.max():
            raise ValueError(
                f"H is rank deficient: smallest singular value {sv.min():.3e} "
                f"vs largest {sv.max():.3e}"
            )
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "z", z)

    @property
    def n_z(self) -> int:
        return self.H.shape[0]

    @property
    def n_x(self) -> int:
        return self.H.shape[1]


@dataclass(frozen=True)
class ParticleEnsemble:
    """A cloud of state samples, stored as an (n_p, n_x) array."""

    particles: np.ndarray

    def __post_init__(self):
        p = _frozen(self.particles)
        if p.ndim != 2:
            raise ValueError(f"particles must be (n_p, n_x), got shape {p.shape}")
        if p.shape[0] < 1:
            raise ValueError("ensemble needs at least one particle")
        object.__setattr__(self, "particles", p)

    @property
    def n_p(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]


def symmetric_sqrt_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse of the unique symmetric positive definite square root of m.

    Returns S such that S m S = I. Computed via eigendecomposition; rejects
    non-SPD input, naming the offending eigenvalue.
    """
    m = np.asarray(m, dtype=float)
    w, v = np.linalg.eigh(symmetrize(m))
    if w.min() <= 0.0:
        raise ValueError(
            f"matrix is not symmetric positive definite: eigenvalue {w.min():.6e} <= 0"
        )
    return symmetrize((v / np.sqrt(w)) @ v.T)


def kalman_update(prior: GaussianBelief, m: LinearMeasurement) -> GaussianBelief:
    """Exact Kalman measurement update of a Gaussian belief.

    mean' = x + P H'(H P H' + R)^-1 (z - H x)
    cov'  = P - P H'(H P H' + R)^-1 H P   (re-symmetrized)
    """
    if m.n_x != prior.dim:
        raise ValueError(f"measurement expects {m.n_x} states, belief has {prior.dim}")
    P, H, R = prior.cov, m.H, m.R
    PHt = P @ H.T
    S = symmetrize(H @ PHt + R)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise ValueError("innovation covariance is numerically singular") from exc
    # K = PHt S^-1 via two triangular solves
    K = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T)).T
    mean = prior.mean + K @ (m.z - H @ prior.mean)
    cov = symmetrize(P - K @ PHt.T)
    return GaussianBelief(mean, cov)


def sample_ensemble(belief: GaussianBelief, n_p: int, seed: int) -> ParticleEnsemble:
    """Draw n_p samples from the belief via the Cholesky factor of its covariance."""
    if n_p < 1:
        raise ValueError("n_p must be >= 1")
    try:
        L = np.linalg.cholesky(belief.cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite (Cholesky failed)") from exc
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n_p, belief.dim))
    return ParticleEnsemble(belief.mean + noise @ L.T)


def ensemble_moments(e: ParticleEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased (1/(n_p - 1)) sample covariance, symmetrized."""
    if e.n_p < 2:
        raise ValueError("sample covariance needs at least two particles")
    mean = e.particles.mean(axis=0)
    centered = e.particles - mean
    cov = symmetrize(centered.T @ centered / (e.n_p - 1))
    return mean, cov


def ensemble_mean(e: ParticleEnsemble) -> np.ndarray:
    return e.particles.mean(axis=0)

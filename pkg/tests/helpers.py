"""Shared test utilities: instance generators and independent oracles."""

import numpy as np

from flowfilt import GaussianBelief, LinearMeasurement


def random_spd(rng, n, log_spread=2.0):
    """Random SPD matrix with eigenvalues log-uniform over +/- log_spread/2 decades."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigs = 10.0 ** rng.uniform(-log_spread / 2, log_spread / 2, n)
    m = q @ np.diag(eigs) @ q.T
    return 0.5 * (m + m.T)


def random_instance(rng, n_x=None, n_z=None, p_log_spread=2.0):
    """Random linear Gaussian update problem (belief, measurement)."""
    n_x = n_x or int(rng.integers(2, 7))
    n_z = n_z or int(rng.integers(1, min(n_x, 4) + 1))
    belief = GaussianBelief(rng.standard_normal(n_x), random_spd(rng, n_x, p_log_spread))
    meas = LinearMeasurement(
        rng.standard_normal((n_z, n_x)),
        random_spd(rng, n_z, 1.0),
        rng.standard_normal(n_z),
    )
    return belief, meas


def spread_controlled_instance(rng, n_x, n_z, lo_exp, hi_exp):
    """Instance whose whitened information matrix D has exact eigenvalue decades.

    With P = I, D = R^(-1/2) H H' R^(-1/2); choosing H = R^(1/2) V diag(sqrt(a)) U'
    with orthonormal V (n_z) and U columns (n_x, n_z) makes D = V diag(a) V'.
    The eigenvalues are log-uniform in [10^lo_exp, 10^hi_exp] with the largest
    pinned to 10^hi_exp (and, for n_z > 1, the smallest to 10^lo_exp).
    """
    alphas = 10.0 ** np.sort(rng.uniform(lo_exp, hi_exp, n_z))[::-1]
    alphas[0] = 10.0**hi_exp
    if n_z > 1:
        alphas[-1] = 10.0**lo_exp
    V, _ = np.linalg.qr(rng.standard_normal((n_z, n_z)))
    U, _ = np.linalg.qr(rng.standard_normal((n_x, n_z)))
    R = random_spd(rng, n_z, 1.0)
    w, q = np.linalg.eigh(R)
    r_sqrt = q @ np.diag(np.sqrt(w)) @ q.T
    H = r_sqrt @ V @ np.diag(np.sqrt(alphas)) @ U.T
    belief = GaussianBelief(rng.standard_normal(n_x), np.eye(n_x))
    meas = LinearMeasurement(H, R, rng.standard_normal(n_z))
    return belief, meas


def joseph_update(belief, meas):
    """Kalman measurement update in Joseph-stabilized form (independent oracle)."""
    P, H, R = belief.cov, meas.H, meas.R
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    mean = belief.mean + K @ (meas.z - H @ belief.mean)
    ImKH = np.eye(belief.dim) - K @ H
    cov = ImKH @ P @ ImKH.T + K @ R @ K.T
    return mean, 0.5 * (cov + cov.T)

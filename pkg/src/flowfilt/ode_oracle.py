"""High-accuracy numerical evaluation of the raw EDH flow ODE.

Everything here deliberately works from the unfactored flow field

    A(lambda) = -1/2 P H' (lambda H P H' + R)^-1 H
    b(lambda) = (I + 2 lambda A) [ (I + lambda A) P H' R^-1 z + A x_bar ]

and generic numerics (embedded Runge-Kutta, Gauss-Kronrod quadrature), so
it shares no code path with the eigenspace closed forms it is used to
verify. It also serves the adaptive-Euler baseline, which needs raw
(A, b) evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussian import GaussianBelief, LinearMeasurement

__all__ = [
    "FlowField",
    "IntegrationError",
    "QuadratureError",
    "eval_field",
    "integrate_flow",
    "quadrature_ci",
]


class IntegrationError(RuntimeError):
    """Adaptive integration could not reach lambda = 1."""

    def __init__(self, message: str, lambda_reached: float):
        super().__init__(f"{message} (reached lambda = {lambda_reached:.6g})")
        self.lambda_reached = lambda_reached


class QuadratureError(RuntimeError):
    """Adaptive quadrature could not meet the requested tolerance."""

    def __init__(self, message: str, error_estimate: float):
        super().__init__(f"{message} (error estimate {error_estimate:.3e})")
        self.error_estimate = error_estimate


@dataclass(frozen=True)
class FlowField:
    """The raw affine flow field of one linear Gaussian update problem.

    Input validation matches the Gaussian value types: P SPD, R SPD,
    H full row rank. Constant matrix products are cached; each eval still
    performs the literal formula's (lambda H P H' + R) Cholesky solve.
    """

    P: np.ndarray
    H: np.ndarray
    R: np.ndarray
    z: np.ndarray
    x_bar: np.ndarray
    _PHt: np.ndarray = field(init=False, repr=False)
    _HPHt: np.ndarray = field(init=False, repr=False)
    _u0: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        belief = GaussianBelief(self.x_bar, self.P)
        meas = LinearMeasurement(self.H, self.R, self.z)
        object.__setattr__(self, "P", belief.cov)
        object.__setattr__(self, "x_bar", belief.mean)
        object.__setattr__(self, "H", meas.H)
        object.__setattr__(self, "R", meas.R)
        object.__setattr__(self, "z", meas.z)
        PHt = self.P @ self.H.T
        object.__setattr__(self, "_PHt", PHt)
        object.__setattr__(self, "_HPHt", self.H @ PHt)
        # u0 = P H' R^-1 z
        object.__setattr__(self, "_u0", PHt @ np.linalg.solve(self.R, self.z))

    @property
    def n_x(self) -> int:
        return self.x_bar.shape[0]

    def __call__(self, lam: float) -> tuple[np.ndarray, np.ndarray]:
        return eval_field(self, lam)


def eval_field(f: FlowField, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate (A(lambda), b(lambda)) by the literal formulas."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    S = lam * f._HPHt + f.R
    L = np.linalg.cholesky(S)
    # A = -1/2 PHt S^-1 H
    A = -0.5 * f._PHt @ np.linalg.solve(L.T, np.linalg.solve(L, f.H))
    inner = f._u0 + lam * (A @ f._u0) + A @ f.x_bar
    b = inner + 2.0 * lam * (A @ inner)
    return A, b


# Dormand-Prince 5(4) tableau; the 5th-order solution propagates, the
# embedded 4th-order difference gives the local error estimate (FSAL).
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)


def integrate_flow(
    f: FlowField,
    x0: np.ndarray,
    tol: float,
    max_steps: int = 200_000,
    lam_a: float = 0.0,
    lam_b: float = 1.0,
) -> np.ndarray:
    """Integrate dx/dlambda = A x + b from lam_a to lam_b (default the full flow).

    Embedded Dormand-Prince 4/5 pair with a PI step-size controller; the
    per-step error is held below tol in a mixed absolute/relative sense.
    x0 may be a single state (n_x,) or a batch (n_p, n_x) sharing one error
    control. Raises IntegrationError (carrying the lambda reached) on step
    underflow or step-budget exhaustion.
    """
    if not 1e-13 <= tol <= 1e-3:
        raise ValueError(f"tol must lie in [1e-13, 1e-3], got {tol}")
    if not 0.0 <= lam_a < lam_b <= 1.0:
        raise ValueError(f"need 0 <= lam_a < lam_b <= 1, got [{lam_a}, {lam_b}]")
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    y = np.atleast_2d(x0).copy()
    if y.shape[1] != f.n_x:
        raise ValueError(f"state dimension {y.shape[1]} does not match field {f.n_x}")

    def deriv(lam, Y):
        A, b = eval_field(f, lam)
        return Y @ A.T + b

    lam = lam_a
    k = [np.empty_like(y) for _ in range(7)]
    k[0] = deriv(lam_a, y)
    # first-step heuristic: fraction of the solution's own timescale |y|/|f|
    d0 = np.sqrt(np.mean((y / (1.0 + np.abs(y))) ** 2))
    d1 = np.sqrt(np.mean((k[0] / (1.0 + np.abs(y))) ** 2))
    h = min(0.1 * (lam_b - lam_a), 0.01 * max(d0, 1e-4) / max(d1, 1e-8))
    err_prev = 1.0
    min_step = 1e-13 * (lam_b - lam_a)

    for _ in range(max_steps):
        if lam >= lam_b:
            break
        h = min(h, lam_b - lam)
        if h < min_step:
            raise IntegrationError("step size underflow", lam)
        for i in range(1, 7):
            yi = y + h * sum(a * k[j] for j, a in enumerate(_DP_A[i]))
            k[i] = deriv(min(lam + _DP_C[i] * h, lam_b), yi)
        y_new = y + h * sum(a * k[j] for j, a in enumerate(_DP_A[6]))
        err_vec = h * sum(e * k[j] for j, e in enumerate(_DP_E))
        scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        if err <= 1.0:
            lam += h
            y = y_new
            k[0] = k[6]  # FSAL
            err_prev = max(err, 1e-10)
        factor = 0.9 * max(err, 1e-10) ** -0.14 * err_prev**0.08
        h *= min(5.0, max(0.2, factor))
    else:
        raise IntegrationError("step budget exhausted", lam)

    return y[0] if single else y


# Gauss-Kronrod G7/K15 nodes and weights on [-1, 1] (positive half; symmetric).
_XGK = np.array([
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898, 0.0,
])
_WGK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
])
_WG = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469,
])


def _gauss_kronrod(fn, a: float, b: float) -> tuple[float, float]:
    """One G7/K15 panel: returns (K15 value, |K15 - G7| error estimate)."""
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    nodes = np.concatenate((mid - half * _XGK[:-1], [mid], mid + half * _XGK[-2::-1]))
    vals = fn(nodes)
    w15 = np.concatenate((_WGK[:-1], [_WGK[-1]], _WGK[-2::-1]))
    k15 = half * float(w15 @ vals)
    # Gauss nodes are the odd-indexed Kronrod nodes
    gvals = vals[1:-1:2]
    w7 = np.concatenate((_WG[:-1], [_WG[-1]], _WG[-2::-1]))
    g7 = half * float(w7 @ gvals)
    return k15, abs(k15 - g7)


def quadrature_ci(
    alpha: float,
    z_t: float,
    x_t: float,
    lambda_a: float,
    lambda_b: float,
    tol: float,
    max_panels: int = 4000,
) -> float:
    """Forcing increment for one eigendimension by adaptive quadrature.

    Integrates Psi(lambda_b, mu) beta(mu) over [lambda_a, lambda_b] with

        Psi = sqrt((1 + mu alpha)/(1 + lambda_b alpha))
        beta = (z (1 + mu alpha / 2) - x / 2) / (1 + mu alpha)^2

    by globally adaptive G7/K15 bisection. Serves as the independent check
    of the closed-form forcing_step. Raises QuadratureError if the error
    estimate cannot be brought below tol.
    """
    if not 0.0 <= lambda_a < lambda_b <= 1.0:
        raise ValueError(
            f"need 0 <= lambda_a < lambda_b <= 1, got [{lambda_a}, {lambda_b}]"
        )
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")

    s_end = np.sqrt(1.0 + lambda_b * alpha)

    def integrand(mu):
        g = 1.0 + mu * alpha
        return (np.sqrt(g) / s_end) * (z_t * (1.0 + 0.5 * mu * alpha) - 0.5 * x_t) / g**2

    val, err = _gauss_kronrod(integrand, lambda_a, lambda_b)
    panels = [(err, lambda_a, lambda_b, val)]
    while True:
        total = sum(p[3] for p in panels)
        total_err = sum(p[0] for p in panels)
        if total_err <= tol * max(1.0, abs(total)):
            return total
        if len(panels) >= max_panels:
            raise QuadratureError("tolerance not reached", total_err)
        worst = max(range(len(panels)), key=lambda i: panels[i][0])
        _, a, b, _ = panels.pop(worst)
        mid = 0.5 * (a + b)
        for lo, hi in ((a, mid), (mid, b)):
            v, e = _gauss_kronrod(integrand, lo, hi)
            panels.append((e, lo, hi, v))

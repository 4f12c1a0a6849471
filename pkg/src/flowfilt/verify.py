"""One-shot verification suite: equivalence, oracle, and schedule checks.

Each check draws its own seeded random instances, measures the worst
deviation of an identity the closed-form flow must satisfy, and compares
it against a fixed bound. The CLI `verify` subcommand prints one line per
check and exits nonzero if any fails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import (
    apply_substep,
    build_flow_basis,
    ccr_schedule,
    closed_form_update,
    make_substep_operator,
)
from .gaussian import (
    GaussianBelief,
    LinearMeasurement,
    ParticleEnsemble,
    kalman_update,
)
from .ode_oracle import FlowField, eval_field, integrate_flow, quadrature_ci

__all__ = ["CheckResult", "run_verification"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    max_deviation: float
    bound: float


def random_instance(rng, n_x=None, n_z=None, spread=1e3):
    """Random linear Gaussian update problem with controlled P eigenvalue spread."""
    n_x = n_x or int(rng.integers(2, 7))
    n_z = n_z or int(rng.integers(1, min(n_x, 4) + 1))
    q, _ = np.linalg.qr(rng.standard_normal((n_x, n_x)))
    eigs = np.exp(rng.uniform(-np.log(spread) / 2, np.log(spread) / 2, n_x))
    P = q @ np.diag(eigs) @ q.T
    H = rng.standard_normal((n_z, n_x))
    qr, _ = np.linalg.qr(rng.standard_normal((n_z, n_z)))
    R = qr @ np.diag(np.exp(rng.uniform(-1.0, 1.0, n_z))) @ qr.T
    z = rng.standard_normal(n_z)
    x_bar = rng.standard_normal(n_x)
    belief = GaussianBelief(x_bar, 0.5 * (P + P.T))
    meas = LinearMeasurement(H, 0.5 * (R + R.T), z)
    return belief, meas


def _materialize_phi(basis, omega):
    return np.eye(basis.n_x) + basis.E @ np.diag(omega) @ basis.F.T


def check_theorem1_mean(seed=0, n_instances=200, bound=1e-9, fault=None) -> CheckResult:
    """x_bar + E(Omega x_tilde + c) must equal the Kalman posterior mean."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        belief, meas = random_instance(rng)
        basis = build_flow_basis(belief, meas)
        op = make_substep_operator(basis, 0.0, 1.0)
        omega = -op.omega if fault == "omega-sign-flip" else op.omega
        mean = belief.mean + basis.E @ (omega * basis.x_tilde + op.c)
        ref = kalman_update(belief, meas).mean
        dev = np.linalg.norm(mean - ref) / max(np.linalg.norm(ref), 1e-300)
        worst = max(worst, dev)
    return CheckResult("theorem1-mean", worst <= bound, worst, bound)


def check_theorem1_covariance(seed=1, n_instances=200, bound=1e-9, fault=None) -> CheckResult:
    """Phi P Phi' must equal the Kalman posterior covariance."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        belief, meas = random_instance(rng)
        basis = build_flow_basis(belief, meas)
        op = make_substep_operator(basis, 0.0, 1.0)
        omega = -op.omega if fault == "omega-sign-flip" else op.omega
        phi = _materialize_phi(basis, omega)
        cov = phi @ belief.cov @ phi.T
        ref = kalman_update(belief, meas).cov
        dev = np.max(np.abs(cov - ref)) / max(np.max(np.abs(ref)), 1e-300)
        worst = max(worst, dev)
    return CheckResult("theorem1-covariance", worst <= bound, worst, bound)


def check_ode_oracle(seed=2, n_instances=40, bound=1e-7) -> CheckResult:
    """Closed-form particle update vs adaptive RK integration of the raw ODE."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        belief, meas = random_instance(rng, spread=100.0)
        basis = build_flow_basis(belief, meas)
        if basis.alpha_max > 1e4:
            continue
        x0 = rng.standard_normal((3, belief.dim))
        closed = closed_form_update(belief, meas, ParticleEnsemble(x0))
        field = FlowField(belief.cov, meas.H, meas.R, meas.z, belief.mean)
        integrated = integrate_flow(field, x0, tol=1e-10)
        dev = np.max(np.abs(closed.particles - integrated))
        worst = max(worst, dev)
    return CheckResult("ode-oracle", worst <= bound, worst, bound)


def check_quadrature(seed=3, n_instances=200, bound=1e-9) -> CheckResult:
    """Closed-form forcing term vs adaptive Gauss-Kronrod quadrature."""
    from .flow import forcing_step

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        alpha = 10.0 ** rng.uniform(-8, 6)
        z_t, x_t = rng.standard_normal(2)
        lam_a = rng.uniform(0.0, 0.9)
        lam_b = rng.uniform(lam_a + 0.05, 1.0)
        closed = forcing_step(alpha, z_t, x_t, lam_a, lam_b)
        quad = quadrature_ci(alpha, z_t, x_t, lam_a, lam_b, tol=1e-12)
        worst = max(worst, abs(closed - quad))
    return CheckResult("quadrature", worst <= bound, worst, bound)


def check_a_factorization(seed=4, n_instances=50, bound=1e-11) -> CheckResult:
    """eval_field's A(lambda) vs -1/2 E diag(1/(1+lambda alpha)) F' from the basis."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        belief, meas = random_instance(rng, spread=100.0)
        basis = build_flow_basis(belief, meas)
        field = FlowField(belief.cov, meas.H, meas.R, meas.z, belief.mean)
        for lam in (0.0, 0.3, 1.0):
            A, _ = eval_field(field, lam)
            rebuilt = -0.5 * basis.E @ np.diag(1.0 / (1.0 + lam * basis.alphas)) @ basis.F.T
            dev = np.max(np.abs(A - rebuilt)) / max(np.max(np.abs(A)), 1e-300)
            worst = max(worst, dev)
    return CheckResult("a-factorization", worst <= bound, worst, bound)


def check_commutativity(seed=5, n_instances=50, bound=1e-10) -> CheckResult:
    """A(lambda1) A(lambda2) = A(lambda2) A(lambda1) for the flow family."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        belief, meas = random_instance(rng, spread=100.0)
        field = FlowField(belief.cov, meas.H, meas.R, meas.z, belief.mean)
        lam1, lam2 = sorted(rng.uniform(0.0, 1.0, 2))
        A1, _ = eval_field(field, lam1)
        A2, _ = eval_field(field, lam2)
        lhs, rhs = A1 @ A2, A2 @ A1
        dev = np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(lhs)), 1e-300)
        worst = max(worst, dev)
    return CheckResult("commutativity", worst <= bound, worst, bound)


def check_ccr_contraction(bound=1e-12) -> CheckResult:
    """Per-substep contraction along alpha_max must be constant over the grid."""
    worst = 0.0
    for alpha_max in (1e-6, 1.0, 1e3, 1e8):
        for n in (2, 10, 50):
            sched = ccr_schedule(alpha_max, n)
            s = np.sqrt(1.0 + sched.lambdas * alpha_max)
            ratios = s[:-1] / s[1:]
            worst = max(worst, float(ratios.max() - ratios.min()))
            if sched.lambdas[0] != 0.0 or sched.lambdas[-1] != 1.0:
                worst = max(worst, 1.0)
            if np.any(np.diff(sched.lambdas) <= 0):
                worst = max(worst, 1.0)
    return CheckResult("ccr-contraction", worst <= bound, worst, bound)


def check_composition(seed=6, n_instances=50, bound=1e-10) -> CheckResult:
    """Substeps over [0, t] then [t, 1] must equal the single-shot update."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        belief, meas = random_instance(rng)
        basis = build_flow_basis(belief, meas)
        e = ParticleEnsemble(rng.standard_normal((4, belief.dim)))
        t = rng.uniform(0.1, 0.9)
        two = apply_substep(
            make_substep_operator(basis, t, 1.0), basis,
            apply_substep(make_substep_operator(basis, 0.0, t), basis, e),
        )
        one = apply_substep(make_substep_operator(basis, 0.0, 1.0), basis, e)
        scale = max(np.max(np.abs(one.particles)), 1.0)
        worst = max(worst, np.max(np.abs(two.particles - one.particles)) / scale)
    return CheckResult("composition", worst <= bound, worst, bound)


def run_verification(seed: int = 0, fault: str | None = None) -> list[CheckResult]:
    """Run every check; fault (test hook) perturbs the Theorem-1 checks."""
    return [
        check_theorem1_mean(seed=seed, fault=fault),
        check_theorem1_covariance(seed=seed + 1, fault=fault),
        check_ode_oracle(seed=seed + 2),
        check_quadrature(seed=seed + 3),
        check_a_factorization(seed=seed + 4),
        check_commutativity(seed=seed + 5),
        check_ccr_contraction(),
        check_composition(seed=seed + 6),
    ]

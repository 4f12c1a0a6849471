"""Acceptance gate: one test per release criterion, each printing a verdict.

Run with `pytest tests/test_acceptance.py -s` to see one PASS/FAIL line per
criterion with its measured deviation.
"""

import csv
import time

import numpy as np
import pytest

from flowfilt import (
    FilterState,
    GaussianBelief,
    LinearMeasurement,
    MeasurementModel,
    ParticleEnsemble,
    build_flow_basis,
    ccr_schedule,
    closed_form_update,
    forcing_step,
    kalman_update,
    make_substep_operator,
    naedh_update,
    quadrature_ci,
    sample_ensemble,
)
from flowfilt.baselines import AdaptiveEulerConfig, edh_adaptive_update
from flowfilt.benchmark import FilterSpec, ScenarioConfig, convergence_trace, run_monte_carlo
from flowfilt.cli import main
from flowfilt.ode_oracle import FlowField, integrate_flow

from helpers import random_instance, spread_controlled_instance


def report(criterion: str, passed: bool, detail: str) -> None:
    print(f"[acceptance] {'PASS' if passed else 'FAIL'}  {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


def theorem1_instances(seed, count=200):
    """Instances with D eigenvalue spread up to 1e6, plus generic ones."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n_x = int(rng.integers(2, 7))
        n_z = int(rng.integers(1, min(n_x, 4) + 1))
        if i % 2 == 0:
            spread = rng.uniform(0.0, 6.0)
            out.append(spread_controlled_instance(rng, n_x, n_z, -spread / 2,
                                                  spread / 2))
        else:
            out.append(random_instance(rng, n_x, n_z))
    return out


def test_criterion_1_theorem1_mean_equivalence():
    tic = time.perf_counter()
    worst = 0.0
    for belief, meas in theorem1_instances(seed=101):
        basis = build_flow_basis(belief, meas)
        op = make_substep_operator(basis, 0.0, 1.0)
        mean = belief.mean + basis.E @ (op.omega * basis.x_tilde + op.c)
        ref = kalman_update(belief, meas).mean
        worst = max(worst, np.linalg.norm(mean - ref) / np.linalg.norm(ref))
    elapsed = time.perf_counter() - tic
    report(
        "1 Theorem-1 mean equivalence",
        worst <= 1e-9 and elapsed < 5.0,
        f"max rel dev {worst:.3e} (bound 1e-9), {elapsed:.2f}s (< 5s)",
    )


def test_criterion_2_theorem1_covariance_equivalence():
    worst = 0.0
    for belief, meas in theorem1_instances(seed=101):
        basis = build_flow_basis(belief, meas)
        op = make_substep_operator(basis, 0.0, 1.0)
        phi = np.eye(belief.dim) + basis.E @ np.diag(op.omega) @ basis.F.T
        cov = phi @ belief.cov @ phi.T
        P, H, R = belief.cov, meas.H, meas.R
        ref = P - P @ H.T @ np.linalg.solve(H @ P @ H.T + R, H @ P)
        worst = max(worst, np.max(np.abs(cov - ref)) / np.max(np.abs(ref)))
    report(
        "2 Theorem-1 covariance equivalence",
        worst <= 1e-9,
        f"max rel dev {worst:.3e} (bound 1e-9)",
    )


def test_criterion_3_ode_oracle_agreement():
    tic = time.perf_counter()
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(100):
        n_x = int(rng.integers(2, 7))
        n_z = int(rng.integers(1, min(n_x, 4) + 1))
        lo = rng.uniform(-2.0, 0.0)
        hi = rng.uniform(0.5, 4.0)  # alpha_max up to 1e4
        belief, meas = spread_controlled_instance(rng, n_x, n_z, lo, hi)
        x0 = rng.standard_normal((3, n_x))
        closed = closed_form_update(belief, meas, ParticleEnsemble(x0))
        field = FlowField(belief.cov, meas.H, meas.R, meas.z, belief.mean)
        integrated = integrate_flow(field, x0, tol=1e-10)
        worst = max(worst, float(np.max(np.abs(closed.particles - integrated))))
    elapsed = time.perf_counter() - tic
    report(
        "3 ODE oracle agreement",
        worst <= 1e-7 and elapsed < 30.0,
        f"max per-particle dev {worst:.3e} (bound 1e-7), {elapsed:.1f}s (< 30s)",
    )


def test_criterion_4_forcing_quadrature_agreement():
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(500):
        alpha = 10.0 ** rng.uniform(-8.0, 6.0)
        z_t, x_t = rng.standard_normal(2)
        lam_a = rng.uniform(0.0, 0.95)
        lam_b = rng.uniform(lam_a + 0.01, 1.0)
        closed = forcing_step(alpha, z_t, x_t, lam_a, lam_b)
        quad = quadrature_ci(alpha, z_t, x_t, lam_a, lam_b, tol=1e-12)
        worst = max(worst, abs(closed - quad))
    report(
        "4 forcing quadrature agreement",
        worst <= 1e-9,
        f"max abs dev {worst:.3e} (bound 1e-9) over 500 tuples, alpha in [1e-8, 1e6]",
    )


def test_criterion_5_n_step_collapse_for_affine_models():
    rng = np.random.default_rng(105)
    worst = 0.0
    for _ in range(20):
        belief, meas = random_instance(rng, 4, 2)
        H = meas.H
        model = MeasurementModel(h=lambda x, H=H: np.asarray(x) @ H.T,
                                 jacobian=lambda x, H=H: H, R=meas.R)
        e = sample_ensemble(belief, 50, seed=11)
        ref = closed_form_update(belief, meas, e)
        scale = 1.0 + np.max(np.abs(ref.particles))
        for n in (2, 10):
            for kind in ("ccr", "linear"):
                out = naedh_update(FilterState(e, belief), model, meas.z, n, kind)
                dev = np.max(np.abs(out.ensemble.particles - ref.particles)) / scale
                worst = max(worst, dev)
    report(
        "5 N-step collapse (affine h)",
        worst <= 1e-9,
        f"max per-particle rel dev {worst:.3e} (bound 1e-9) for N in {{2, 10}}",
    )


def test_criterion_6_ccr_schedule_properties():
    worst_ratio_dev = 0.0
    exact_endpoints = True
    monotone = True
    for alpha_max in (1e-6, 1.0, 1e3, 1e8):
        for n in (2, 10, 50):
            lam = ccr_schedule(alpha_max, n).lambdas
            exact_endpoints &= lam[0] == 0.0 and lam[-1] == 1.0
            monotone &= bool(np.all(np.diff(lam) > 0))
            s = np.sqrt(1.0 + lam * alpha_max)
            ratios = s[:-1] / s[1:]
            worst_ratio_dev = max(worst_ratio_dev, float(ratios.max() - ratios.min()))
    report(
        "6 ccr schedule properties",
        exact_endpoints and monotone and worst_ratio_dev <= 1e-12,
        f"endpoints exact: {exact_endpoints}, strictly monotone: {monotone}, "
        f"contraction ratio spread {worst_ratio_dev:.3e} (bound 1e-12)",
    )


def test_criterion_7_adaptive_euler_first_order_convergence():
    belief = GaussianBelief([0.0], [[1.0]])
    meas = LinearMeasurement([[1.0]], [[1.0]], [2.0])
    model = MeasurementModel(h=lambda x: np.asarray(x) @ meas.H.T,
                             jacobian=lambda x: meas.H, R=meas.R)
    e = ParticleEnsemble([[0.0], [0.8], [-0.5]])
    ref = closed_form_update(belief, meas, e)
    errors = []
    delta_l = 0.1
    for _ in range(5):
        out, _ = edh_adaptive_update(
            FilterState(e, belief), model, meas.z,
            AdaptiveEulerConfig(delta_l, max_substeps=1_000_000, min_step=1e-12),
        )
        errors.append(np.max(np.abs(out.ensemble.particles - ref.particles)))
        delta_l /= 2.0
    ratios = [b / a for a, b in zip(errors, errors[1:])]
    ok = all(0.3 <= r <= 0.7 for r in ratios)
    report(
        "7 adaptive-Euler first-order convergence",
        ok,
        f"halving ratios {[f'{r:.3f}' for r in ratios]} (each in [0.3, 0.7])",
    )


@pytest.fixture(scope="module")
def benchmark_batch():
    cfg = ScenarioConfig(sigma_theta_deg=0.05)
    specs = {
        "naedh-ccr": FilterSpec("naedh-ccr", n_substeps=10, n_particles=500),
        "naedh-lin": FilterSpec("naedh-lin", n_substeps=10, n_particles=500),
        "ekf": FilterSpec("ekf"),
        "bootstrap-pf": FilterSpec("bootstrap-pf", n_particles=10_000),
    }
    tic = time.perf_counter()
    aggs = {name: run_monte_carlo(cfg, spec, n_trials=20, base_seed=42)
            for name, spec in specs.items()}
    return aggs, time.perf_counter() - tic


def test_criterion_8_benchmark_ordering(benchmark_batch):
    aggs, elapsed = benchmark_batch
    ccr = aggs["naedh-ccr"].rmse_mean
    lin = aggs["naedh-lin"].rmse_mean
    ekf = aggs["ekf"].rmse_mean
    pf = aggs["bootstrap-pf"].rmse_mean
    hashes = {a.measurement_hash for a in aggs.values()}
    ok = (ccr < lin and ccr < ekf and pf > ccr and len(hashes) == 1
          and elapsed < 300.0)
    report(
        "8 benchmark ordering at desk scale",
        ok,
        f"RMSE ccr {ccr:.3f} < lin {lin:.3f}, ccr < ekf {ekf:.3f}, "
        f"pf {pf:.3f} > ccr, common streams: {len(hashes) == 1}, "
        f"{elapsed:.0f}s (< 300s)",
    )


def test_criterion_9_first_update_convergence_trace():
    cfg = ScenarioConfig(sigma_theta_deg=0.001)
    _, err_ccr = convergence_trace(
        cfg, FilterSpec("naedh-ccr", n_substeps=10, n_particles=500), seed=42
    )
    _, err_lin = convergence_trace(
        cfg, FilterSpec("naedh-lin", n_substeps=10, n_particles=500), seed=42
    )
    ratio = err_lin[-1] / err_ccr[-1]
    report(
        "9 first-update convergence trace",
        err_ccr[-1] < err_lin[-1] and ratio >= 5.0,
        f"final residual ccr {err_ccr[-1]:.3e} m vs lin {err_lin[-1]:.3e} m "
        f"({ratio:.0f}x, need >= 5x)",
    )


def test_criterion_10_cost_parity(benchmark_batch):
    aggs, _ = benchmark_batch
    ccr = aggs["naedh-ccr"].ms_per_update
    lin = aggs["naedh-lin"].ms_per_update
    ratio = max(ccr / lin, lin / ccr)
    report(
        "10 ccr/linear cost parity",
        ratio <= 1.25,
        f"{ccr:.3f} vs {lin:.3f} ms/update (ratio {ratio:.3f}, bound 1.25)",
    )


def test_criterion_11_determinism_of_table_runs(tmp_path):
    config = (
        "scenario.n_steps = 15\n"
        "run.trials = 3\n"
        "run.seed = 7\n"
        "run.sigma_theta_deg = 0.001, 0.05, 1.0\n"
        "filter.1.name = naedh-ccr\n"
        "filter.1.n_substeps = 5\n"
        "filter.1.n_particles = 60\n"
        "filter.2.name = naedh-lin\n"
        "filter.2.n_substeps = 5\n"
        "filter.2.n_particles = 60\n"
        "filter.3.name = ekf\n"
    )
    outputs = []
    for label in ("a", "b"):
        cfg_path = tmp_path / f"{label}.cfg"
        cfg_path.write_text(config + f"run.out = {tmp_path / label}\n")
        assert main(["--config", str(cfg_path), "table"]) == 0
        rows = list(csv.DictReader(open(tmp_path / label / "table.csv")))
        outputs.append([
            {k: v for k, v in row.items() if k != "ms_per_update"}
            for row in rows
        ])
    report(
        "11 determinism of table runs",
        outputs[0] == outputs[1] and len(outputs[0]) == 9,
        f"non-timing columns identical over {len(outputs[0])} rows x 2 runs",
    )

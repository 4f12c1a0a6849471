"""Closed-form flow: scalar steps, basis construction, schedules, transport."""

from dataclasses import replace

import numpy as np
import pytest

from flowfilt import (
    FlowBasis,
    GaussianBelief,
    LinearMeasurement,
    ParticleEnsemble,
    SubstepOperator,
    apply_substep,
    build_flow_basis,
    ccr_schedule,
    closed_form_update,
    ensemble_moments,
    forcing_step,
    kalman_update,
    linear_schedule,
    make_substep_operator,
    omega_step,
    sample_ensemble,
)
from flowfilt.flow import Schedule

from helpers import random_instance


class TestOmegaStep:
    def test_full_interval_unit_alpha(self):
        np.testing.assert_allclose(omega_step(1.0, 0.0, 1.0), 1.0 / np.sqrt(2.0) - 1.0,
                                   rtol=1e-14)

    def test_small_alpha_limit(self):
        assert abs(omega_step(1e-9, 0.0, 1.0) - (-0.5)) < 1e-6

    def test_interior_interval(self):
        # s_a = sqrt(2), s_b = 2 at alpha = 3
        expected = (np.sqrt(2.0) / 2.0 - 1.0) / 3.0
        np.testing.assert_allclose(omega_step(3.0, 1.0 / 3.0, 1.0), expected, rtol=1e-14)

    def test_rejects_bad_interval(self):
        with pytest.raises(ValueError):
            omega_step(1.0, 0.7, 0.7)
        with pytest.raises(ValueError):
            omega_step(1.0, 0.8, 0.2)

    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(ValueError):
            omega_step(0.0, 0.0, 1.0)

    def test_contraction_range(self):
        # omega must lie in (-1/alpha, 0] for every valid interval
        rng = np.random.default_rng(0)
        for _ in range(300):
            alpha = 10.0 ** rng.uniform(-8, 8)
            a = rng.uniform(0.0, 0.99)
            b = rng.uniform(a + 1e-3, 1.0)
            w = omega_step(alpha, a, b)
            assert -1.0 / alpha < w <= 0.0


class TestForcingStep:
    def test_hand_value_measurement_only(self):
        np.testing.assert_allclose(forcing_step(1.0, 2.0, 0.0, 0.0, 1.0), 1.0, rtol=1e-14)

    def test_hand_value_prior_only(self):
        expected = (1.0 - np.sqrt(2.0)) / 2.0
        np.testing.assert_allclose(forcing_step(1.0, 0.0, 1.0, 0.0, 1.0), expected,
                                   rtol=1e-14)

    def test_reduces_to_single_interval_form(self):
        # over [0, 1] the step equals (a z + x (1 - sqrt(1+a))) / (a (1+a))
        rng = np.random.default_rng(1)
        for _ in range(200):
            a = 10.0 ** rng.uniform(-3, 3)
            z, x = rng.standard_normal(2)
            direct = (a * z + x * (1.0 - np.sqrt(1.0 + a))) / (a * (1.0 + a))
            np.testing.assert_allclose(forcing_step(a, z, x, 0.0, 1.0), direct,
                                       rtol=1e-10, atol=1e-14)

    def test_rejects_bad_interval(self):
        with pytest.raises(ValueError):
            forcing_step(1.0, 0.0, 0.0, 0.5, 0.5)


class TestBuildFlowBasis:
    def test_scalar_whitened_case(self):
        basis = build_flow_basis(
            GaussianBelief([0.0], [[1.0]]), LinearMeasurement([[1.0]], [[1.0]], [2.0])
        )
        np.testing.assert_allclose(basis.alphas, [1.0])
        np.testing.assert_allclose(basis.V, [[1.0]])
        np.testing.assert_allclose(basis.E, [[1.0]])
        np.testing.assert_allclose(basis.F, [[1.0]])
        np.testing.assert_allclose(basis.z_tilde, [2.0])
        np.testing.assert_allclose(basis.x_tilde, [0.0])

    def test_scale_cancellation(self):
        belief = GaussianBelief([0.3], [[1.7]])
        b1 = build_flow_basis(belief, LinearMeasurement([[1.0]], [[1.0]], [2.0]))
        b2 = build_flow_basis(belief, LinearMeasurement([[2.0]], [[4.0]], [2.0]))
        np.testing.assert_allclose(b2.alphas, b1.alphas, rtol=1e-14)

    def test_descending_eigenvalues_and_projections(self):
        belief = GaussianBelief([0.0, 0.0], np.diag([2.0, 3.0]))
        basis = build_flow_basis(belief, LinearMeasurement(np.eye(2), np.eye(2),
                                                           [1.0, 1.0]))
        np.testing.assert_allclose(basis.alphas, [3.0, 2.0])
        np.testing.assert_allclose(np.abs(basis.V), [[0.0, 1.0], [1.0, 0.0]], atol=1e-14)
        np.testing.assert_allclose(basis.E, [[0.0, 2.0], [3.0, 0.0]], atol=1e-14)

    def test_f_transpose_e_reconstructs_eigenvalues(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            belief, meas = random_instance(rng)
            basis = build_flow_basis(belief, meas)
            np.testing.assert_allclose(
                basis.F.T @ basis.E, np.diag(basis.alphas),
                atol=1e-10 * basis.alpha_max,
            )
            np.testing.assert_allclose(basis.V.T @ basis.V, np.eye(basis.n_z),
                                       atol=1e-10)
            assert np.all(basis.alphas > 0)
            assert np.all(np.diff(basis.alphas) <= 0)

    def test_rejects_rank_deficient_d(self):
        # H passes its own rank check but P collapses D along one direction
        eps = 1e-8
        belief = GaussianBelief([0.0, 0.0], np.eye(2))
        meas = LinearMeasurement([[1.0, 0.0], [1.0, eps]], np.eye(2), [0.0, 0.0])
        with pytest.raises(ValueError, match="rank deficient"):
            build_flow_basis(belief, meas)


class TestSchedules:
    def test_ccr_hand_value(self):
        sched = ccr_schedule(3.0, 2)
        np.testing.assert_allclose(sched.lambdas, [0.0, 1.0 / 3.0, 1.0], rtol=1e-14)

    def test_ccr_small_alpha_is_uniform(self):
        sched = ccr_schedule(1e-12, 4)
        np.testing.assert_allclose(sched.lambdas, [0.0, 0.25, 0.5, 0.75, 1.0],
                                   atol=1e-9)

    def test_single_step_is_full_interval(self):
        for alpha in (1e-6, 1.0, 1e8):
            np.testing.assert_array_equal(ccr_schedule(alpha, 1).lambdas, [0.0, 1.0])

    def test_linear_grid(self):
        np.testing.assert_allclose(linear_schedule(2).lambdas, [0.0, 0.5, 1.0])
        assert linear_schedule(10).lambdas.shape == (11,)
        np.testing.assert_array_equal(linear_schedule(1).lambdas, [0.0, 1.0])

    def test_zero_substeps_rejected(self):
        with pytest.raises(ValueError):
            linear_schedule(0)
        with pytest.raises(ValueError):
            ccr_schedule(1.0, 0)

    def test_schedule_validation(self):
        with pytest.raises(ValueError, match="start at 0"):
            Schedule(lambdas=[0.1, 1.0], kind="linear")
        with pytest.raises(ValueError, match="end at 1"):
            Schedule(lambdas=[0.0, 0.9], kind="linear")
        with pytest.raises(ValueError, match="increasing"):
            Schedule(lambdas=[0.0, 0.6, 0.5, 1.0], kind="linear")

    def test_ccr_constant_contraction(self):
        for alpha in (1e-6, 1.0, 1e3, 1e8):
            for n in (2, 10, 50):
                lam = ccr_schedule(alpha, n).lambdas
                s = np.sqrt(1.0 + lam * alpha)
                ratios = s[:-1] / s[1:]
                assert ratios.max() - ratios.min() <= 1e-12


class TestSubstepTransport:
    def scalar_basis(self):
        return build_flow_basis(
            GaussianBelief([0.0], [[1.0]]), LinearMeasurement([[1.0]], [[1.0]], [2.0])
        )

    def test_full_interval_operator(self):
        op = make_substep_operator(self.scalar_basis(), 0.0, 1.0)
        np.testing.assert_allclose(op.omega, [1.0 / np.sqrt(2.0) - 1.0], rtol=1e-14)
        np.testing.assert_allclose(op.c, [1.0], rtol=1e-14)

    def test_degenerate_interval_rejected(self):
        with pytest.raises(ValueError):
            make_substep_operator(self.scalar_basis(), 0.5, 0.5)

    def test_two_dims_decouple(self):
        belief = GaussianBelief([0.0, 0.0], np.diag([2.0, 3.0]))
        basis = build_flow_basis(belief, LinearMeasurement(np.eye(2), np.eye(2),
                                                           [1.0, -1.0]))
        op = make_substep_operator(basis, 0.2, 0.7)
        for i, a in enumerate(basis.alphas):
            np.testing.assert_allclose(op.omega[i], omega_step(a, 0.2, 0.7), rtol=1e-14)
            np.testing.assert_allclose(
                op.c[i],
                forcing_step(a, basis.z_tilde[i], basis.x_tilde[i], 0.2, 0.7),
                rtol=1e-14,
            )

    def test_scalar_transport_to_posterior_mean(self):
        basis = self.scalar_basis()
        op = make_substep_operator(basis, 0.0, 1.0)
        out = apply_substep(op, basis, ParticleEnsemble([[0.0]]))
        np.testing.assert_allclose(out.particles, [[1.0]], rtol=1e-14)

    def test_scalar_transport_preserves_standardized_offset(self):
        # a particle one prior sigma above the mean lands one posterior sigma
        # above the posterior mean
        basis = self.scalar_basis()
        op = make_substep_operator(basis, 0.0, 1.0)
        out = apply_substep(op, basis, ParticleEnsemble([[1.0]]))
        np.testing.assert_allclose(out.particles, [[1.0 + np.sqrt(0.5)]], rtol=1e-14)

    def test_zero_operator_is_identity(self):
        basis = self.scalar_basis()
        op = SubstepOperator(omega=np.zeros(1), c=np.zeros(1), interval=(0.0, 0.5))
        x = np.array([[0.3], [-1.2]])
        out = apply_substep(op, basis, ParticleEnsemble(x))
        np.testing.assert_array_equal(out.particles, x)

    def test_dimension_mismatch_rejected(self):
        basis = self.scalar_basis()
        op = make_substep_operator(basis, 0.0, 1.0)
        with pytest.raises(ValueError):
            apply_substep(op, basis, ParticleEnsemble(np.zeros((3, 2))))


class TestClosedFormUpdate:
    def test_mean_particle_maps_to_kalman_mean(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            belief, meas = random_instance(rng)
            out = closed_form_update(belief, meas,
                                     ParticleEnsemble(belief.mean[None, :]))
            ref = kalman_update(belief, meas).mean
            np.testing.assert_allclose(out.particles[0], ref,
                                       atol=1e-10 * (1 + np.abs(ref).max()))

    def test_ensemble_covariance_maps_to_kalman_cov(self):
        rng = np.random.default_rng(9)
        belief, meas = random_instance(rng, 3, 2)
        n_p = 100_000
        e = sample_ensemble(belief, n_p, seed=2)
        out = closed_form_update(belief, meas, e)
        _, cov = ensemble_moments(out)
        ref = kalman_update(belief, meas).cov
        tol = 4.0 / np.sqrt(n_p) * np.max(np.abs(belief.cov))
        np.testing.assert_allclose(cov, ref, atol=4 * tol)

    def test_uninformative_measurement_leaves_particles(self):
        belief = GaussianBelief([1.0, -1.0], np.diag([2.0, 3.0]))
        H = np.array([[1.0, 0.5]])
        z = H @ belief.mean
        meas = LinearMeasurement(H, [[1e12]], z)
        x0 = np.array([[0.5, 0.5], [2.0, -3.0]])
        out = closed_form_update(belief, meas, ParticleEnsemble(x0))
        assert np.max(np.abs(out.particles - x0)) <= 1e-5


class TestFlowIdentities:
    def test_theorem1_mean_identity_per_eigendimension(self):
        # omega * x + c must equal (z - x)/(1 + alpha) over the full interval
        rng = np.random.default_rng(10)
        for _ in range(500):
            alpha = 10.0 ** rng.uniform(-6, 6)
            z, x = rng.standard_normal(2)
            lhs = omega_step(alpha, 0.0, 1.0) * x + forcing_step(alpha, z, x, 0.0, 1.0)
            rhs = (z - x) / (1.0 + alpha)
            assert abs(lhs - rhs) <= 1e-12 * abs(rhs) + 1e-15 * (abs(z) + abs(x))

    def test_theorem1_covariance_identity(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            belief, meas = random_instance(rng)
            basis = build_flow_basis(belief, meas)
            op = make_substep_operator(basis, 0.0, 1.0)
            phi = np.eye(belief.dim) + basis.E @ np.diag(op.omega) @ basis.F.T
            transported = phi @ belief.cov @ phi.T
            eig_form = belief.cov - basis.E @ np.diag(
                1.0 / (1.0 + basis.alphas)
            ) @ basis.E.T
            ref = kalman_update(belief, meas).cov
            scale = np.max(np.abs(ref))
            np.testing.assert_allclose(transported, eig_form, atol=1e-10 * scale)
            np.testing.assert_allclose(transported, ref, atol=1e-10 * scale)

    def test_composition_over_split_interval(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            belief, meas = random_instance(rng)
            basis = build_flow_basis(belief, meas)
            e = ParticleEnsemble(rng.standard_normal((5, belief.dim)))
            split = rng.uniform(0.05, 0.95)
            part = apply_substep(make_substep_operator(basis, 0.0, split), basis, e)
            two = apply_substep(make_substep_operator(basis, split, 1.0), basis, part)
            one = apply_substep(make_substep_operator(basis, 0.0, 1.0), basis, e)
            scale = 1.0 + np.max(np.abs(one.particles))
            assert np.max(np.abs(two.particles - one.particles)) <= 1e-10 * scale

    def test_eigen_order_invariance(self):
        rng = np.random.default_rng(15)
        belief, meas = random_instance(rng, 5, 3)
        basis = build_flow_basis(belief, meas)
        e = ParticleEnsemble(rng.standard_normal((6, 5)))
        out = apply_substep(make_substep_operator(basis, 0.0, 1.0), basis, e)
        perm = np.array([2, 0, 1])
        shuffled = FlowBasis(
            alphas=basis.alphas[perm], V=basis.V[:, perm], E=basis.E[:, perm],
            F=basis.F[:, perm], z_tilde=basis.z_tilde[perm],
            x_tilde=basis.x_tilde[perm],
        )
        out_p = apply_substep(make_substep_operator(shuffled, 0.0, 1.0), shuffled, e)
        scale = 1.0 + np.max(np.abs(out.particles))
        assert np.max(np.abs(out.particles - out_p.particles)) <= 1e-12 * scale

    def test_whitening_invariance(self):
        # the update depends on (H, R, z) only through whitened quantities
        rng = np.random.default_rng(16)
        for _ in range(30):
            belief, meas = random_instance(rng, 4, 2)
            T = rng.standard_normal((2, 2)) + 3.0 * np.eye(2)
            R2 = T @ meas.R @ T.T
            meas2 = LinearMeasurement(T @ meas.H, 0.5 * (R2 + R2.T), T @ meas.z)
            e = ParticleEnsemble(rng.standard_normal((5, 4)))
            out1 = closed_form_update(belief, meas, e)
            out2 = closed_form_update(belief, meas2, e)
            scale = 1.0 + np.max(np.abs(out1.particles))
            assert np.max(np.abs(out1.particles - out2.particles)) <= 1e-10 * scale

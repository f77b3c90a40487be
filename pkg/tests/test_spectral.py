import math

import numpy as np
import pytest
from scipy.optimize import brentq

from ruinwalk import (ConjugatePair, FiniteModel, Gaussian, PointMass,
                      ShiftedExponential, StructureError, TransformDomainError,
                      TwoPoint, conjugate_root, cumulants, iid_model,
                      lambda_derivatives, modulated_model, perron_eigen,
                      solve_poisson, spectral_decomposition,
                      stationary_distribution, tail_root, tilt_model,
                      tilted_operator_matrix, time_reverse)


def two_state_gaussian():
    # drift-free 2-state model with asymmetric conditional means
    P = [[0.6, 0.4], [0.3, 0.7]]
    laws = [[Gaussian(0.8, 1.0)] * 2, [Gaussian(-0.6, 1.0)] * 2]
    return modulated_model(P, laws)


def centered_exponential():
    return iid_model(ShiftedExponential(1.0, shift=-1.0))


def symmetric_two_point():
    return iid_model(TwoPoint(1.0, 0.5, -1.0))


class TestStationaryDistribution:
    def test_two_state(self):
        pi = stationary_distribution(np.array([[0.9, 0.1], [0.3, 0.7]]))
        assert np.allclose(pi, [0.75, 0.25], atol=1e-12)

    def test_single_state(self):
        assert stationary_distribution(np.array([[1.0]])).tolist() == [1.0]

    def test_uniform_for_doubly_stochastic(self):
        P = np.array([[0.2, 0.5, 0.3], [0.5, 0.3, 0.2], [0.3, 0.2, 0.5]])
        pi = stationary_distribution(P)
        assert np.allclose(pi, 1 / 3, atol=1e-12)

    def test_fixed_point_residual(self):
        rng = np.random.default_rng(7)
        P = rng.random((5, 5)) + 0.01
        P /= P.sum(axis=1, keepdims=True)
        pi = stationary_distribution(P)
        assert abs(pi.sum() - 1.0) <= 1e-12
        assert np.abs(pi @ P - pi).max() <= 1e-12


class TestSolvePoisson:
    def test_antisymmetric_means(self):
        # equal rows make (I - P) Delta = f - mu solvable by inspection
        P = [[0.5, 0.5], [0.5, 0.5]]
        laws = [[PointMass(1.0)] * 2, [PointMass(-1.0)] * 2]
        model = modulated_model(P, laws)
        sol = solve_poisson(model)
        assert np.allclose(sol.delta, [1.0, -1.0], atol=1e-10)
        assert sol.residual <= 1e-10

    def test_constant_mean_gives_zero(self):
        model = modulated_model([[0.6, 0.4], [0.3, 0.7]],
                                [[Gaussian(0.5, 1.0)] * 2] * 2)
        sol = solve_poisson(model)
        assert np.abs(sol.delta).max() <= 1e-10

    def test_gauge_and_identity(self):
        model = two_state_gaussian()
        sol = solve_poisson(model)
        assert abs(model.pi @ sol.delta) <= 1e-10
        f = model.conditional_mean()
        lhs = (np.eye(model.K) - model.P) @ sol.delta
        assert np.allclose(lhs, f - model.drift, atol=1e-10)


class TestTiltedOperator:
    def test_zero_alpha_is_transition_matrix(self):
        model = two_state_gaussian()
        assert np.array_equal(tilted_operator_matrix(model, 0.0), model.P)

    def test_gaussian_entries(self):
        model = iid_model(Gaussian(0.0, 1.0))
        a = 0.7
        M = tilted_operator_matrix(model, a)
        assert M[0, 0] == pytest.approx(math.exp(a * a / 2), rel=1e-14)

    def test_two_point_entries(self):
        model = symmetric_two_point()
        a = 0.4
        M = tilted_operator_matrix(model, a)
        assert M[0, 0] == pytest.approx(math.cosh(a), rel=1e-14)

    def test_domain_error_names_transition(self):
        model = iid_model(ShiftedExponential(1.0, shift=-1.0))
        with pytest.raises(TransformDomainError, match="transition 0->0"):
            tilted_operator_matrix(model, 1.5)


class TestPerronEigen:
    def test_antidiagonal(self):
        lam, r, l = perron_eigen(np.array([[0.0, 2.0], [2.0, 0.0]]),
                                 np.array([0.5, 0.5]))
        assert lam == pytest.approx(2.0, abs=1e-12)
        assert np.allclose(r, [1.0, 1.0], atol=1e-10)
        assert l @ r == pytest.approx(1.0, abs=1e-12)

    def test_stochastic_matrix_root_one(self):
        P = np.array([[0.6, 0.4], [0.3, 0.7]])
        pi = stationary_distribution(P)
        lam, r, l = perron_eigen(P, pi)
        assert lam == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(r, [1.0, 1.0], atol=1e-9)
        assert np.allclose(l, pi, atol=1e-9)

    def test_scalar(self):
        lam, r, l = perron_eigen(np.array([[3.0]]), np.array([1.0]))
        assert lam == 3.0 and r[0] == 1.0 and l[0] == 1.0

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            perron_eigen(np.array([[1.0, -0.1], [0.5, 1.0]]),
                         np.array([0.5, 0.5]))


class TestSpectralDecomposition:
    def test_zero_alpha_gauge_exact(self):
        model = two_state_gaussian()
        dec = spectral_decomposition(model, 0.0)
        assert dec.lam == 1.0 and dec.Lambda == 0.0
        assert np.array_equal(dec.r, np.ones(2))
        assert np.array_equal(dec.l, model.pi)
        assert np.array_equal(dec.pi_alpha, model.pi)

    def test_gaussian_iid_closed_form(self):
        model = iid_model(Gaussian(0.3, 1.5))
        a = 0.45
        dec = spectral_decomposition(model, a)
        assert dec.Lambda == pytest.approx(0.3 * a + 1.5 ** 2 * a * a / 2,
                                           rel=1e-12)

    def test_eigen_equations(self):
        model = two_state_gaussian()
        for a in (-0.5, -0.1, 0.2, 0.6):
            dec = spectral_decomposition(model, a)
            M = tilted_operator_matrix(model, a)
            assert np.abs(M @ dec.r - dec.lam * dec.r).max() <= 1e-10 * dec.lam
            assert np.abs(dec.l @ M - dec.lam * dec.l).max() <= 1e-10 * dec.lam
            assert model.pi @ dec.r == pytest.approx(1.0, abs=1e-10)
            assert dec.l @ dec.r == pytest.approx(1.0, abs=1e-10)

    def test_one_step_transform_identity(self):
        # sum_j P(i,j) E[e^{a xi} | i->j] r_j = lambda(a) r_i for every state
        model = two_state_gaussian()
        a = 0.35
        dec = spectral_decomposition(model, a)
        for i in range(model.K):
            lhs = sum(model.P[i, j] * model.law[i][j].mgf(a) * dec.r[j]
                      for j in range(model.K) if model.P[i, j] > 0)
            assert lhs == pytest.approx(dec.lam * dec.r[i], rel=1e-12)


class TestCumulants:
    def test_standard_gaussian(self):
        cs = cumulants(iid_model(Gaussian(0.0, 1.0)))
        assert cs.mu == pytest.approx(0.0, abs=1e-12)
        assert cs.sigma2 == pytest.approx(1.0, rel=1e-12)
        assert cs.kappa == pytest.approx(0.0, abs=1e-10)
        assert cs.kappa_nu == 0.0

    def test_centered_exponential(self):
        cs = cumulants(centered_exponential())
        assert cs.mu == pytest.approx(0.0, abs=1e-12)
        assert cs.sigma2 == pytest.approx(1.0, rel=1e-12)
        assert cs.kappa == pytest.approx(2.0, rel=1e-10)

    def test_point_mass(self):
        cs = cumulants(iid_model(PointMass(0.7)))
        assert cs.mu == pytest.approx(0.7, abs=1e-12)
        assert cs.sigma2 == pytest.approx(0.0, abs=1e-12)
        assert cs.kappa == pytest.approx(0.0, abs=1e-10)

    def test_kappa_nu_zero_at_stationary_start(self):
        model = two_state_gaussian()
        cs = cumulants(model, nu=model.pi)
        assert abs(cs.kappa_nu) <= 1e-12

    def test_kappa_nu_tracks_start_bias(self):
        model = two_state_gaussian()
        e0 = np.array([1.0, 0.0])
        cs = cumulants(model, nu=e0)
        # starting in the high-mean state accumulates positive excess drift
        assert cs.kappa_nu > 0.1

    def test_truncation_validation(self):
        with pytest.raises(ValueError):
            cumulants(two_state_gaussian(), truncation=0)

    def test_matches_lambda_derivatives(self):
        model = two_state_gaussian()
        cs = cumulants(model)
        (d1, d2, d3), _ = lambda_derivatives(model)
        assert cs.mu == pytest.approx(d1, abs=1e-8)
        assert cs.sigma2 == pytest.approx(d2, rel=1e-6)
        assert cs.kappa == pytest.approx(d3, abs=1e-4)


class TestLambdaDerivatives:
    def test_gaussian(self):
        (d1, d2, d3), errs = lambda_derivatives(iid_model(Gaussian(0.0, 1.0)))
        assert d1 == pytest.approx(0.0, abs=1e-10)
        assert d2 == pytest.approx(1.0, rel=1e-8)
        assert d3 == pytest.approx(0.0, abs=1e-6)

    def test_centered_exponential(self):
        # Lambda(a) = -a - log(1 - a): derivatives at 0 are 0, 1, 2
        (d1, d2, d3), _ = lambda_derivatives(centered_exponential())
        assert d1 == pytest.approx(0.0, abs=1e-10)
        assert d2 == pytest.approx(1.0, rel=1e-8)
        assert d3 == pytest.approx(2.0, rel=1e-5)

    def test_drift_recovered(self):
        model = iid_model(Gaussian(0.4, 2.0))
        (d1, d2, _), _ = lambda_derivatives(model)
        assert d1 == pytest.approx(0.4, abs=1e-9)
        assert d2 == pytest.approx(4.0, rel=1e-7)


class TestTiltModel:
    def test_zero_alpha_returns_same_object(self):
        model = two_state_gaussian()
        assert tilt_model(model, 0.0) is model

    def test_two_point_reweight(self):
        a = 0.6
        tilted = tilt_model(symmetric_two_point(), a)
        expect = math.exp(a) / (math.exp(a) + math.exp(-a))
        assert tilted.law[0][0].p1 == pytest.approx(expect, abs=1e-12)

    def test_gaussian_mean_shift(self):
        tilted = tilt_model(iid_model(Gaussian(0.0, 1.0)), 0.25)
        assert tilted.law[0][0].mean == pytest.approx(0.25, abs=1e-14)
        assert tilted.drift == pytest.approx(0.25, abs=1e-12)

    def test_rows_stochastic(self):
        tilted = tilt_model(two_state_gaussian(), 0.4)
        assert np.allclose(tilted.P.sum(axis=1), 1.0, atol=1e-12)
        assert (tilted.P >= 0).all()

    def test_round_trip(self):
        model = two_state_gaussian()
        a = 0.35
        back = tilt_model(tilt_model(model, a), -a)
        assert np.allclose(back.P, model.P, atol=1e-10)
        for i in range(2):
            for j in range(2):
                assert back.law[i][j].mean == pytest.approx(
                    model.law[i][j].mean, abs=1e-12)

    def test_drift_ordering(self):
        model = two_state_gaussian()
        assert abs(model.drift) < 1e-9
        drifts = [tilt_model(model, a).drift if a else model.drift
                  for a in (-0.6, -0.2, 0.0, 0.2, 0.6)]
        assert all(b > a for a, b in zip(drifts, drifts[1:]))
        for a in (-0.4, 0.4):
            assert math.copysign(1.0, tilt_model(model, a).drift) == \
                math.copysign(1.0, a)


class TestConjugateRoot:
    def test_centered_exponential(self):
        pair = conjugate_root(centered_exponential(), -0.3)
        assert pair.alpha0 == pytest.approx(-0.3, abs=1e-12)
        assert pair.alpha1 == pytest.approx(0.24986, abs=5e-4)
        # both sides share the common transform value
        la0 = spectral_decomposition(centered_exponential(), pair.alpha0).Lambda
        la1 = spectral_decomposition(centered_exponential(), pair.alpha1).Lambda
        assert la1 == pytest.approx(la0, abs=1e-10)
        assert pair.delta_gap == pytest.approx(pair.alpha1 - pair.alpha0)
        assert pair.lambda_common == pytest.approx(math.exp(la0), rel=1e-10)

    def test_symmetric_transform(self):
        pair = conjugate_root(symmetric_two_point(), 0.3)
        assert pair.alpha0 == pytest.approx(-0.3, abs=1e-10)
        assert pair.alpha1 == pytest.approx(0.3, abs=1e-12)

    def test_affine_transform_rejected(self):
        with pytest.raises(StructureError, match="affine"):
            conjugate_root(iid_model(PointMass(0.0)), 0.5)

    def test_requires_zero_drift(self):
        with pytest.raises(ValueError):
            conjugate_root(iid_model(Gaussian(0.5, 1.0)), 0.3)

    def test_requires_nonzero_alpha(self):
        with pytest.raises(ValueError):
            conjugate_root(symmetric_two_point(), 0.0)


class TestTimeReverse:
    def test_reversible_chain_unchanged(self):
        P = [[0.9, 0.1], [0.3, 0.7]]
        laws = [[Gaussian(0.5, 1.0)] * 2, [Gaussian(-0.5, 1.0)] * 2]
        model = modulated_model(P, laws)
        rev = time_reverse(model)
        assert np.allclose(rev.P, model.P, atol=1e-12)

    def test_involution(self):
        rng = np.random.default_rng(3)
        P = rng.random((3, 3)) + 0.05
        P /= P.sum(axis=1, keepdims=True)
        laws = [[Gaussian(0.1 * (i - j), 1.0) for j in range(3)]
                for i in range(3)]
        model = modulated_model(P, laws)
        back = time_reverse(time_reverse(model))
        assert np.allclose(back.P, model.P, atol=1e-12)

    def test_preserves_stationary_law_and_drift(self):
        model = two_state_gaussian()
        rev = time_reverse(model)
        assert np.allclose(rev.pi, model.pi, atol=1e-10)
        assert rev.drift == pytest.approx(model.drift, abs=1e-10)


class TestTailRoot:
    def test_gaussian_closed_form(self):
        # Lambda(a) = -0.5 a + a^2 / 2 vanishes at a = 1 exactly
        root = tail_root(iid_model(Gaussian(-0.5, 1.0)))
        assert root == pytest.approx(1.0, abs=1e-8)

    def test_two_point_vs_scalar_solver(self):
        law = TwoPoint(1.0, 0.2, -2.0)
        root = tail_root(iid_model(law))
        ref = brentq(lambda a: 0.2 * math.exp(a) + 0.8 * math.exp(-2 * a) - 1,
                     1e-9, 5.0, xtol=1e-14)
        assert root == pytest.approx(ref, abs=1e-8)

    def test_shifted_exponential(self):
        law = ShiftedExponential(1.0, shift=-2.0)
        root = tail_root(iid_model(law))
        ref = brentq(lambda a: -2 * a - math.log1p(-a), 1e-9, 0.999,
                     xtol=1e-14)
        assert root == pytest.approx(ref, abs=1e-8)

    def test_requires_negative_drift(self):
        with pytest.raises(ValueError):
            tail_root(iid_model(Gaussian(0.1, 1.0)))


class TestStructureValidation:
    def test_bad_row_sum_cites_row(self):
        P = [[0.6, 0.3], [0.3, 0.7]]
        laws = [[Gaussian(0, 1)] * 2] * 2
        with pytest.raises(ValueError, match=r"\[0\]"):
            FiniteModel(P, laws)

    def test_reducible_rejected(self):
        P = [[1.0, 0.0], [0.5, 0.5]]
        laws = [[Gaussian(0, 1)] * 2] * 2
        with pytest.raises(StructureError, match="reducible"):
            FiniteModel(P, laws)

    def test_periodic_rejected(self):
        P = [[0.0, 1.0], [1.0, 0.0]]
        laws = [[Gaussian(0, 1)] * 2] * 2
        with pytest.raises(StructureError, match="periodic"):
            FiniteModel(P, laws)

    def test_check_false_skips_structure(self):
        P = [[0.0, 1.0], [1.0, 0.0]]
        laws = [[PointMass(1.0)] * 2] * 2
        model = FiniteModel(P, laws, check=False)
        assert model.K == 2

    def test_missing_law_rejected(self):
        P = [[0.6, 0.4], [0.3, 0.7]]
        laws = [[Gaussian(0, 1), None], [Gaussian(0, 1), Gaussian(0, 1)]]
        with pytest.raises(ValueError, match="0->1"):
            FiniteModel(P, laws)


class TestWaldIdentityOneStep:
    def test_over_alpha_grid(self):
        # martingale normalization: E[e^{a xi_1} r(X_1) / (lambda r(X_0))] = 1
        models = [two_state_gaussian(), symmetric_two_point(),
                  centered_exponential()]
        for model in models:
            for a in (-0.4, -0.1, 0.1, 0.4):
                dec = spectral_decomposition(model, a)
                M = tilted_operator_matrix(model, a)
                vals = (M @ dec.r) / (dec.lam * dec.r)
                assert np.abs(vals - 1.0).max() <= 1e-10

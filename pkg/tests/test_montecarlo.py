import math

import numpy as np
import pytest
from scipy.stats import norm

from ruinwalk import (Gaussian, PointMass, ShiftedExponential, TwoPoint,
                      bridge_crossing_approx, ZeroDriftParams,
                      dp_exact_oracle, enumerate_is_identity,
                      estimate_r_factor, iid_model, mc_bridge_conditional,
                      mc_first_passage, mc_importance_sampled,
                      mc_ladder_moments, mc_max_tail, mc_overshoot,
                      modulated_model)


def plus_minus_walk():
    return iid_model(TwoPoint(1.0, 0.5, -1.0))


def two_state_two_point():
    # zero-drift lattice model with state-dependent up probabilities
    P = [[0.6, 0.4], [0.3, 0.7]]
    laws = [[TwoPoint(1.0, 0.5, -1.0), TwoPoint(1.0, 0.6, -1.0)],
            [TwoPoint(1.0, 0.4, -1.0), TwoPoint(1.0, 0.5, -1.0)]]
    return modulated_model(P, laws)


class TestMcFirstPassage:
    def test_certain_crossing(self):
        est, _ = mc_first_passage(iid_model(PointMass(1.0)), 0, 2.5, 5,
                                  reps=1000, seed=1)
        assert est.value == 1.0 and est.std_error == 0.0

    def test_unreachable_barrier(self):
        est, _ = mc_first_passage(iid_model(PointMass(1.0)), 0, 10.0, 5,
                                  reps=1000, seed=1)
        assert est.value == 0.0

    def test_crossing_at_horizon_excluded(self):
        est, _ = mc_first_passage(iid_model(PointMass(1.0)), 0, 2.5, 3,
                                  reps=500, seed=1)
        assert est.value == 0.0

    def test_joint_event_deterministic(self):
        # crosses 0.5 at step 1 with certainty; S_m = m stays above any c < m
        model = iid_model(PointMass(1.0))
        est1, est2 = mc_first_passage(model, 0, 0.5, 4, reps=500, seed=1,
                                      c=0.5)
        assert est1.value == 1.0 and est2.value == 0.0

    def test_matches_dp_oracle(self):
        model = two_state_two_point()
        ref = dp_exact_oracle(model, 2.5, 10, c=1.0)
        est1, est2 = mc_first_passage(model, "stationary", 2.5, 10,
                                      reps=100_000, seed=9, c=1.0)
        assert abs(est1.value - ref.p_tau) <= 4 * est1.std_error
        assert abs(est2.value - ref.p_joint) <= 4 * est2.std_error

    def test_invalid_horizon(self):
        with pytest.raises(ValueError):
            mc_first_passage(plus_minus_walk(), 0, 1.0, 0, reps=10, seed=1)

    def test_worker_determinism(self):
        model = two_state_two_point()
        runs = [mc_first_passage(model, "stationary", 1.5, 8, reps=200_000,
                                 seed=3, c=0.5, workers=w) for w in (1, 4)]
        assert runs[0][0].value == runs[1][0].value
        assert runs[0][1].value == runs[1][1].value

    def test_se_scaling(self):
        model = plus_minus_walk()
        ratios = []
        for trial in range(10):
            lo, _ = mc_first_passage(model, 0, 1.5, 10, reps=4000,
                                     seed=100 + trial)
            hi, _ = mc_first_passage(model, 0, 1.5, 10, reps=16000,
                                     seed=200 + trial)
            ratios.append(hi.std_error / lo.std_error)
        assert abs(np.mean(ratios) - 0.5) <= 0.1


class TestDpExactOracle:
    def test_deterministic_walk(self):
        res = dp_exact_oracle(iid_model(PointMass(1.0)), 2.5, 5)
        assert res.p_tau == 1.0
        assert dp_exact_oracle(iid_model(PointMass(1.0)), 2.5, 3).p_tau == 0.0

    def test_symmetric_walk_hand_values(self):
        model = plus_minus_walk()
        # cross 0.5 before step 3: first step up, probability 1/2
        assert dp_exact_oracle(model, 0.5, 3).p_tau == pytest.approx(0.5,
                                                                     abs=1e-15)
        # cross 1.5 before step 3: two ups, probability 1/4
        assert dp_exact_oracle(model, 1.5, 3).p_tau == pytest.approx(0.25,
                                                                     abs=1e-15)

    def test_joint_hand_value(self):
        # cross 0.5 at step 1 (prob 1/2) and return to S_3 = -1 < 0:
        # paths +,-,- only, probability 1/8
        res = dp_exact_oracle(plus_minus_walk(), 0.5, 3, c=0.0)
        assert res.p_joint == pytest.approx(0.125, abs=1e-15)
        assert res.p_joint <= res.p_tau

    def test_probability_sums(self):
        res = dp_exact_oracle(two_state_two_point(), 2.5, 9, c=2.5)
        assert 0.0 < res.p_joint < res.p_tau < 1.0

    def test_rejects_nonlattice(self):
        with pytest.raises(ValueError):
            dp_exact_oracle(iid_model(Gaussian(0.0, 1.0)), 1.0, 5)

    def test_barrier_cells_reported(self):
        res = dp_exact_oracle(plus_minus_walk(), 0.5, 3)
        assert res.span == 1.0
        lo, hi = res.b_cell
        assert lo <= 0.5 < hi


class TestImportanceSampling:
    def test_zero_tilt_matches_plain(self):
        model = two_state_two_point()
        plain = mc_first_passage(model, "stationary", 2.5, 10, reps=50_000,
                                 seed=5, c=1.0)
        tilted = mc_importance_sampled(model, 0.0, 2.5, 10, reps=50_000,
                                       seed=5, c=1.0)
        assert tilted[0].value == plain[0].value
        assert tilted[1].value == plain[1].value
        assert tilted[0].effective_sample_size == pytest.approx(50_000)

    def test_enumeration_identity(self):
        model = two_state_two_point()
        ref = dp_exact_oracle(model, 2.5, 5, c=0.5)
        for alpha in (0.0, 0.3, -0.3):
            p1, p2 = enumerate_is_identity(model, alpha, 2.5, 5, c=0.5)
            assert abs(p1 - ref.p_tau) <= 1e-12
            assert abs(p2 - ref.p_joint) <= 1e-12

    def test_unbiased_against_oracle(self):
        model = two_state_two_point()
        ref = dp_exact_oracle(model, 3.5, 12, c=0.5)
        est1, est2 = mc_importance_sampled(model, 0.3, 3.5, 12, reps=100_000,
                                           seed=21, c=0.5)
        assert abs(est1.value - ref.p_tau) <= 4 * est1.std_error
        assert abs(est2.value - ref.p_joint) <= 4 * est2.std_error

    def test_rare_event_variance_reduction(self):
        # the plain frequency estimator would see no hits at all here; its
        # nominal binomial standard error at the same reps is the yardstick
        model = iid_model(Gaussian(-0.2, 1.0))
        reps = 100_000
        est, _ = mc_importance_sampled(model, 0.4, 30.0, 100, reps=reps,
                                       seed=77)
        assert 0.0 < est.value < 1e-5
        binom_se = math.sqrt(est.value * (1 - est.value) / reps)
        assert est.std_error * 5 <= binom_se

    def test_enumeration_requires_lattice(self):
        with pytest.raises(ValueError):
            enumerate_is_identity(iid_model(Gaussian(0, 1)), 0.1, 1.0, 3)


class TestLadderMoments:
    def test_exponential_ladder(self):
        stats = mc_ladder_moments(iid_model(ShiftedExponential(1.0)), 5000,
                                  seed=2)
        assert (stats.samples_tau == 1).all()
        assert stats.rho_plus == pytest.approx(1.0, abs=6 * stats.se_s2)
        assert stats.reliable and stats.capped_count == 0

    def test_unit_step_exact(self):
        stats = mc_ladder_moments(iid_model(PointMass(1.0)), 200, seed=2)
        assert stats.mean_s == 1.0 and stats.rho_plus == 0.5
        assert stats.se_s == 0.0

    def test_zero_drift_gaussian_frozen_value(self):
        stats = mc_ladder_moments(iid_model(Gaussian(0.0, 1.0)), 30_000,
                                  seed=13, step_cap=10 ** 4)
        # reference from a 1e6-epoch run at step cap 1e5: 0.582513(483)
        assert stats.rho_plus == pytest.approx(0.582513, abs=0.02)
        assert stats.reliable

    def test_short_cap_flags_unreliable(self):
        stats = mc_ladder_moments(iid_model(Gaussian(0.0, 1.0)), 3000,
                                  seed=13, step_cap=100)
        assert stats.capped_count > 0
        assert not stats.reliable

    def test_burn_in_insensitive(self):
        model = iid_model(Gaussian(0.3, 1.0))
        a = mc_ladder_moments(model, 20_000, seed=31, burn_in=200)
        b = mc_ladder_moments(model, 20_000, seed=37, burn_in=400)
        se = math.hypot(a.se_s, b.se_s)
        assert abs(a.mean_s - b.mean_s) <= 4 * se

    def test_count_property(self):
        stats = mc_ladder_moments(iid_model(PointMass(1.0)), 150, seed=2)
        assert stats.count == 150


class TestEstimateRFactor:
    def test_single_state_exactly_one(self):
        model = plus_minus_walk()
        est = estimate_r_factor(model, -0.3, 0.3, j=1, count=200, seed=4)
        assert est.value == 1.0 and est.std_error == 0.0

    def test_two_state_near_one(self):
        model = two_state_two_point()
        est = estimate_r_factor(model, -0.3, 0.3, j=0, count=4000, seed=4,
                                step_cap=10 ** 4)
        assert est.value == pytest.approx(1.0, abs=max(6 * est.std_error, 0.1))


class TestOvershoot:
    def test_exponential_memoryless(self):
        model = iid_model(ShiftedExponential(1.0))
        est = mc_overshoot(model, 0, 5.0, reps=50_000, seed=8)
        assert est.value == pytest.approx(1.0, abs=4 * est.std_error)

    def test_requires_positive_drift(self):
        with pytest.raises(ValueError):
            mc_overshoot(iid_model(Gaussian(0.0, 1.0)), 0, 5.0, reps=10,
                         seed=1)


class TestBridgeConditional:
    def test_single_interior_point(self):
        # m=1 leaves no interior step, so the bridge cannot cross
        model = iid_model(Gaussian(0.0, 1.0))
        est = mc_bridge_conditional(model, 2.0, 0.0, 1, reps=200, seed=6)
        assert est.value == 0.0

    def test_far_barrier(self):
        model = iid_model(Gaussian(0.0, 1.0))
        est = mc_bridge_conditional(model, 10.0, 0.0, 20, reps=20_000, seed=6)
        assert est.value <= 1e-3

    def test_matches_exponential_formula(self):
        # the overshoot constant matters at this scale: without it the
        # formula overshoots the simulation by more than 0.2
        model = iid_model(Gaussian(0.0, 1.0))
        est = mc_bridge_conditional(model, 1.5, 0.5, 10, reps=40_000, seed=6)
        ref = bridge_crossing_approx(ZeroDriftParams(b=1.5, s_or_c=0.5,
                                                     m=10.0,
                                                     rho_plus=0.582513))
        assert est.value == pytest.approx(ref, abs=max(4 * est.std_error,
                                                       0.05))

    def test_requires_gaussian_single_state(self):
        with pytest.raises(ValueError):
            mc_bridge_conditional(plus_minus_walk(), 1.0, 0.0, 5, reps=10,
                                  seed=1)
        with pytest.raises(ValueError):
            mc_bridge_conditional(iid_model(Gaussian(0, 1)), 1.0, 2.0, 5,
                                  reps=10, seed=1)


class TestMaxTail:
    def test_contracting_walk_never_crosses(self):
        model = iid_model(PointMass(-1.0))
        curve = mc_max_tail(model, [math.e, math.e ** 2], reps=500, seed=3,
                            step_cap=50)
        assert (curve.probabilities == 0.0).all()
        assert math.isnan(curve.slope)

    def test_gaussian_tail_slope(self):
        # Lambda(a) = -0.5 a + a^2/2 has root 1, so log P ~ -log B
        model = iid_model(Gaussian(-0.5, 1.0))
        levels = np.exp([1.0, 1.5, 2.0, 2.5, 3.0])
        curve = mc_max_tail(model, levels, reps=40_000, seed=15,
                            step_cap=2000)
        assert (np.diff(curve.probabilities) < 0).all()
        assert curve.slope == pytest.approx(-1.0, abs=0.15)

    def test_requires_negative_drift(self):
        with pytest.raises(ValueError):
            mc_max_tail(iid_model(Gaussian(0.1, 1.0)), [2.0, 4.0], reps=10,
                        seed=1)

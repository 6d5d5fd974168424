import numpy as np
import pytest

from boltzwall.collision import KernelParams, MaxwellianFamily
from boltzwall.geometry import ellipsoid, unit_ball
from boltzwall.verify import (
    LemmaCheck,
    bisection_exit_oracle,
    chord_volume_identity,
    classify_last_over_first,
    cov_identity_check,
    nonlocal_to_local_check,
    normal_equivalence_check,
    second_derivative_obstruction,
    tb_bound_check,
    w1p_singular_integral,
)

BALL = unit_ball()
ELL = ellipsoid(2.0, 1.0, 1.0)
PARAMS = KernelParams()


class TestCovIdentity:
    def test_indicator_volume(self):
        # volume side (4 pi / 3)^2 for the unit ball with |v| <= 1
        check = cov_identity_check(BALL)
        assert check.passed
        assert check.levels[0] == pytest.approx((4 * np.pi / 3) ** 2, rel=1e-12)
        assert check.details["relative_discrepancy"] < 1e-3

    @pytest.mark.parametrize("d", [[0.0, 0.0, 1.0], [0.3, 0.5, 0.8], [1.0, -1.0, 0.5]])
    def test_per_direction_chord_identity(self, d):
        val = chord_volume_identity(BALL, np.array(d))
        assert val == pytest.approx(4 * np.pi / 3, abs=1e-3)

    def test_smooth_test_function(self):
        def g(y, v):
            return BALL.xi(y) ** 2 * np.exp(-np.sum(np.asarray(v) ** 2, -1))

        check = cov_identity_check(BALL, g=g, v_cap=4.0, n_v=(20, 10, 10), n_s=12)
        assert check.details["relative_discrepancy"] < 1e-3

    def test_ellipsoid_indicator(self):
        check = cov_identity_check(ELL, n_surf=(24, 24), n_v=(24, 12, 12), n_s=14)
        assert check.levels[0] == pytest.approx(
            (4 * np.pi / 3) ** 2 * 2.0, rel=1e-12)
        assert check.details["relative_discrepancy"] < 1e-3


class TestW1pDichotomy:
    @pytest.mark.parametrize("p,expected", [
        (2.0, "bounded"), (2.5, "bounded"), (2.9, "bounded"),
        (3.2, "diverging"), (3.5, "diverging"),
    ])
    def test_classification(self, p, expected):
        check = w1p_singular_integral(BALL, PARAMS, p, expected=expected)
        assert check.trend == expected
        assert check.passed

    def test_direct_agrees_with_boundary_form(self):
        check = w1p_singular_integral(BALL, PARAMS, 2.5, expected="bounded")
        assert check.details["direct_agreement"] < 0.05

    def test_p2_closed_form(self):
        # at p = 2 the angular factor is exactly 2 pi (1 - h) per surface
        # point, so the whole integral has a closed form on the ball
        check = w1p_singular_integral(BALL, PARAMS, 2.0, n_levels=6)
        from boltzwall.collision import gauss_legendre

        rr, wr = gauss_legendre(32, 0.0, 14.0)
        rad = float(wr @ np.exp(-2 * PARAMS.theta_tilde * rr**2))
        for h, J in zip(check.details["tube_h"], check.levels):
            exact = 4 * np.pi * 2 * 2 * np.pi * (1 - h) * rad
            assert J == pytest.approx(exact, rel=2e-3)

    def test_more_levels_do_not_flip_classification(self):
        base = w1p_singular_integral(BALL, PARAMS, 3.5, n_levels=10)
        more = w1p_singular_integral(BALL, PARAMS, 3.5, n_levels=14)
        assert base.trend == more.trend == "diverging"
        base2 = w1p_singular_integral(BALL, PARAMS, 2.0, n_levels=10)
        more2 = w1p_singular_integral(BALL, PARAMS, 2.0, n_levels=14)
        assert base2.trend == more2.trend == "bounded"


class TestExitBounds:
    def test_tb_bound_ball_exact_two(self):
        check = tb_bound_check(BALL, n_samples=4000, seed=2)
        assert check.passed
        assert check.details["sup_ratio"] == pytest.approx(2.0, abs=1e-8)

    def test_tb_bound_ellipsoid_finite(self):
        check = tb_bound_check(ELL, n_samples=4000, seed=2)
        assert check.passed
        assert check.details["sup_ratio"] < 2.0 * max(ELL.semi_axes) ** 2

    def test_normal_equivalence_ball_is_one(self):
        # generic (non-grazing) chords hit the symmetry identity to 1e-9
        rng = np.random.default_rng(9)
        from boltzwall.geometry import exit_arrays, sample_boundary, \
            sample_unit_directions

        xs = sample_boundary(BALL, 2000, rng)
        nx = BALL.normal(xs)
        vs = sample_unit_directions(2000, rng)
        nv = np.einsum("mi,mi->m", nx, vs)
        vs[nv < 0] -= 2 * nv[nv < 0, None] * nx[nv < 0]
        nv = np.abs(np.einsum("mi,mi->m", nx, vs))
        keep = nv > 1e-3
        _, _, nb, _ = exit_arrays(BALL, xs[keep], vs[keep])
        ratio = nv[keep] / np.abs(np.einsum("mi,mi->m", nb, vs[keep]))
        assert np.max(np.abs(ratio - 1.0)) < 1e-9
        # the check itself includes a grazing stratum where rounding relaxes
        # the identity slightly
        check = normal_equivalence_check(BALL, n_samples=4000, seed=3)
        assert check.passed
        assert check.details["sup_ratio"] == pytest.approx(1.0, abs=1e-4)
        assert check.details["inf_ratio"] == pytest.approx(1.0, abs=1e-4)

    def test_normal_equivalence_ellipsoid_bounded(self):
        check = normal_equivalence_check(ELL, n_samples=4000, seed=3)
        assert check.passed
        assert check.details["sup_ratio"] < 10.0
        assert check.details["inf_ratio"] > 0.1


class TestObstruction:
    X = np.array([0.3, -0.1, 0.2])
    V = np.array([0.8, 0.5, -0.3])

    def test_kernel_log_divergence(self):
        check = second_derivative_obstruction(BALL, PARAMS, self.X, self.V)
        assert check.trend == "diverging"
        incr = np.array(check.details["increments"][-4:])
        mean = incr.mean()
        assert np.all(np.abs(incr - mean) <= 0.3 * mean)

    def test_integrable_power_converges(self):
        check = second_derivative_obstruction(BALL, PARAMS, self.X, self.V,
                                              mode="sqrt")
        assert check.trend == "bounded"
        assert check.passed

    def test_vanishing_kernel_converges(self):
        check = second_derivative_obstruction(BALL, PARAMS, self.X, self.V,
                                              mode="vanishing")
        assert check.trend == "bounded"
        assert check.passed

    def test_more_levels_keep_diverging(self):
        check = second_derivative_obstruction(BALL, PARAMS, self.X, self.V,
                                              n_levels=15)
        assert check.trend == "diverging"


class TestNonlocalToLocal:
    def test_bounded_and_truncation_gains(self):
        check = nonlocal_to_local_check(BALL, PARAMS, n_samples=36, n_levels=2,
                                        seed=7)
        assert check.trend == "bounded"
        assert check.details["drift"] < 0.25
        assert check.details["eps_gain"] <= 0.25
        assert check.details["delta_gain"] <= 0.25


class TestOracleAndPlumbing:
    def test_bisection_oracle_independent_path(self):
        rng = np.random.default_rng(11)
        from boltzwall.geometry import sample_interior, sample_unit_directions

        xs = sample_interior(BALL, 100, rng)
        vs = sample_unit_directions(100, rng)
        tb = bisection_exit_oracle(BALL, xs, vs)
        assert np.max(np.abs(np.linalg.norm(xs - tb[:, None] * vs, axis=1) - 1.0)) < 1e-12

    def test_classifier_rule(self):
        assert classify_last_over_first([1.0, 1.2, 1.4]) == "bounded"
        assert classify_last_over_first([1.0, 2.0, 4.0]) == "diverging"

    def test_records_are_jsonable(self):
        check = tb_bound_check(BALL, n_samples=500, seed=1)
        rec = check.as_record()
        import json

        json.dumps(rec)
        assert rec["lemma_id"] == "tb_bound"

    def test_reproducible_bit_for_bit(self):
        a = tb_bound_check(BALL, n_samples=2000, seed=5).as_record()
        b = tb_bound_check(BALL, n_samples=2000, seed=5).as_record()
        assert a == b
        c = normal_equivalence_check(BALL, n_samples=2000, seed=5).as_record()
        d = normal_equivalence_check(BALL, n_samples=2000, seed=5).as_record()
        assert c == d

"""Tests for the gain formulas, the closed-form bound and the numeric
minimax oracle."""

import math

import numpy as np
import pytest

from quantum_gambling import analysis as an

ORACLE_R = [1, 2, 10, 100, 700, 1e4, 1e6]


def naive_eta_tilde(R):
    """The bound's splitting parameter exactly as usually written (loses
    digits for large R)."""
    return math.sqrt(R + 2 - math.sqrt((R + 2) ** 2 - 1))


def naive_delta(R):
    q = math.sqrt((R + 2) ** 2 - 1)
    t = naive_eta_tilde(R)
    return -(2 + (R - q) * (1 - t)) / (1 + t)


class TestGainFromProbs:
    def test_certain_win(self):
        assert an.gain_from_probs(1, 0.3, 50) == 1

    def test_certain_detection(self):
        assert an.gain_from_probs(0, 1, 37.5) == 37.5

    def test_fair_coin(self):
        assert an.gain_from_probs(0.5, 0, 9) == 0


class TestGainBob:
    @pytest.mark.parametrize("R", [1, 100])
    @pytest.mark.parametrize("eta", [0, 0.3, 1])
    def test_honest_alice_gives_minus_eta(self, R, eta):
        assert an.gain_bob(R, eta, 0) == pytest.approx(-eta, abs=1e-15)

    @pytest.mark.parametrize("eps", [-0.5, -0.1, 0.2, 0.5])
    def test_no_split_is_biased_coin(self, eps):
        assert an.gain_bob(42, 0, eps) == pytest.approx(-2 * eps, abs=1e-15)

    def test_two_path_single_point(self):
        p_b = an.prob_found_closed(0.1, 0.1)
        p_d = an.prob_detect_closed(0.1, 0.1)
        assert abs(an.gain_bob(100, 0.1, 0.1) - an.gain_from_probs(p_b, p_d, 100)) < 1e-12

    def test_two_path_grid(self):
        eta, eps = np.meshgrid(np.linspace(0, 1, 50), np.linspace(-0.5, 0.5, 50))
        for R in [1, 10, 100, 1e3, 1e4]:
            direct = an.gain_bob(R, eta, eps)
            composed = an.gain_from_probs(an.prob_found_closed(eta, eps), an.prob_detect_closed(eta, eps), R)
            # 1e-12 relative once |G| > 1: at |G| ~ 5e3 an ulp is ~1e-12
            scale = np.maximum(1.0, np.abs(direct))
            assert np.max(np.abs(direct - composed) / scale) < 1e-12, R

    def test_vectorized_matches_scalar(self):
        etas = np.linspace(0, 1, 7)
        got = an.gain_bob(5, etas, 0.2)
        for e, g in zip(etas, got):
            assert g == pytest.approx(an._gain_scalar(5, e, 0.2), abs=1e-15)

    def test_detect_defined_at_degenerate_corner(self):
        assert an.prob_detect_closed(0.0, -0.5) == 0.0


class TestGoldenSection:
    def test_parabola(self):
        x, fx, n = an.golden_section(lambda x: (x - 0.3) ** 2, 0, 1, 1e-10)
        assert x == pytest.approx(0.3, abs=1e-9)
        assert n > 10

    def test_maximize(self):
        x, fx, _ = an.golden_section(lambda x: -abs(x + 0.2), -1, 1, 1e-10, maximize=True)
        assert x == pytest.approx(-0.2, abs=1e-9)
        assert fx == pytest.approx(0, abs=1e-9)


class TestInnerMin:
    @pytest.mark.parametrize("R", [1, 50])
    def test_no_split_minimizer_at_boundary(self, R):
        eps, g = an.min_gain_over_eps(R, 0.0)
        assert eps == 0.5
        assert g == -1

    @pytest.mark.parametrize("R", [1, 3, 100, 1e5])
    @pytest.mark.parametrize("eta", [0.0, 0.01, 0.2, 0.5, 0.9, 1.0])
    def test_minimizer_nonnegative(self, R, eta):
        eps, _ = an.min_gain_over_eps(R, eta)
        assert eps >= 0

    @pytest.mark.parametrize("R", [1, 10, 1000])
    def test_beats_dense_scan(self, R):
        eta = 0.3
        _, g = an.min_gain_over_eps(R, eta)
        dense = an.gain_bob(R, eta, np.linspace(-0.5, 0.5, 200_001))
        assert g <= dense.min() + 1e-12

    def test_R1_at_optimal_split(self):
        _, g = an.min_gain_over_eps(1, an.eta_tilde(1))
        assert g == pytest.approx(-0.657, abs=1e-3)

    def test_argument_checks(self):
        with pytest.raises(ValueError):
            an.min_gain_over_eps(0, 0.5)
        with pytest.raises(ValueError):
            an.min_gain_over_eps(1, 1.5)


class TestClosedForm:
    def test_published_values(self):
        assert an.delta_closed(1) == pytest.approx(-0.65685, abs=1e-5)
        assert an.delta_closed(700) == pytest.approx(-0.0527, abs=1e-4)
        assert an.delta_closed(1e6) == pytest.approx(-0.0014, abs=1e-4)

    def test_eta_tilde_at_one(self):
        assert an.eta_tilde(1) == pytest.approx(math.sqrt(2) - 1, abs=1e-15)
        assert an.eta_tilde(1) == pytest.approx(math.sqrt(3 - math.sqrt(8)), abs=1e-15)

    @pytest.mark.parametrize("R", [1, 2, 10, 100])
    def test_stable_forms_equal_naive_where_naive_is_accurate(self, R):
        assert an.eta_tilde(R) == pytest.approx(naive_eta_tilde(R), rel=1e-12)
        assert an.delta_closed(R) == pytest.approx(naive_delta(R), rel=1e-10)

    def test_stable_form_at_large_R(self):
        # the naive form drifts in the 8th digit at R = 1e6; the stable one
        # agrees with the numeric oracle
        oracle = an.minimax_numeric(1e6)
        assert abs(an.delta_closed(1e6) - oracle.delta) < 1e-12
        assert abs(naive_delta(1e6) - oracle.delta) > 1e-10

    def test_monotone_towards_zero(self):
        Rs = [1, 2, 5, 10, 1e2, 1e3, 1e4, 1e6]
        d = [an.delta_closed(R) for R in Rs]
        assert all(a < b for a, b in zip(d, d[1:]))
        assert all(x < 0 for x in d)
        assert an.delta_closed(1e12) > -1e-5

    def test_honest_play(self):
        for R in [1, 3.5, 100, 1e6]:
            assert an.honest_play_gain(R) == -an.eta_tilde(R)
            assert an.honest_play_gain(R) == pytest.approx(an.gain_bob(R, an.eta_tilde(R), 0), abs=1e-15)
            assert an.honest_play_gain(R) >= an.delta_closed(R)
        assert an.honest_play_gain(1) == pytest.approx(-0.41421, abs=1e-5)
        assert an.honest_play_gain(1e6) == pytest.approx(-1 / math.sqrt(2e6), rel=1e-5)
        # about half of the guaranteed bound
        assert an.honest_play_gain(1e6) / an.delta_closed(1e6) == pytest.approx(0.5, rel=1e-3)

    def test_coin_toss_mapping(self):
        assert an.coin_toss_win_probability(an.delta_closed(1)) == pytest.approx(0.172, abs=1e-3)

    def test_rejects_nonpositive_R(self):
        for f in (an.eta_tilde, an.delta_closed, an.asymptotics, an.minimax_numeric):
            with pytest.raises(ValueError):
                f(0)


class TestAsymptotics:
    def test_values(self):
        d, e = an.asymptotics(1e6)
        assert d == pytest.approx(-0.001414, abs=1e-6)
        assert e == pytest.approx(0.000707, abs=1e-6)

    @pytest.mark.parametrize("R,rel", [(1e4, 0.01), (1e6, 0.001)])
    def test_convergence(self, R, rel):
        d, e = an.asymptotics(R)
        assert abs(d - an.delta_closed(R)) / abs(an.delta_closed(R)) < rel
        assert abs(e - an.eta_tilde(R)) / an.eta_tilde(R) < rel

    def test_finite_gap_at_small_R(self):
        d, _ = an.asymptotics(2)
        gap = abs(d - an.delta_closed(2)) / abs(an.delta_closed(2))
        # about 71%: the large-R forms are useless this far down
        assert gap == pytest.approx(0.7072, abs=1e-3)


class TestMinimaxOracle:
    @pytest.mark.parametrize("R", ORACLE_R)
    def test_matches_closed_form(self, R):
        res = an.minimax_numeric(R)
        assert abs(res.delta - an.delta_closed(R)) < 1e-6
        assert abs(res.eta_star - an.eta_tilde(R)) < 1e-6
        assert res.evaluations > 100_000

    def test_R1_values(self):
        res = an.minimax_numeric(1)
        assert res.delta == pytest.approx(-0.65685, abs=1e-5)
        assert res.eta_star == pytest.approx(0.41421, abs=1e-5)

    @pytest.mark.parametrize("R", [1, 10, 1e4])
    def test_saddle_structure(self, R):
        delta = an.delta_closed(R)
        _, at_opt = an.min_gain_over_eps(R, an.eta_tilde(R))
        assert at_opt == pytest.approx(delta, abs=1e-9)
        for eta in np.linspace(0, 1, 41):
            _, g = an.min_gain_over_eps(R, float(eta))
            assert g <= delta + 1e-9

    def test_worst_eps_scale(self):
        # the adversarial bias sits at 1/sqrt(2R+6), an observed identity
        for R in [1, 10, 1e4]:
            eps, _ = an.min_gain_over_eps(R, an.eta_tilde(R))
            assert eps == pytest.approx(1 / math.sqrt(2 * R + 6), rel=1e-6)


class TestDerivedQuantities:
    def test_worst_case_detection(self):
        assert an.worst_case_detection_prob(1e4) == pytest.approx(1.41e-6, rel=0.03)
        # at R = 100 the asymptotic sqrt(2/R^3) overestimates noticeably
        assert an.worst_case_detection_prob(100) == pytest.approx(1.064e-3, rel=1e-3)

    def test_honest_preparation_never_detected(self):
        for eta in [0.1, 0.5, 1.0]:
            assert an.prob_detect_closed(eta, 0) == 0

    def test_max_games_advisory(self):
        assert an.max_games_advisory(1) == pytest.approx(2.32, abs=0.01)
        assert an.max_games_advisory(1e6) == pytest.approx(5.0e5, rel=0.01)
        assert an.max_games_advisory(1e8) / 1e8 == pytest.approx(0.5, rel=1e-3)

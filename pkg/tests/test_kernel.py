import math

import mpmath
import numpy as np
import pytest

from subfn.kernel import log_sum_exp, log_weight, make_log_binom, make_weighting


class TestMakeWeighting:
    def test_uniform_kernel_is_all_zero(self):
        spec = make_weighting(math.inf, 17)
        assert spec.uniform
        assert np.all(spec.log_d == 0.0)

    def test_rho_one_distance_one(self):
        spec = make_weighting(1.0, 4)
        assert spec.log_d[1] == pytest.approx(-0.5, abs=1e-15)
        assert math.exp(spec.log_d[1]) == pytest.approx(0.60653, abs=1e-5)

    def test_distance_equal_to_rho(self):
        spec = make_weighting(16.0, 16)
        assert spec.log_d[16] == pytest.approx(-0.5, abs=1e-15)

    def test_zero_distance_weight_is_one(self):
        for rho in [0.5, 3.0, math.inf]:
            assert make_weighting(rho, 8).log_d[0] == 0.0

    def test_strictly_decreasing_for_finite_rho(self):
        spec = make_weighting(2.5, 30)
        assert np.all(np.diff(spec.log_d) < 0)

    @pytest.mark.parametrize("rho", [0.0, -1.0, math.nan])
    def test_bad_rho_rejected(self, rho):
        with pytest.raises(ValueError):
            make_weighting(rho, 4)


class TestLogWeight:
    def test_zero_distance(self):
        assert log_weight(make_weighting(3.0, 5), 0) == 0.0

    def test_rho_two_distance_four(self):
        assert log_weight(make_weighting(2.0, 8), 4) == pytest.approx(-2.0, abs=1e-15)

    def test_matches_direct_recomputation(self, rng):
        for _ in range(100):
            rho = float(rng.uniform(0.2, 40.0))
            m = int(rng.integers(1, 64))
            b = int(rng.integers(0, m + 1))
            expect = -(b * b) / (2.0 * rho * rho)
            assert log_weight(make_weighting(rho, m), b) == pytest.approx(expect, rel=1e-12)

    def test_out_of_range_distance(self):
        spec = make_weighting(1.0, 4)
        with pytest.raises(ValueError):
            log_weight(spec, 5)
        with pytest.raises(ValueError):
            log_weight(spec, -1)

    def test_symmetric_through_hamming_distance(self, rng):
        # the kernel factors through distance, so swapping the patterns
        # cannot change the weight
        from subfn.patterns import ActivationPattern, hamming

        spec = make_weighting(2.0, 16)
        for _ in range(50):
            a = ActivationPattern.from_bits(rng.integers(0, 2, 16))
            b = ActivationPattern.from_bits(rng.integers(0, 2, 16))
            assert log_weight(spec, hamming(a, b)) == log_weight(spec, hamming(b, a))


class TestLogBinom:
    def test_small_values(self):
        t = make_log_binom(10).log_choose
        assert math.exp(t[4, 2]) == pytest.approx(6.0, rel=1e-12)
        assert math.exp(t[10, 0]) == pytest.approx(1.0, rel=1e-15)
        assert math.exp(t[10, 10]) == pytest.approx(1.0, rel=1e-12)

    def test_against_exact_integer_arithmetic(self):
        t = make_log_binom(60).log_choose
        exact = math.comb(60, 30)  # arbitrary-precision integers
        assert math.exp(t[60, 30]) == pytest.approx(exact, rel=1e-10)

    def test_upper_triangle_is_minus_inf(self):
        t = make_log_binom(6).log_choose
        for q in range(7):
            for g in range(q + 1, 7):
                assert t[q, g] == -math.inf

    def test_pascal_identity(self):
        t = make_log_binom(60).log_choose
        for q in range(1, 61):
            for g in range(1, q + 1):
                lhs = math.exp(t[q, g])
                rhs = math.exp(t[q - 1, g - 1]) + (math.exp(t[q - 1, g]) if g <= q - 1 else 0.0)
                assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_row_sums_are_powers_of_two(self):
        t = make_log_binom(50).log_choose
        for m in range(51):
            row_sum = float(np.sum(np.exp(t[m, : m + 1])))
            assert row_sum == pytest.approx(float(2**m), rel=1e-9)

    def test_negative_m_rejected(self):
        with pytest.raises(ValueError):
            make_log_binom(-1)


class TestLogSumExp:
    def test_log2_plus_log3(self):
        assert log_sum_exp([math.log(2), math.log(3)]) == pytest.approx(math.log(5), rel=1e-14)

    def test_minus_inf_entry_is_zero_summand(self):
        assert log_sum_exp([-math.inf, 0.0]) == 0.0

    def test_all_minus_inf(self):
        assert log_sum_exp([-math.inf, -math.inf]) == -math.inf

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            log_sum_exp([0.0, math.nan])

    def test_against_extended_precision_oracle(self, rng):
        values = rng.uniform(-700, 700, size=10_000)
        got = log_sum_exp(values)
        with mpmath.workdps(60):
            expect = float(mpmath.log(mpmath.fsum(mpmath.e**v for v in values)))
        assert got == pytest.approx(expect, rel=1e-11)

    def test_permutation_invariant(self, rng):
        values = rng.uniform(-50, 50, size=500)
        base = log_sum_exp(values)
        for _ in range(5):
            assert log_sum_exp(rng.permutation(values)) == pytest.approx(base, rel=1e-12)

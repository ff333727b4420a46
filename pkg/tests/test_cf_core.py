"""Tests for continued fractions, enclosures and fixed point circle arithmetic"""

import cmath
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from core.cf_core import (
    CirclePoint,
    PartialQuotients,
    PrecisionError,
    ValidationError,
    certified_depth,
    cf_from_quotients,
    cf_from_real,
    circle_add,
    circle_distance,
    circle_mul_int,
    enclosure_from_decimal,
    enclosure_from_mpf,
    phase_grid,
    phase_ratio,
    required_precision_bits,
    to_fraction,
)
from core.processor import preset_quotients

PRESETS = ["golden", "silver", "liouville-1", "constant-7", "tower"]


def test_golden_denominators_follow_fibonacci(golden):
    assert golden.q[1:9] == (1, 1, 2, 3, 5, 8, 13, 21)
    assert golden.p[1:5] == (0, 1, 1, 2)


@pytest.mark.parametrize("name", PRESETS)
def test_diophantine_invariants_hold_to_depth_40(name):
    # Arrange
    a = preset_quotients(name, 40)

    # Act
    cf = cf_from_quotients(a, required_precision_bits(a))

    # Assert
    assert cf.depth == 40
    for k in range(1, cf.depth + 1):
        assert math.gcd(cf.p[k], cf.q[k]) == 1
        theta = cf.theta_exact(k)
        assert (theta > 0) == (k % 2 == 1)
        assert Fraction(1, cf.q[k + 1] + cf.q[k]) < abs(theta) < Fraction(1, cf.q[k + 1])
        if k + 2 <= cf.depth + 1:
            assert cf.q[k + 2] >= 2 * cf.q[k]


def test_theta_zero_is_minus_one(golden):
    assert golden.theta_exact(0) == -1


def test_resonant_indices_of_golden(golden):
    resonant = [k for k in range(1, 20) if golden.is_resonant(k, Fraction(5, 2))]
    assert resonant == [2, 3, 4, 5]


def test_liouville_is_resonant_up_to_eight(liouville2):
    assert all(liouville2.is_resonant(k, Fraction(5, 2)) for k in range(1, 9))


def test_tower_precision_is_the_smallest_certifying_multiple_of_64():
    a = preset_quotients("tower", 8)
    bits = required_precision_bits(a)
    cf = cf_from_quotients(a, bits)

    assert bits % 64 == 0
    assert certified_depth(a, bits) == 8
    assert certified_depth(a, bits - 64) < 8
    assert all(cf.is_resonant(k, Fraction(5, 2)) for k in range(1, 9))


def test_certified_depth_is_the_precision_boundary():
    a = [1] * 200
    depth = certified_depth(a, 64)

    cf_from_quotients(a[:depth], 64)
    with pytest.raises(PrecisionError):
        cf_from_quotients(a[:depth + 1], 64)


def test_too_few_bits_raise_precision_error():
    with pytest.raises(PrecisionError):
        cf_from_quotients([2**40] * 3, 64)


@pytest.mark.parametrize("a", [(1,), (0, 1), (1, -2)])
def test_invalid_quotients_are_rejected(a):
    with pytest.raises(ValidationError):
        PartialQuotients(a)


def test_decimal_enclosure_recovers_golden_quotients():
    enclosure = enclosure_from_decimal("0.6180339887498948482045868343656381177203")
    cf = cf_from_real(enclosure, 20, 256)
    assert cf.quotients.a == (1,) * 20


def test_mpmath_enclosure_recovers_pi_quotients():
    with mpmath.workprec(256):
        enclosure = enclosure_from_mpf(mpmath.frac(mpmath.pi))
    cf = cf_from_real(enclosure, 5, 256)
    assert cf.quotients.a == (7, 15, 1, 292, 1)


@pytest.mark.parametrize(
    "constant,expected",
    [
        (lambda: mpmath.pi, (7, 15, 1, 292, 1)),
        (lambda: mpmath.e, (1, 2, 1, 1, 4)),
        (lambda: mpmath.sqrt(2), (2, 2, 2, 2, 2)),
    ],
)
def test_mpmath_constants_give_plain_integer_quotients(constant, expected):
    with mpmath.workprec(256):
        enclosure = enclosure_from_mpf(mpmath.frac(constant()))
    cf = cf_from_real(enclosure, 5, 256)

    assert cf.quotients.a == expected
    assert all(type(a) is int for a in cf.quotients.a)
    assert type(enclosure.lo.numerator) is int


def test_gmpy_mantissas_become_plain_integers():
    gmpy2 = pytest.importorskip("gmpy2")
    value = mpmath.mpf((gmpy2.mpz(7), -3))

    exact = to_fraction(value)
    enclosure = enclosure_from_mpf(value)

    assert exact == Fraction(7, 8)
    assert type(exact.numerator) is int
    assert type(enclosure.hi.numerator) is int


@pytest.mark.parametrize("name", ["golden", "silver", "liouville2"])
def test_quotients_survive_a_trip_through_their_enclosure(name, request):
    cf = request.getfixturevalue(name)
    recovered = cf_from_real(cf.alpha, cf.depth, cf.precision_bits)
    assert recovered.quotients.a == cf.quotients.a


def test_rational_enclosure_is_rejected():
    with pytest.raises(PrecisionError):
        cf_from_real(enclosure_from_decimal("0.5"), 10, 256)


def test_working_alpha_lies_inside_the_enclosure(golden):
    alpha = Fraction(golden.alpha_fixed, 1 << golden.precision_bits)
    assert golden.alpha.contains(alpha)


def test_circle_arithmetic_wraps_and_tracks_error():
    half = CirclePoint.from_fraction(Fraction(1, 2), 64)
    third = CirclePoint.from_fraction(Fraction(1, 3), 64)

    assert half.value == 1 << 63 and half.err_ulps == 0
    assert third.err_ulps == 1
    assert circle_add(half, half).value == 0
    assert circle_mul_int(third, -5).err_ulps == 5


def test_tracked_error_covers_a_doubled_precision_result():
    # Arrange
    rng = np.random.default_rng(27)
    bits = 64
    ratios = []

    for _ in range(200):
        terms = [
            (Fraction(int(rng.integers(1, 10**9)), int(rng.integers(2, 10**9))), int(rng.integers(-10**6, 10**6)))
            for _ in range(5)
        ]

        # Act
        coarse, fine = CirclePoint.zero(bits), CirclePoint.zero(2 * bits)
        for value, n in terms:
            coarse = circle_add(coarse, circle_mul_int(CirclePoint.from_fraction(value, bits), n))
            fine = circle_add(fine, circle_mul_int(CirclePoint.from_fraction(value, 2 * bits), n))
        exact = sum(n * value for value, n in terms) % 1

        # Assert
        gap = (coarse.to_fraction() - fine.to_fraction()) % 1
        gap = min(gap, 1 - gap)
        assert gap <= coarse.err + fine.err
        true_gap = (coarse.to_fraction() - exact) % 1
        assert min(true_gap, 1 - true_gap) <= coarse.err
        if coarse.err_ulps:
            ratios.append(gap / coarse.err)

    assert np.median([float(r) for r in ratios]) < 0.5


def test_circle_error_budget_is_enforced():
    with pytest.raises(PrecisionError):
        CirclePoint(0, 64, 1 << 40)


def test_phase_ratio_matches_direct_evaluation():
    bits = 128
    scale = 1 << bits
    for t, s in [(Fraction(1, 7), Fraction(2, 9)), (Fraction(5, 11), Fraction(1, 1000))]:
        t_fixed, s_fixed = round(t * scale), round(s * scale)
        direct = (cmath.exp(2j * math.pi * float(t)) - 1) / (cmath.exp(2j * math.pi * float(s)) - 1)
        assert abs(phase_ratio(t_fixed, s_fixed, bits) - direct) < 1e-10 * abs(direct)

    assert phase_ratio(0, 12345, bits) == 0
    assert abs(phase_ratio(12345, 12345, bits) - 1) < 1e-15


def test_phase_ratio_rejects_vanishing_denominator():
    with pytest.raises(PrecisionError):
        phase_ratio(5, 0, 64)


def test_phase_grid_stays_within_its_error_bound():
    # Arrange
    bits = 256
    rng = np.random.default_rng(7)
    base = int(rng.integers(0, 1 << 62)) << 190
    step = (int(rng.integers(1, 1 << 62)) << 193) + 12345
    count = 5000

    # Act
    grid = phase_grid(base, step, count, bits)

    # Assert
    for l in range(0, count, 97):
        exact = ((base + l * step) % (1 << bits)) / (1 << bits)
        assert circle_distance(grid[l] - exact) <= 2.0**-51

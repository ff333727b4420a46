"""Tests for Ostrowski numeration, digit intervals, ensembles and residue arcs"""

from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from core.cf_core import CirclePoint, ValidationError, cf_from_quotients, required_precision_bits
from core.ostrowski import (
    INTEGER,
    BoundaryAmbiguousError,
    DigitWindow,
    EnumerationTooLargeError,
    InvalidNumerationError,
    OstrowskiDigits,
    OstrowskiRangeError,
    concat_defect,
    decode_int,
    digit_joint_tv,
    encode_int,
    encode_real,
    ensemble_size,
    enumerate_B,
    enumerate_interval,
    interval_size,
    is_valid,
    partial_sum,
    randbelow,
    reconstruct_real,
    residue,
    residue_arcs,
    sample_interval,
    valid_vectors,
)
from core.processor import preset_quotients

MIXED = [2, 3, 1, 2, 2, 3, 1, 4]


@pytest.fixture(scope="module")
def mixed():
    return cf_from_quotients(MIXED, 64)


def constant(a: int, count: int = 6):
    quotients = [a] * count
    return cf_from_quotients(quotients, required_precision_bits(quotients))


def test_every_integer_below_the_limit_round_trips(mixed):
    for n in range(mixed.q[mixed.depth + 1]):
        digits = encode_int(n, mixed)
        assert is_valid(digits)
        assert decode_int(digits) == n


def test_partial_sums_stay_below_the_next_denominator(mixed):
    for n in range(0, mixed.q[mixed.depth + 1], 7):
        digits = encode_int(n, mixed)
        assert partial_sum(digits, mixed.depth) == n
        for k in range(1, mixed.depth + 1):
            assert partial_sum(digits, k) < mixed.q[k + 1]
            assert partial_sum(digits, k) + partial_sum(digits, mixed.depth, k + 1) == n


def test_integers_outside_the_certified_range_are_rejected(mixed):
    with pytest.raises(OstrowskiRangeError):
        encode_int(-1, mixed)
    with pytest.raises(OstrowskiRangeError):
        encode_int(mixed.q[mixed.depth + 1], mixed)


def test_carry_rule_is_enforced(mixed):
    # a_2 = 3 at index 2 forces n_1 = 0
    digits = OstrowskiDigits({1: 1, 2: 3}, mixed, INTEGER)

    assert not is_valid(digits)
    with pytest.raises(InvalidNumerationError):
        decode_int(digits)


def test_first_digit_stays_below_a1(mixed):
    assert not is_valid(OstrowskiDigits({1: 2}, mixed))
    assert is_valid(OstrowskiDigits({1: 1}, mixed))


def test_initial_interval_is_a_full_range(mixed):
    for k in range(1, mixed.depth + 1):
        w = DigitWindow(1, k)
        assert list(enumerate_interval(w, mixed)) == list(range(mixed.q[k + 1]))


@pytest.mark.parametrize("k_minus,k_plus", [(2, 4), (3, 3), (2, 7), (4, 8)])
def test_interval_size_matches_enumeration(mixed, k_minus, k_plus):
    w = DigitWindow(k_minus, k_plus)
    members = list(enumerate_interval(w, mixed))

    assert len(members) == interval_size(w, mixed)
    assert members == sorted(set(members))
    for n in members:
        assert all(k_minus <= k <= k_plus for k in encode_int(n, mixed).support())


def test_sampling_is_uniform_over_the_interval(mixed):
    # Arrange
    w = DigitWindow(2, 4)
    members = set(enumerate_interval(w, mixed))
    draws_per_member = 200

    # Act
    draws = sample_interval(w, mixed, np.random.default_rng(1), draws_per_member * len(members))

    # Assert
    counts = Counter(draws)
    assert set(counts) == members
    assert all(abs(c - draws_per_member) < 0.4 * draws_per_member for c in counts.values())


def test_enumeration_limit_points_to_sampling(liouville2):
    with pytest.raises(EnumerationTooLargeError):
        list(enumerate_interval(DigitWindow(1, 12), liouville2))


def test_window_beyond_depth_is_rejected(mixed):
    with pytest.raises(OstrowskiRangeError):
        interval_size(DigitWindow(1, mixed.depth + 1), mixed)


def test_randbelow_handles_large_bounds():
    rng = np.random.default_rng(3)
    bound = 3 * (1 << 200) + 7
    draws = [randbelow(rng, bound) for _ in range(50)]

    assert all(0 <= d < bound for d in draws)
    assert max(draws) > 1 << 200


def test_encoding_theta_gives_a_single_digit(golden):
    x = CirclePoint(golden.theta_fixed(3), golden.precision_bits)
    assert encode_real(x, golden, 10).digits == {3: 1}


def test_real_digits_reconstruct_within_the_tail_bound(golden):
    rng = np.random.default_rng(11)
    for _ in range(50):
        x = CirclePoint.random(rng, golden.precision_bits)
        digits = encode_real(x, golden, 20)
        error = abs(x.representative(golden) - reconstruct_real(digits))
        assert error <= digits.tail_err_bound
        assert digits.tail_err_bound == Fraction(1, golden.q[21])


def test_point_near_a_digit_boundary_is_ambiguous(silver):
    boundary = abs(silver.theta_fixed(2))
    with pytest.raises(BoundaryAmbiguousError):
        encode_real(CirclePoint(boundary, silver.precision_bits, 2), silver, 5)


def test_resonant_ensemble_has_the_product_size(liouville2):
    w = DigitWindow(1, 3)
    members = list(enumerate_B(w, liouville2, 2.5))

    assert len(members) == ensemble_size(w, liouville2, 2.5) == 4 * 16 * 64
    assert all(0 <= d < liouville2.a(k) for m in members for k, d in m.items())


def test_golden_window_without_resonance_has_one_member(golden):
    w = DigitWindow(6, 10)
    assert list(enumerate_B(w, golden, 2.5)) == [{}]


@pytest.mark.parametrize("k_minus", [2, 3, 5, 7])
def test_residue_arcs_locate_the_residue_of_each_orbit_point(golden, k_minus):
    # Arrange
    arcs = residue_arcs(golden, k_minus)

    # Act / Assert
    assert len(arcs.arcs) == golden.q[k_minus]
    for n in range(300):
        assert arcs.locate(golden.multiple(n)) == residue(n, golden, k_minus)


def test_residue_arcs_partition_the_circle(mixed):
    arcs = residue_arcs(mixed, 5)
    assert sum(arc.length for arc in arcs.arcs) == 1
    assert sorted(arc.r for arc in arcs.arcs) == list(range(mixed.q[5]))


def test_single_digit_law_is_uniform_on_one_extra_value():
    cf = constant(50)
    assert digit_joint_tv(DigitWindow(3, 3), cf, [3]) == pytest.approx(1 / 51)


def test_digits_are_nearly_independent_for_large_quotients():
    cf = constant(50)
    assert digit_joint_tv(DigitWindow(3, 5), cf, [3, 4, 5]) <= 12 / 50


def test_independence_improves_with_larger_quotients():
    tvs = [digit_joint_tv(DigitWindow(3, 5), constant(a), [3, 4]) for a in (5, 50, 500)]

    assert tvs[0] > tvs[1] > tvs[2] > 0
    for a, tv in zip((5, 50, 500), tvs):
        assert tv <= 8 / a


def test_joint_law_indices_must_lie_in_the_window():
    with pytest.raises(ValidationError):
        digit_joint_tv(DigitWindow(3, 4), constant(50), [5])


def test_concatenation_defect(golden):
    assert concat_defect(golden, [2, 7]) == 0
    defect = concat_defect(golden, [2, 4, 6, 8])
    assert 0 < defect < 1


@pytest.mark.parametrize(
    "quotients,breakpoints",
    [
        ([50] * 10, [2, 4, 6, 8]),
        ([7, 30, 3, 200, 12, 9, 60, 5, 40, 11], [2, 3, 5, 7, 9]),
        (preset_quotients("liouville-1", 10), [2, 5, 8, 10]),
    ],
)
def test_concatenation_defect_is_bounded_by_the_quotients(quotients, breakpoints):
    cf = cf_from_quotients(quotients, required_precision_bits(quotients))
    bound = 4 * sum(1 / cf.a(k) for k in breakpoints[1:-1])
    assert 0 <= concat_defect(cf, breakpoints) <= bound


@pytest.mark.parametrize("name", ["golden", "silver"])
def test_numerations_below_depth_twelve_form_an_initial_segment(name):
    cf = cf_from_quotients(preset_quotients(name, 13), 128)
    for k in range(1, 13):
        values = sorted(decode_int(OstrowskiDigits(d, cf)) for d in valid_vectors(DigitWindow(1, k), cf))
        assert values == list(range(cf.q[k + 1]))


def test_arc_membership_matches_residues_on_a_long_orbit(golden):
    arcs = residue_arcs(golden, 6)
    ambiguous = 0
    for n in range(10**4):
        try:
            located = arcs.locate(golden.multiple(n))
        except BoundaryAmbiguousError:
            ambiguous += 1
            continue
        assert located == residue(n, golden, 6)
    assert ambiguous <= 2 * golden.q[6]

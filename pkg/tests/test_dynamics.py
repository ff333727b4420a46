"""Tests for Fourier models, Birkhoff sums, the φ ladder and scale diagnostics"""

from fractions import Fraction
from statistics import median

import numpy as np
import pytest

from config import Config
from core.cf_core import (
    CirclePoint,
    PrecisionError,
    ValidationError,
    cf_from_quotients,
    circle_add,
    circle_distance,
    required_precision_bits,
)
from core.dynamics import (
    BirkhoffSum,
    DigitRangeError,
    FourierModel,
    SkewProduct,
    all_scales,
    approx_H1,
    approx_H2,
    birkhoff_closed,
    birkhoff_exact,
    birkhoff_profile,
    closed_osc_along_orbit,
    cocycle_tail_bound,
    conjugacy_residual,
    ensemble_variance,
    increment_residual,
    interval_variance,
    kronecker_conjugator,
    luzin_defect,
    make_coboundary,
    phi_ladder,
    phi_ladder_lifted,
    phi_table,
    phi_tilde,
    product_decay,
    psi_conjugator,
    recover_g,
    resonant_set,
    step_bound,
    synth_h,
    truncation_error,
    truncated_H,
)
from core.ostrowski import DigitWindow, encode_int, encode_real, sample_interval
from core.processor import preset_quotients

TAU = Fraction(5, 2)


@pytest.fixture(scope="module")
def silver_system(silver):
    h = synth_h(all_scales(silver, 2, 8), TAU, seed=1, amplitude=0.5, mean=Fraction(1, 3))
    return SkewProduct(silver, h)


@pytest.fixture(scope="module")
def liouville_system(liouville2):
    return SkewProduct(liouville2, synth_h(resonant_set(liouville2, TAU), TAU, seed=5, amplitude=1))


@pytest.fixture(scope="module")
def deep_liouville_system():
    quotients = preset_quotients("liouville-2", 16)
    cf = cf_from_quotients(quotients, required_precision_bits(quotients))
    return SkewProduct(cf, synth_h(resonant_set(cf, TAU), TAU, seed=5, amplitude=1))


def random_points(bits: int, count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [CirclePoint.random(rng, bits) for _ in range(count)]


def test_model_rejects_bad_input():
    with pytest.raises(ValidationError):
        FourierModel({1: 1.0, -1: 1.0}, 0)
    with pytest.raises(ValidationError):
        FourierModel({0: 1.0}, TAU)
    with pytest.raises(ValidationError):
        FourierModel({2: 1.0, -2: 1.0}, TAU, decay_const=1.0)


def test_skew_product_needs_a_real_cocycle(silver):
    with pytest.raises(ValidationError):
        SkewProduct(silver, FourierModel({2: 1j}, TAU))


def test_synthetic_model_has_the_requested_decay(liouville2):
    h = synth_h(resonant_set(liouville2, TAU), TAU, seed=3, amplitude=0.7)

    assert h.is_real
    assert h.decay_const == 0.7
    for m, c in h.coeff.items():
        assert abs(c) == pytest.approx(0.7 * abs(m) ** -2.5)
    assert h.coeff == synth_h(resonant_set(liouville2, TAU), TAU, seed=3, amplitude=0.7).coeff


def test_model_json_keeps_the_exact_mean(silver_system):
    h = silver_system.h
    restored = FourierModel.from_json(h.to_json(), h.tau)

    assert restored.mean == Fraction(1, 3)
    assert restored.coeff == h.coeff


def test_hypothesis_compliance(golden, liouville_system):
    assert liouville_system.hypothesis_compliant()
    off_resonance = SkewProduct(golden, synth_h(all_scales(golden, 2, 12), TAU, seed=0, amplitude=0.5))
    assert not off_resonance.hypothesis_compliant()


@pytest.mark.parametrize("n", [1, 7, 100, 1000, -1, -250])
def test_closed_form_matches_direct_summation(silver_system, n):
    for x in random_points(silver_system.precision, 5):
        closed = birkhoff_closed(silver_system, x, n)
        exact = birkhoff_exact(silver_system, x, n)

        assert closed.linear == exact.linear == n * Fraction(1, 3)
        assert abs(closed.osc - exact.osc) <= 1e-9


def test_cocycle_identity_holds_for_huge_n(liouville_system):
    cf = liouville_system.cf
    n, m = 10**40 + 17, 3 * 10**35
    for x in random_points(cf.precision_bits, 5, seed=2):
        whole = birkhoff_closed(liouville_system, x, n + m)
        parts = birkhoff_closed(liouville_system, x, n) + birkhoff_closed(
            liouville_system, circle_add(x, cf.multiple(n)), m
        )
        assert abs(whole.osc - parts.osc) <= 1e-9
        assert whole.linear == parts.linear


def test_direct_summation_respects_the_iterate_limit(silver_system):
    x = CirclePoint.zero(silver_system.precision)
    with pytest.raises(ValidationError):
        birkhoff_exact(silver_system, x, Config.MAX_ITERATES + 1)


def test_profile_follows_the_closed_form(silver_system):
    x = random_points(silver_system.precision, 1, seed=4)[0]
    profile = birkhoff_profile(silver_system, x, 3000)

    assert profile[0] == pytest.approx(0.0, abs=1e-12)
    for n in (1, 10, 999, 3000):
        assert abs(profile[n] - birkhoff_closed(silver_system, x, n).osc) <= 1e-9


def test_sums_along_an_orbit_match_shifted_closed_forms(silver_system):
    cf = silver_system.cf
    x = random_points(silver_system.precision, 1, seed=6)[0]
    values = closed_osc_along_orbit(silver_system, x, 12, 40)
    for L in (0, 5, 39):
        expected = birkhoff_closed(silver_system, circle_add(x, cf.multiple(L)), 12).osc
        assert abs(values[L] - expected) <= 1e-9


def test_coboundary_sums_telescope(liouville2):
    # Arrange
    g = synth_h(resonant_set(liouville2, TAU, depth=8), TAU, seed=7, amplitude=0.01)
    T = make_coboundary(g, Fraction(1, 5), liouville2)

    # Act / Assert
    for x in random_points(liouville2.precision_bits, 5, seed=8):
        for n in (1, 1000, 10**30):
            H = birkhoff_closed(T, x, n)
            shifted = circle_add(x, liouville2.multiple(n))
            assert H.linear == n * Fraction(1, 5)
            assert abs(H.osc - (g.evaluate(shifted) - g.evaluate(x))) <= 1e-9


def test_transfer_function_is_recovered(liouville2):
    g = synth_h(resonant_set(liouville2, TAU, depth=8), TAU, seed=9, amplitude=0.01)
    recovered = recover_g(make_coboundary(g, 0, liouville2).h, liouville2)
    for m, c in g.coeff.items():
        assert abs(recovered.coeff[m] - c) <= 1e-12 * abs(c) + 1e-300


def test_conjugator_removes_the_non_resonant_part(golden):
    h = synth_h(all_scales(golden, 2, 12), TAU, seed=10, amplitude=0.5)

    psi, bound = psi_conjugator(h, golden, 0.01)

    assert bound < 0.01
    assert psi.tau == TAU - 2
    assert conjugacy_residual(h, psi, golden) < 1e-12


def test_full_conjugator_extends_the_truncated_one(golden):
    # Arrange
    h = synth_h(all_scales(golden, 2, 12), TAU, seed=10, amplitude=0.5)
    resonant = {m for m in h.coeff if resonant_set(golden, TAU).contains(m)}

    # Act
    psi, _ = psi_conjugator(h, golden, 0.01)
    full = kronecker_conjugator(h, golden)

    # Assert
    assert set(full.coeff) == set(h.coeff)
    assert set(full.coeff) - set(psi.coeff) == resonant
    for m, c in psi.coeff.items():
        assert full.coeff[m] == c


def test_full_conjugator_telescopes_birkhoff_sums(golden):
    h = synth_h(all_scales(golden, 2, 12), TAU, seed=19, amplitude=0.5)
    T = SkewProduct(golden, h)
    full = kronecker_conjugator(h, golden)
    for x in random_points(golden.precision_bits, 5, seed=20):
        for n in (1, 37, 1000):
            shifted = circle_add(x, golden.multiple(n))
            assert abs(birkhoff_closed(T, x, n).osc - (full.evaluate(shifted) - full.evaluate(x))) <= 1e-9


def test_conjugator_needs_enough_quotients(golden):
    h = synth_h(all_scales(golden, 2, 12), TAU, seed=10, amplitude=0.5)
    with pytest.raises(PrecisionError):
        psi_conjugator(h, golden, 1e-12)


def test_single_scale_approximation_is_exact_on_one_digit(liouville_system):
    cf = liouville_system.cf
    for x in random_points(cf.precision_bits, 3, seed=11):
        for k, n_k in [(3, 5), (5, 200)]:
            approx = approx_H1(liouville_system, {k: n_k}, x)
            only_k = SkewProduct(cf, liouville_system.h.restrict(
                lambda m: abs(m) in {f for f, _ in liouville_system.scale_terms(k)}
            ))
            exact = birkhoff_closed(only_k, x, n_k * cf.q[k])
            assert abs(approx.osc - exact.osc) <= 1e-9


def test_phi_tilde_is_the_scale_sum_from_the_origin(liouville_system):
    cf = liouville_system.cf
    origin = CirclePoint.from_fraction(Fraction(0), cf.precision_bits)
    k = 4
    only_k = SkewProduct(cf, liouville_system.h.restrict(
        lambda m: abs(m) in {f for f, _ in liouville_system.scale_terms(k)}
    ))

    assert phi_tilde(liouville_system, k, 0).value == 0
    for l in (1, 9, 250):
        value = phi_tilde(liouville_system, k, l)
        assert value.linear == l * cf.q[k] * liouville_system.h.mean
        assert abs(value.osc - birkhoff_closed(only_k, origin, l * cf.q[k]).osc) <= 1e-9


def test_digit_ladder_equals_the_lifted_phi_sum(liouville_system):
    cf = liouville_system.cf
    rng = np.random.default_rng(12)
    window = DigitWindow(2, 6)
    for _ in range(1000):
        n_digits = {k: int(rng.integers(-cf.a(k), cf.a(k) + 1)) for k in window.indices()}
        x_digits = {k: int(rng.integers(0, 2 * cf.a(k) + 1)) for k in window.indices()}

        H2 = approx_H2(liouville_system, n_digits, x_digits, window)
        lifted = phi_ladder_lifted(liouville_system, n_digits, x_digits, window)

        assert H2.linear == lifted.linear
        assert abs(H2.osc - lifted.osc) <= 2.0**-40


def test_reduced_ladder_agrees_without_wraparound(liouville_system):
    cf = liouville_system.cf
    window = DigitWindow(2, 4)
    n_digits = {2: 3, 3: 10, 4: 100}
    x_digits = {2: 5, 3: 20, 4: 7}

    reduced = phi_ladder(liouville_system, n_digits, x_digits, window)
    lifted = phi_ladder_lifted(liouville_system, n_digits, x_digits, window)

    assert circle_distance(reduced - lifted.mod1) <= 1e-9
    with pytest.raises(DigitRangeError):
        phi_ladder(liouville_system, {2: cf.a(2) + 1}, {}, window)


def test_ladder_error_shrinks_with_the_scale(liouville_system):
    # Arrange
    cf = liouville_system.cf
    rng = np.random.default_rng(13)
    errors = []

    # Act
    for k_minus in (2, 6, 10):
        window = DigitWindow(k_minus, k_minus + 1)
        gaps = []
        for n in sample_interval(window, cf, rng, 200):
            x = CirclePoint.random(rng, cf.precision_bits)
            x_digits = encode_real(x, cf, cf.depth)
            H = birkhoff_closed(liouville_system, x, n)
            H2 = approx_H2(liouville_system, encode_int(n, cf), x_digits, window)
            gaps.append(H.circle_gap(H2))
        errors.append(median(gaps))

    # Assert
    assert errors[1] <= 0.9 * errors[0]
    assert errors[2] <= 0.9 * errors[1]


def test_single_scale_error_shrinks_with_the_scale(liouville_system):
    cf = liouville_system.cf
    rng = np.random.default_rng(21)
    errors = []
    for k_minus in (2, 6, 10):
        window = DigitWindow(k_minus, k_minus + 1)
        gaps = []
        for n in sample_interval(window, cf, rng, 200):
            x = CirclePoint.random(rng, cf.precision_bits)
            H = birkhoff_closed(liouville_system, x, n)
            gaps.append(H.circle_gap(approx_H1(liouville_system, encode_int(n, cf), x, window)))
        errors.append(median(gaps))

    assert errors[1] <= 0.9 * errors[0]
    assert errors[2] <= 0.9 * errors[1]


def test_reduced_ladder_discrepancy_shrinks_with_the_scale(deep_liouville_system):
    # Arrange
    cf = deep_liouville_system.cf
    rng = np.random.default_rng(22)
    errors = []

    # Act
    for k_minus in (6, 10, 14):
        window = DigitWindow(k_minus, k_minus + 1)
        gaps = []
        for n in sample_interval(window, cf, rng, 100):
            x = CirclePoint.random(rng, cf.precision_bits)
            x_digits = encode_real(x, cf, window.k_plus)
            ladder = phi_ladder(deep_liouville_system, encode_int(n, cf), x_digits, window)
            gaps.append(circle_distance(birkhoff_closed(deep_liouville_system, x, n).mod1 - ladder))
        errors.append(median(gaps))

    # Assert
    assert errors[1] < errors[0]
    assert errors[2] <= max(errors[1], 1e-30)
    assert errors[2] <= 1e-12


def test_step_bound_values(liouville_system):
    cf = liouville_system.cf
    assert step_bound(liouville_system, {}) == 0
    assert step_bound(liouville_system, {4: 1}) == pytest.approx(cf.q[4] ** -1.5)
    assert step_bound(liouville_system, {3: -2, 4: 1}) == pytest.approx(2 * cf.q[3] ** -1.5 + cf.q[4] ** -1.5)


def test_sums_stay_within_the_step_bound(liouville_system):
    # Arrange
    cf = liouville_system.cf
    rng = np.random.default_rng(23)
    constant = 4.0

    for k_minus in (2, 6, 10):
        window = DigitWindow(k_minus, k_minus + 1)
        floor = 2.0 ** (-k_minus / 4)
        inside = 0
        draws = sample_interval(window, cf, rng, 200)

        # Act
        for n in draws:
            x = CirclePoint.random(rng, cf.precision_bits)
            H = birkhoff_closed(liouville_system, x, n)
            inside += abs(H.osc) <= constant * (step_bound(liouville_system, encode_int(n, cf)) + floor)

        # Assert
        assert inside >= 0.99 * len(draws)


def test_truncation_error_decays_like_a_power_of_q(golden):
    # Arrange
    h = synth_h(all_scales(golden, 2, 20), TAU, seed=0, amplitude=0.5, random_phases=False)
    T = SkewProduct(golden, h)
    grid = [CirclePoint.from_fraction(Fraction(i, 256), golden.precision_bits) for i in range(256)]
    log_q, log_err = [], []

    # Act
    for k_plus in range(5, 14):
        q_next = golden.q[k_plus + 1]
        worst = max(
            truncation_error(T, n, x, k_plus)
            for n in (q_next - 1, golden.q[k_plus], q_next // 2)
            for x in grid
        )
        log_q.append(np.log(golden.q[k_plus]))
        log_err.append(np.log(worst))
    slope = np.polyfit(log_q, log_err, 1)[0]

    # Assert
    assert slope == pytest.approx(-1.5, abs=0.3)


def test_truncated_sum_keeps_low_scales(golden):
    h = synth_h(all_scales(golden, 2, 20), TAU, seed=0, amplitude=0.5)
    T = SkewProduct(golden, h)
    x = random_points(golden.precision_bits, 1, seed=14)[0]
    n = golden.q[9]

    full = birkhoff_closed(T, x, n)
    truncated = truncated_H(T, n, x, 20)

    assert abs(full.osc - truncated.osc) <= 1e-12
    assert truncation_error(T, n, x, 20) == 0


def test_phi_table_matches_pointwise_values(liouville_system):
    table = phi_table(liouville_system, 3)

    assert table.size == liouville_system.cf.a(3)
    assert not table.lazy
    for l in (0, 1, 17, table.size - 1):
        assert circle_distance(table.values[l] - table.at(l).mod1) <= 1e-9
        assert table.lifted_values[l] == pytest.approx(table.at(l).value, abs=1e-9)


def test_large_tables_are_evaluated_lazily(liouville_system, monkeypatch):
    eager = phi_table(liouville_system, 2)
    monkeypatch.setattr(Config, "LAZY_PHI_THRESHOLD", 10)
    lazy = phi_table(liouville_system, 2)

    assert lazy.lazy
    assert np.allclose(lazy.values, eager.values, atol=1e-12)
    assert abs(lazy.mean_exponential() - eager.mean_exponential()) <= 1e-12


def test_non_resonant_tables_keep_only_the_linear_part():
    # Arrange
    cf = cf_from_quotients([7] * 12, 256)
    T = SkewProduct(cf, synth_h(all_scales(cf, 2, 10), TAU, seed=2, amplitude=1, mean=Fraction(1, 3)))
    assert cf.is_resonant(2, TAU) and not cf.is_resonant(8, TAU)

    # Act
    quiet = phi_table(T, 8)
    loud = phi_table(T, 2)

    # Assert
    assert not quiet.resonant and loud.resonant
    assert phi_tilde(T, 8, 3).osc != 0.0
    assert quiet.at(3) == BirkhoffSum(3 * cf.q[8] * Fraction(1, 3), 0.0)
    assert np.allclose(quiet.lifted_values, np.arange(7) * float(cf.q[8] * Fraction(1, 3)), rtol=1e-15, atol=0)
    for l in range(7):
        assert circle_distance(loud.values[l] - phi_tilde(T, 2, l).mod1) <= 1e-9


def test_phi_tilde_is_nearly_periodic_on_resonant_scales(liouville_system):
    # Arrange
    cf = liouville_system.cf
    rng = np.random.default_rng(24)
    defects = {}

    # Act
    for k in (3, 6):
        a_k = cf.a(k)
        step = (cf.q[k + 1] - cf.q[k - 1]) * liouville_system.h.mean
        gaps = []
        for l in rng.integers(0, a_k, size=50):
            diff = phi_tilde(liouville_system, k, int(l) + a_k) - phi_tilde(liouville_system, k, int(l))
            assert diff.linear == step
            gaps.append(circle_distance(diff.osc))
        defects[k] = median(gaps)

    # Assert
    assert defects[6] < 0.01 * defects[3]
    assert defects[6] <= 1e-8


def test_increment_residual_shrinks_for_coboundaries(liouville2):
    # Arrange
    g = synth_h(resonant_set(liouville2, TAU, depth=8), TAU, seed=25, amplitude=0.01)
    T = make_coboundary(g, 0, liouville2)
    rng = np.random.default_rng(26)
    residuals = []

    # Act
    for k in (2, 4, 6):
        values = [
            increment_residual(T, {k: int(n_k)}, {k: 1})
            for n_k in rng.integers(0, liouville2.a(k), size=50)
        ]
        residuals.append(median(values))

    # Assert
    assert residuals[1] < residuals[0]
    assert residuals[2] < residuals[1]
    assert residuals[2] <= 1e-12


def test_products_stay_large_for_coboundaries(liouville2):
    # Arrange
    g = synth_h(resonant_set(liouville2, TAU, depth=8), TAU, seed=15, amplitude=0.01)
    coboundary = make_coboundary(g, 0, liouville2)
    generic = SkewProduct(liouville2, synth_h(resonant_set(liouville2, TAU, depth=8), TAU, seed=15, amplitude=5))

    # Act
    cob_steps = product_decay(coboundary, 1, 8)
    gen_steps = product_decay(generic, 1, 8)

    # Assert
    assert [s.k for s in cob_steps] == list(range(1, 9))
    assert all(s.partial >= 0.1 for s in cob_steps)
    assert min(s.partial for s in gen_steps) < min(s.partial for s in cob_steps)


def test_luzin_defect(liouville_system):
    assert luzin_defect(liouville_system, {3: 2}) == 0.0
    with pytest.raises(DigitRangeError):
        luzin_defect(liouville_system, {3: 10**6})


def test_increment_residual_range(liouville_system):
    value = increment_residual(liouville_system, {2: 3, 3: 1}, {2: 1, 3: -2})
    assert 0 <= value <= 0.5
    with pytest.raises(DigitRangeError):
        increment_residual(liouville_system, {2: 3}, {2: 9})


def test_cocycle_tail_bound_covers_sampled_sums(liouville_system):
    cf = liouville_system.cf
    k_minus = 4
    bound = cocycle_tail_bound(liouville_system, k_minus)
    rng = np.random.default_rng(16)
    for s in sample_interval(DigitWindow(k_minus, cf.depth), cf, rng, 50):
        x = CirclePoint.random(rng, cf.precision_bits)
        assert abs(birkhoff_closed(liouville_system, x, s).osc) <= bound + 1e-9


def test_ensemble_variance_is_exact(liouville_system):
    report = ensemble_variance(liouville_system, DigitWindow(2, 4), 0.5, 2000, seed=17)

    assert report.variance == pytest.approx(1 - abs(report.z) ** 2)
    assert 0 <= report.exceed_prob <= 1
    assert report.samples == 2000


def test_interval_statistic_tracks_the_ensemble(liouville_system):
    window = DigitWindow(2, 4)
    ensemble = ensemble_variance(liouville_system, window, 0.5, 2000, seed=18)
    interval = interval_variance(liouville_system, window, 0.5, 2000, seed=18)

    assert abs(ensemble.z - interval.z) < 0.3
    assert 0 <= interval.variance <= 4

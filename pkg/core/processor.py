"""
Experiment Runner - α presets, model construction and the report-producing subcommands
"""

import logging
import math
from functools import cached_property
from fractions import Fraction
from pathlib import Path
from statistics import median
from typing import Callable, List, Optional, Tuple

import mpmath
import numpy as np

from config import Config, ExperimentConfig
from core.cf_core import (
    CirclePoint,
    ContinuedFraction,
    PrecisionError,
    ValidationError,
    certified_depth,
    cf_from_quotients,
    cf_from_real,
    enclosure_from_decimal,
    enclosure_from_mpf,
    required_precision_bits,
    to_fraction,
)
from core.dynamics import (
    FourierModel,
    SkewProduct,
    approx_H1,
    approx_H2,
    birkhoff_closed,
    make_coboundary,
    product_decay,
    resonant_set,
    step_bound,
    synth_h,
    truncation_error,
)
from core.moebius import (
    TestFunction,
    arc_family,
    coefficient_bound,
    davenport_avg,
    disjointness_profile,
    save_table,
    short_interval_corr,
    sieve_mu,
    verify_arc_approx,
    window_decomp_slack,
    window_decomp_stat,
)
from core.ostrowski import (
    BoundaryAmbiguousError,
    DigitWindow,
    OstrowskiDigits,
    concat_defect,
    decode_int,
    digit_joint_tv,
    encode_int,
    encode_real,
    residue,
    residue_arcs,
    sample_interval,
    valid_vectors,
)
from utils.session import RunSession

logger = logging.getLogger(__name__)

CONSTANTS = {
    "frac-pi": lambda: mpmath.pi,
    "frac-e": lambda: mpmath.e,
    "frac-sqrt2": lambda: mpmath.sqrt(2),
}

# brute force bijection check stays below this depth
OSTROWSKI_CHECK_DEPTH = 12

CORRELATION_COLUMNS = ["N", "R", "beta_num", "beta_den_or_float", "value"]


def preset_quotients(name: str, count: int) -> List[int]:
    """
    Partial quotients a_1..a_count of a named preset

    golden (a_k = 1), silver (a_k = 2), constant-c (a_k = c), liouville-d (a_k = 2^(dk)) and
    tower (a_k = 2^(2^k), exponent capped at TOWER_EXPONENT_CAP).
    """
    ks = range(1, count + 1)
    if name == "golden":
        return [1] * count
    if name == "silver":
        return [2] * count
    if name == "tower":
        return [1 << min(1 << k, Config.TOWER_EXPONENT_CAP) for k in ks]
    family, _, arg = name.partition("-")
    if family in ("liouville", "constant") and arg.isdigit() and int(arg) > 0:
        d = int(arg)
        return [1 << (d * k) for k in ks] if family == "liouville" else [d] * count
    hint = Config.suggest(name, Config.PRESETS + tuple(CONSTANTS))
    raise ValidationError(f"unknown α preset '{name}'" + (f"; did you mean '{hint}'?" if hint else ""))


def cf_for_alpha(text: str, precision: int, max_k: int) -> ContinuedFraction:
    """
    Continued fraction for an α description: a preset, a comma separated quotient list, a decimal
    string (exact to its last digit) or one of the constants frac-pi, frac-e, frac-sqrt2
    """
    text = text.strip()
    if "," in text:
        quotients = [int(part) for part in text.split(",") if part.strip()]
        return _certified(quotients, precision, text)
    if text in CONSTANTS:
        with mpmath.workprec(precision):
            value = CONSTANTS[text]()
            enclosure = enclosure_from_mpf(mpmath.frac(value))
        return cf_from_real(enclosure, max_k, precision)
    if text[:1].isdigit() or text.startswith("."):
        return cf_from_real(enclosure_from_decimal(text), max_k, precision)
    return _certified(preset_quotients(text, max_k), precision, text)


def _certified(quotients: List[int], precision: int, label: str) -> ContinuedFraction:
    depth = certified_depth(quotients, precision)
    if depth < 2:
        raise PrecisionError(
            f"α '{label}' needs {required_precision_bits(quotients[:2])} bits for two quotients; "
            f"got {precision}"
        )
    if depth < len(quotients):
        logger.warning(f"α '{label}': {precision} bits certify {depth} of {len(quotients)} quotients")
    return cf_from_quotients(quotients[:depth], precision)


def beta_value(name: str, cf: ContinuedFraction, precision: int) -> Fraction:
    """β for the correlation subcommands: golden, alpha, a constant name, or a decimal/p/q"""
    if name == "alpha":
        return Fraction(cf.alpha_fixed, 1 << cf.precision_bits)
    with mpmath.workprec(precision):
        if name == "golden":
            value = (mpmath.sqrt(5) - 1) / 2
        elif name in CONSTANTS:
            value = mpmath.frac(CONSTANTS[name]())
        else:
            return _exact(name)
    return to_fraction(value)


def beta_columns(name: str, beta: Fraction) -> Tuple[str, str]:
    """(beta_num, beta_den_or_float): p and q for a rational β, the name and its float value otherwise"""
    if name in ("alpha", "golden") or name in CONSTANTS:
        return name, repr(float(beta))
    return str(beta.numerator), str(beta.denominator)


def _exact(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        hint = Config.suggest(text, ("golden", "alpha") + tuple(CONSTANTS))
        raise ValidationError(f"unknown β '{text}'" + (f"; did you mean '{hint}'?" if hint else ""))


class ExperimentRunner:
    """Runs the experiment subcommands for one configuration"""

    def __init__(self, config: ExperimentConfig, progress_callback: Optional[Callable[[int, int, str], None]] = None):
        """
        Args:
            config: Validated configuration
            progress_callback: Function to call with progress updates (current, total, message)
        """
        self.config = config
        self.progress_callback = progress_callback

    def run(self, subcommand: str) -> List[Path]:
        """
        Run one subcommand and write its reports

        Returns:
            Paths of the written report files
        """
        if subcommand not in Config.SUBCOMMANDS:
            hint = Config.suggest(subcommand, Config.SUBCOMMANDS)
            raise ValidationError(f"unknown subcommand '{subcommand}'" + (f"; did you mean '{hint}'?" if hint else ""))
        session = RunSession(self.config, subcommand)
        handler = getattr(self, "_run_" + subcommand.replace("-", "_"))
        logger.info(f"Running {subcommand} with config {session.config_hash}")
        handler(session)
        return session.written

    def _progress(self, current: int, total: int, message: str):
        if self.progress_callback:
            self.progress_callback(current, total, message)

    @cached_property
    def cf(self) -> ContinuedFraction:
        return cf_for_alpha(self.config.alpha, self.config.precision, self.config.max_k)

    @cached_property
    def system(self) -> SkewProduct:
        """Skew product for the configured h kind"""
        cfg = self.config
        tau = cfg.tau_value
        if cfg.h == "zero":
            return SkewProduct(self.cf, FourierModel({}, tau))
        M = resonant_set(self.cf, tau)
        if cfg.h == "coboundary":
            g = synth_h(M, tau, cfg.seed, cfg.g_amplitude_value)
            return make_coboundary(g, cfg.c_value, self.cf, cfg.winding)
        return SkewProduct(self.cf, synth_h(M, tau, cfg.seed, cfg.amplitude_value))

    @property
    def window(self) -> DigitWindow:
        return DigitWindow(self.config.k_minus, self.config.k_plus)

    def _points(self, session: RunSession, count: int):
        rng = session.rng(1)
        bits = self.cf.precision_bits
        return [(CirclePoint.random(rng, bits), CirclePoint.random(rng, bits)) for _ in range(count)]

    def _run_cf_info(self, session: RunSession):
        cf = self.cf
        tau = self.config.tau_value
        results = cf.to_json()
        results["precision_bits"] = cf.precision_bits
        results["required_precision_bits"] = required_precision_bits(cf.quotients.a)
        results["resonant_k"] = [k for k in range(1, cf.depth + 1) if cf.is_resonant(k, tau)]
        session.write_json(results)

    def _run_ostrowski_check(self, session: RunSession):
        cf = self.cf
        rows = []
        top = min(OSTROWSKI_CHECK_DEPTH, cf.depth)
        for k in range(1, top + 1):
            values = sorted(decode_int(OstrowskiDigits(d, cf)) for d in valid_vectors(DigitWindow(1, k), cf))
            rows.append([k, len(values), cf.q[k + 1], values == list(range(cf.q[k + 1]))])
            self._progress(k, top, f"Checked numerations below q_{k + 1}")
        rng = session.rng()
        failures = 0
        for _ in range(self.config.samples):
            n = int(rng.integers(0, min(cf.q[cf.depth + 1], 1 << 62)))
            failures += decode_int(encode_int(n, cf)) != n
        if failures:
            logger.error(f"{failures} integers failed to round trip")
        session.write_csv(["k", "count", "q_next", "bijective"], rows + [["roundtrip_failures", failures, "", ""]])

    def _run_indep_tv(self, session: RunSession):
        cf, w = self.cf, self.window
        indices = self.config.index_values or list(w.indices())
        joint = digit_joint_tv(w, cf, indices)
        bound = 4 * sum(1 / cf.a(k) for k in indices)
        singles = {k: digit_joint_tv(w, cf, [k]) for k in indices}
        breakpoints = sorted({w.k_minus, *indices[1:], w.k_plus + 1}) if len(indices) > 1 else []
        results = {
            "window": [w.k_minus, w.k_plus],
            "indices": indices,
            "tv": joint,
            "bound": bound,
            "single_digit_tv": singles,
            "concat_defect": concat_defect(cf, breakpoints) if len(breakpoints) > 2 else None,
        }
        session.write_json(results)

    def _run_approx_ladder(self, session: RunSession):
        T = self.system
        cf = T.cf
        rng = session.rng()
        rows = []
        top = min(self.config.k_plus, cf.depth - 1)
        for k_minus in range(self.config.k_minus, top + 1):
            w = DigitWindow(k_minus, k_minus + 1)
            errors_1, errors_2, ratios = [], [], []
            floor = 2.0 ** (-k_minus / 4)
            for n in sample_interval(w, cf, rng, self.config.samples):
                x = CirclePoint.random(rng, cf.precision_bits)
                try:
                    x_digits = encode_real(x, cf, w.k_plus)
                except BoundaryAmbiguousError:
                    logger.warning("Skipped a base point on an Ostrowski boundary")
                    continue
                digits = encode_int(n, cf)
                exact = birkhoff_closed(T, x, n)
                errors_1.append(abs(exact - approx_H1(T, digits, x, w)))
                errors_2.append(abs(exact - approx_H2(T, digits, x_digits, w)))
                ratios.append(abs(exact.osc) / (step_bound(T, digits) + floor))
            rows.append([
                k_minus, len(errors_1), median(errors_1), max(errors_1), median(errors_2), max(errors_2), max(ratios),
            ])
            self._progress(k_minus, top, f"Ladder at k_minus={k_minus}")
        session.write_csv(["k_minus", "samples", "median_H1", "max_H1", "median_H2", "max_H2", "max_step_ratio"], rows)

    def _run_trunc_decay(self, session: RunSession):
        T = self.system
        cf = T.cf
        rng = session.rng()
        points = [CirclePoint.random(rng, cf.precision_bits) for _ in range(self.config.samples)]
        rows = []
        for k_plus in range(self.config.k_minus, min(self.config.k_plus, cf.depth - 1) + 1):
            q_next = cf.q[k_plus + 1]
            ns = (q_next - 1, cf.q[k_plus], q_next // 2)
            worst = max(truncation_error(T, n, x, k_plus) for n in ns for x in points)
            rows.append([k_plus, q_next, worst])
        slope = _loglog_slope([r[1] for r in rows], [r[2] for r in rows])
        session.write_csv(["k_plus", "q_next", "max_error"], rows + [["slope", "", slope]])

    def _run_phi_product(self, session: RunSession):
        steps = product_decay(self.system, self.config.k_minus, min(self.config.k_plus, self.cf.depth))
        session.write_csv(["k", "factor", "partial"], [[s.k, s.factor, s.partial] for s in steps])

    def _run_residue_arcs(self, session: RunSession):
        cf = self.cf
        k_minus = self.config.k_minus
        arcs = residue_arcs(cf, k_minus)
        mismatches = ambiguous = 0
        for n in range(self.config.N):
            try:
                located = arcs.locate(cf.multiple(n))
            except BoundaryAmbiguousError:
                ambiguous += 1
                continue
            mismatches += located != residue(n, cf, k_minus)
        delta = self.config.delta_value
        approximations = []
        for approx in arc_family(cf, k_minus, delta):
            approximations.append({
                "r": approx.r,
                "degree": approx.degree,
                "sup_error_bound": approx.sup_error,
                "sup_error_measured": verify_arc_approx(approx),
                "exceptional_length": approx.exceptional_length,
            })
        results = {
            "k_minus": k_minus,
            "arcs": [{"r": a.r, "lo": str(a.lo), "length": str(a.length)} for a in arcs.arcs],
            "checked": self.config.N,
            "mismatches": mismatches,
            "ambiguous": ambiguous,
            "delta": str(delta),
            "approximations": approximations,
            "coefficient_bound": coefficient_bound(cf, k_minus, delta),
        }
        session.write_json(results)

    def _run_mu_sieve(self, session: RunSession):
        table = sieve_mu(self.config.N)
        path = save_table(table, session.report_path("mutb"))
        session.written.append(path)
        counts = {str(v): int(np.count_nonzero(table.values[1:] == v)) for v in (-1, 0, 1)}
        session.write_json({"N": table.N, "mertens": table.mertens(), "counts": counts})

    def _run_davenport(self, session: RunSession):
        N = self.config.N
        table = sieve_mu(N)
        sizes = sorted({size for size in (N // 100, N // 10, N) if size >= 1})
        rows = []
        for name in self.config.beta_values:
            beta = beta_value(name, self.cf, self.config.precision)
            rows += [[size, "", *beta_columns(name, beta), davenport_avg(table, size, beta)] for size in sizes]
        session.write_csv(CORRELATION_COLUMNS, rows)

    def _run_mrt_corr(self, session: RunSession):
        N = self.config.N
        Rs = self.config.R_values
        table = sieve_mu(N + max(Rs))
        rows = []
        for name in self.config.beta_values:
            beta = beta_value(name, self.cf, self.config.precision)
            rows += [[N, R, *beta_columns(name, beta), short_interval_corr(table, N, R, beta)] for R in Rs]
        session.write_csv(CORRELATION_COLUMNS, rows)

    def _run_disjointness(self, session: RunSession):
        cfg = self.config
        T = self.system
        f = TestFunction(cfg.zeta1, cfg.zeta2)
        table = sieve_mu(cfg.N)
        sizes = sorted({size for size in (cfg.N // 100, cfg.N // 10, cfg.N) if size >= 1})
        ones = np.ones(cfg.N + 1)
        rows = []
        points = self._points(session, cfg.samples)
        for i, (x, y) in enumerate(points):
            values = disjointness_profile(T, x, y, f, table, sizes)
            control = disjointness_profile(T, x, y, f, ones, sizes)
            rows += [[i, size, values[size], control[size]] for size in sizes]
            self._progress(i + 1, len(points), f"Disjointness at point {i + 1}")
        session.write_csv(["point", "N", "value", "control"], rows)

    def _run_window_decomp(self, session: RunSession):
        cfg = self.config
        T = self.system
        f = TestFunction(cfg.zeta1, cfg.zeta2)
        Q = T.cf.q[cfg.k_plus + 1]
        table = sieve_mu(cfg.N + Q)
        slack = window_decomp_slack(T, f, cfg.N, cfg.k_minus, cfg.k_plus)
        rows = []
        points = self._points(session, cfg.samples)
        for i, (x, y) in enumerate(points):
            full = disjointness_profile(T, x, y, f, table, [cfg.N])[cfg.N]
            window = window_decomp_stat(T, x, y, f, table, cfg.N, cfg.k_minus, cfg.k_plus)
            rows.append([i, full, window, slack, full <= window + slack])
            self._progress(i + 1, len(points), f"Window decomposition at point {i + 1}")
        session.write_csv(["point", "disjointness", "window", "slack", "holds"], rows)


def _loglog_slope(xs, ys) -> float:
    """Least squares slope of log y against log x over the positive entries"""
    pairs = [(math.log(x), math.log(y)) for x, y in zip(xs, ys) if y > 0]
    if len(pairs) < 2:
        return float("nan")
    lx, ly = np.array(pairs).T
    return float(np.polyfit(lx, ly, 1)[0])

"""
Skew Product Dynamics - Fourier models, resonant frequencies, Birkhoff sums and the φ ladder

T(x, y) = (x + α, y + h(x)) with h a real trigonometric polynomial. Birkhoff sums are returned as
an exact linear part nĥ(0) plus a float oscillatory part, so large n never costs bits of ĥ(0).
"""

import cmath
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import mpmath
import numpy as np

from config import Config
from core.cf_core import (
    PHASE_GRID_ERROR,
    CirclePoint,
    ContinuedFraction,
    Number,
    PrecisionError,
    ValidationError,
    circle_distance,
    phase_grid,
    phase_ratio,
    signed_phase,
    to_fraction,
    unit,
)
from core.ostrowski import DigitWindow, OstrowskiDigits, encode_int, sample_interval

logger = logging.getLogger(__name__)

EPS = 2.0**-52

Digits = Union[OstrowskiDigits, Mapping[int, int]]


@dataclass(frozen=True)
class BirkhoffSum:
    """Exact linear part plus float oscillatory part, with a rounding bound on the latter"""

    linear: Fraction
    osc: float
    err: float = 0.0

    @property
    def value(self) -> float:
        return float(self.linear) + self.osc

    @property
    def mod1(self) -> float:
        return (float(self.linear % 1) + self.osc) % 1.0

    def __add__(self, other: "BirkhoffSum") -> "BirkhoffSum":
        return BirkhoffSum(self.linear + other.linear, self.osc + other.osc, self.err + other.err)

    def __sub__(self, other: "BirkhoffSum") -> "BirkhoffSum":
        return BirkhoffSum(self.linear - other.linear, self.osc - other.osc, self.err + other.err)

    def __neg__(self) -> "BirkhoffSum":
        return BirkhoffSum(-self.linear, -self.osc, self.err)

    def __abs__(self) -> float:
        return abs(float(self.linear) + self.osc)

    def circle_gap(self, other: "BirkhoffSum") -> float:
        """‖self - other‖ on the circle"""
        diff = self - other
        return circle_distance(float(diff.linear % 1) + diff.osc)


@dataclass(frozen=True)
class FourierModel:
    """
    Finitely supported Fourier coefficients; ĥ(0) is held exactly in mean

    decay_const defaults to the smallest C with |ĥ(m)| <= C|m|^-τ over the stored coefficients.
    """

    coeff: Dict[int, complex]
    tau: Fraction
    mean: Fraction = Fraction(0)
    decay_const: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "tau", to_fraction(self.tau))
        object.__setattr__(self, "mean", to_fraction(self.mean))
        if self.tau <= 0:
            raise ValidationError(f"decay exponent must be positive, got {self.tau}")
        if 0 in self.coeff:
            raise ValidationError("store ĥ(0) exactly in mean, not in coeff")
        coeff = {m: complex(c) for m, c in self.coeff.items() if c != 0}
        object.__setattr__(self, "coeff", coeff)
        tau = float(self.tau)
        needed = max((math.exp(math.log(abs(c)) + tau * math.log(abs(m))) for m, c in coeff.items()), default=0.0)
        if self.decay_const is None:
            object.__setattr__(self, "decay_const", needed)
        elif needed > self.decay_const * (1 + 1e-9) + 1e-300:
            raise ValidationError(f"coefficients violate |ĥ(m)| <= {self.decay_const}|m|^-{self.tau}")

    @property
    def is_real(self) -> bool:
        for m, c in self.coeff.items():
            other = self.coeff.get(-m, 0j)
            if abs(other - c.conjugate()) > 1e-12 * max(abs(c), 1e-300):
                return False
        return True

    def support(self) -> List[int]:
        return sorted(self.coeff)

    def positive_terms(self) -> List[Tuple[int, complex]]:
        return sorted((m, c) for m, c in self.coeff.items() if m > 0)

    def evaluate(self, x: CirclePoint) -> float:
        """h(x) for a real model"""
        total = sum(2 * (c * unit(m * x.value, x.bits)).real for m, c in self.positive_terms())
        return float(self.mean) + total

    def restrict(self, keep) -> "FourierModel":
        """Sub-model with the coefficients m where keep(m) holds; the mean is kept"""
        return FourierModel({m: c for m, c in self.coeff.items() if keep(m)}, self.tau, self.mean)

    def to_json(self) -> List[dict]:
        rows = [{"m": 0, "re": float(self.mean), "im": 0.0, "exact": str(self.mean)}]
        rows += [{"m": m, "re": c.real, "im": c.imag} for m, c in sorted(self.coeff.items())]
        return rows

    @classmethod
    def from_json(cls, rows: Sequence[dict], tau: Number) -> "FourierModel":
        mean = Fraction(0)
        coeff = {}
        for row in rows:
            if row["m"] == 0:
                mean = Fraction(row.get("exact", repr(row["re"])))
            else:
                coeff[int(row["m"])] = complex(row["re"], row["im"])
        return cls(coeff, to_fraction(tau), mean)


class ScaleEntry(NamedTuple):
    k: int
    q: int
    a: int


@dataclass(frozen=True)
class ResonantSet:
    """Scales k with q_{k+1} > q_k^(τ/2) and their frequencies ±m_k q_k, 1 <= m_k <= a_k"""

    entries: Tuple[ScaleEntry, ...]
    tau: Fraction

    @property
    def ks(self) -> List[int]:
        return [e.k for e in self.entries]

    def frequencies(self, cap: Optional[int] = None) -> set:
        found = set()
        for e in self.entries:
            for m_k in range(1, (e.a if cap is None else min(e.a, cap)) + 1):
                found.update((m_k * e.q, -m_k * e.q))
        return found

    def contains(self, m: int) -> bool:
        m = abs(m)
        return m != 0 and any(m % e.q == 0 and m // e.q <= e.a for e in self.entries)


def resonant_set(cf: ContinuedFraction, tau: Number, depth: Optional[int] = None) -> ResonantSet:
    """Exact resonance test on k = 1..depth (default: every k with q_{k+1} known)"""
    depth = cf.depth if depth is None else depth
    if depth > cf.depth:
        raise ValidationError(f"resonance up to k={depth} needs q_{depth + 1}; known depth is {cf.depth}")
    entries = tuple(ScaleEntry(k, cf.q[k], cf.a(k)) for k in range(1, depth + 1) if cf.is_resonant(k, tau))
    return ResonantSet(entries, to_fraction(tau))


def all_scales(cf: ContinuedFraction, first: int = 2, last: Optional[int] = None) -> Tuple[ScaleEntry, ...]:
    """Every scale in [first, last], resonant or not"""
    last = cf.depth if last is None else last
    return tuple(ScaleEntry(k, cf.q[k], cf.a(k)) for k in range(first, last + 1))


def synth_h(
    M: Union[ResonantSet, Iterable[ScaleEntry]],
    tau: Number,
    seed: int,
    amplitude: Number,
    multiplier_cap: int = Config.MULTIPLIER_CAP,
    mean: Number = 0,
    random_phases: bool = True,
) -> FourierModel:
    """
    Real model with |ĥ(±m_k q_k)| = amplitude·(m_k q_k)^-τ and seeded random phases

    Args:
        M: Resonant set or explicit scales
        tau: Decay exponent
        seed: Seed for the phases
        amplitude: Decay constant of the result
        multiplier_cap: Largest m_k used; partial quotients can be astronomically large
        mean: Exact ĥ(0)
        random_phases: Zero phases (pure cosines) when False

    Returns:
        FourierModel with decay_const = amplitude
    """
    entries = M.entries if isinstance(M, ResonantSet) else tuple(M)
    tau = to_fraction(tau)
    amp = float(to_fraction(amplitude))
    rng = np.random.default_rng(seed)
    coeff: Dict[int, complex] = {}
    for entry in entries:
        for m_k in range(1, min(entry.a, multiplier_cap) + 1):
            m = m_k * entry.q
            phase = float(rng.random()) if random_phases else 0.0
            if m in coeff:
                continue
            c = amp * math.exp(-float(tau) * math.log(m)) * cmath.exp(2j * math.pi * phase)
            coeff[m] = c
            coeff[-m] = c.conjugate()
    return FourierModel(coeff, tau, to_fraction(mean), decay_const=amp)


@dataclass(frozen=True)
class CoboundarySpec:
    """h = g(x + α) - g(x) + c + jα with winding j"""

    g: FourierModel
    c: Fraction
    winding: int = 0


@dataclass(frozen=True)
class SkewProduct:
    """T(x, y) = (x + α, y + h(x)) over the working rotation number of cf"""

    cf: ContinuedFraction
    h: FourierModel
    coboundary: Optional[CoboundarySpec] = None
    by_scale: Dict[int, List[Tuple[int, complex]]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.h.is_real:
            raise ValidationError("h must be real valued: ĥ(-m) must equal the conjugate of ĥ(m)")
        object.__setattr__(self, "by_scale", _assign_scales(self.h, self.cf))

    @property
    def precision(self) -> int:
        return self.cf.precision_bits

    def hypothesis_compliant(self, M: Optional[ResonantSet] = None) -> bool:
        """Support of ĥ inside M ∪ {0}"""
        M = M or resonant_set(self.cf, self.h.tau)
        return all(M.contains(m) for m in self.h.coeff)

    def scale_terms(self, k: int) -> List[Tuple[int, complex]]:
        return self.by_scale.get(k, [])


def _assign_scales(h: FourierModel, cf: ContinuedFraction) -> Dict[int, List[Tuple[int, complex]]]:
    # each positive frequency goes to the largest k with m = m_k q_k, 1 <= m_k <= a_k
    scales: Dict[int, List[Tuple[int, complex]]] = {}
    for m, c in h.positive_terms():
        for k in range(cf.depth, 0, -1):
            if m % cf.q[k] == 0 and m // cf.q[k] <= cf.a(k):
                scales.setdefault(k, []).append((m, c))
                break
    return scales


def make_coboundary(g: FourierModel, c: Number, cf: ContinuedFraction, winding: int = 0) -> SkewProduct:
    """
    Skew product with ĥ(m) = ĝ(m)(e(mα) - 1) and ĥ(0) = c + winding·α

    winding j corresponds to the transfer function g(x) + jx, still continuous on the circle.
    """
    c = to_fraction(c)
    coeff = {m: ĝ * _e_minus_one(m, cf) for m, ĝ in g.coeff.items()}
    mean = c + winding * Fraction(cf.alpha_fixed, 1 << cf.precision_bits)
    h = FourierModel(coeff, g.tau, mean)
    return SkewProduct(cf, h, CoboundarySpec(g, c, winding))


def recover_g(h: FourierModel, cf: ContinuedFraction) -> FourierModel:
    """ĝ(m) = ĥ(m) / (e(mα) - 1)"""
    return FourierModel({m: c / _e_minus_one(m, cf) for m, c in h.coeff.items()}, h.tau)


def _e_minus_one(m: int, cf: ContinuedFraction) -> complex:
    s = signed_phase(m * cf.alpha_fixed, cf.precision_bits)
    if s == 0.0:
        raise PrecisionError(f"mα vanishes at {cf.precision_bits} bits for m={m}; raise the precision")
    return 2j * math.sin(math.pi * s) * cmath.exp(1j * math.pi * s)


def psi_conjugator(h: FourierModel, cf: ContinuedFraction, eps: float) -> Tuple[FourierModel, float]:
    """
    Transfer function ψ removing the non-resonant frequencies of h

    ψ̂(m) = ĥ(m) / (e(mα) - 1) for m outside M ∪ {0}, kept while |m| < q_{k*} where k* is the first
    scale whose tail bound is below eps.

    Returns:
        (ψ model, certified tail bound)
    """
    if eps <= 0:
        raise ValidationError(f"tolerance must be positive, got {eps}")
    M = resonant_set(cf, h.tau)
    k_star = None
    for k in range(1, cf.depth + 2):
        bound = _conjugator_tail(cf.q[k], h.tau, h.decay_const)
        if bound < eps:
            k_star = k
            break
    if k_star is None:
        raise PrecisionError(
            f"the {cf.depth} known quotients cannot certify a tail below {eps}; supply more quotients"
        )
    limit = cf.q[k_star]
    coeff = {}
    for m, c in h.coeff.items():
        if M.contains(m) or abs(m) >= limit:
            continue
        _require_separated(m, cf)
        coeff[m] = c / _e_minus_one(m, cf)
    logger.debug(f"ψ keeps {len(coeff)} frequencies below q_{k_star} = {limit}")
    return FourierModel(coeff, h.tau - 2), bound


def kronecker_conjugator(h: FourierModel, cf: ContinuedFraction) -> FourierModel:
    """ψ over every m != 0; T is conjugate to (x + α, y + ĥ(0)) through (x, y - ψ(x))"""
    coeff = {}
    for m, c in h.coeff.items():
        _require_separated(m, cf)
        coeff[m] = c / _e_minus_one(m, cf)
    return FourierModel(coeff, h.tau - 2)


def conjugacy_residual(h: FourierModel, psi: FourierModel, cf: ContinuedFraction) -> float:
    """max over m != 0 of |ĥ(m) - ψ̂(m)(e(mα) - 1) - ĥ₁(m)| with ĥ₁ the part of ĥ on M"""
    M = resonant_set(cf, h.tau)
    worst = 0.0
    for m in set(h.coeff) | set(psi.coeff):
        resonant = h.coeff.get(m, 0j) if M.contains(m) else 0j
        coboundary = psi.coeff.get(m, 0j) * _e_minus_one(m, cf) if m in psi.coeff else 0j
        worst = max(worst, abs(h.coeff.get(m, 0j) - coboundary - resonant))
    return worst


def _require_separated(m: int, cf: ContinuedFraction):
    # ‖mα‖ must stay clear of zero across the whole α enclosure
    gap = abs(signed_phase(m * cf.alpha_fixed, cf.precision_bits))
    if gap <= abs(m) * float(cf.alpha.width):
        raise PrecisionError(f"‖{m}α‖ is not separated from 0 by the α enclosure; supply more quotients")


def _conjugator_tail(q: int, tau: Fraction, const: float) -> float:
    if const == 0:
        return 0.0
    t = float(tau)
    log_q = math.log(q)
    spread = math.exp((1 - t) * log_q) + math.exp((2 - t) * log_q) / (t - 2)
    resonant = float(mpmath.zeta(t + 1)) * 2 * math.exp(-t / 2 * log_q) / (1 - 2 ** (-t / 2))
    return const * (spread + resonant)


def _check_iterates(n: int):
    if abs(n) > Config.MAX_ITERATES:
        raise ValidationError(f"|n| = {abs(n)} exceeds the iterate limit {Config.MAX_ITERATES}")


def _closed_osc(h: FourierModel, cf: ContinuedFraction, x_value: int, n: int) -> Tuple[float, float]:
    bits = cf.precision_bits
    a = cf.alpha_fixed
    total = 0.0
    scale = 0.0
    for m, c in h.positive_terms():
        ratio = phase_ratio(n * m * a, m * a, bits)
        total += 2 * (c * ratio * unit(m * x_value, bits)).real
        scale += 2 * abs(c) * (abs(ratio) + 1)
    return total, 8 * EPS * scale


def birkhoff_closed(T: SkewProduct, x: CirclePoint, n: int) -> BirkhoffSum:
    """
    H_n(x) = nĥ(0) + Σ ĥ(m)(e(nmα) - 1)/(e(mα) - 1)e(mx), valid for every integer n

    Args:
        T: Skew product
        x: Base point
        n: Number of iterates, negative allowed

    Returns:
        BirkhoffSum with its rounding bound
    """
    x._check_bits(T.precision)
    osc, err = _closed_osc(T.h, T.cf, x.value, n)
    return BirkhoffSum(n * T.h.mean, osc, err)


def orbit_osc_values(T: SkewProduct, x_value: int, count: int) -> np.ndarray:
    """h(x + lα) - ĥ(0) for l = 0..count-1"""
    bits = T.precision
    a = T.cf.alpha_fixed
    values = np.zeros(count)
    for m, c in T.h.positive_terms():
        angle = 2 * np.pi * phase_grid(m * x_value, m * a, count, bits)
        values += 2 * (c.real * np.cos(angle) - c.imag * np.sin(angle))
    return values


def birkhoff_exact(T: SkewProduct, x: CirclePoint, n: int) -> BirkhoffSum:
    """
    H_n(x) = Σ_{l=0}^{n-1} h(x + lα) by direct summation; H_n(x) = -H_{-n}(x + nα) for n < 0

    The orbit is generated in blocks, each anchored exactly on the fixed point integers.
    """
    _check_iterates(n)
    x._check_bits(T.precision)
    if n < 0:
        start = CirclePoint((x.value + n * T.cf.alpha_fixed) % (1 << T.precision), T.precision, x.err_ulps)
        return -birkhoff_exact(T, start, -n)
    total = 0.0
    block = Config.REANCHOR_INTERVAL
    for offset in range(0, n, block):
        count = min(block, n - offset)
        total += float(orbit_osc_values(T, x.value + offset * T.cf.alpha_fixed, count).sum())
    weight = sum(2 * abs(c) for _, c in T.h.positive_terms())
    err = n * weight * (2 * math.pi * PHASE_GRID_ERROR + 4 * EPS)
    if err > Config.ERROR_BUDGET:
        raise PrecisionError(f"Birkhoff error bound {err:.3g} exceeds the budget {Config.ERROR_BUDGET}; reduce n")
    return BirkhoffSum(n * T.h.mean, total, err)


def birkhoff_profile(T: SkewProduct, x: CirclePoint, count: int) -> np.ndarray:
    """
    Oscillatory parts of H_n(x) for n = 0..count

    Summed incrementally along the orbit and re-anchored from the closed form every
    REANCHOR_INTERVAL steps.
    """
    _check_iterates(count)
    heights = np.zeros(count + 1)
    block = Config.REANCHOR_INTERVAL
    for start in range(0, count, block):
        size = min(block, count - start)
        anchor, _ = _closed_osc(T.h, T.cf, x.value, start)
        steps = orbit_osc_values(T, x.value + start * T.cf.alpha_fixed, size)
        heights[start] = anchor
        heights[start + 1:start + size + 1] = anchor + np.cumsum(steps)
    return heights


def closed_osc_along_orbit(T: SkewProduct, x: CirclePoint, r: int, count: int) -> np.ndarray:
    """Oscillatory part of H_r(x + Lα) for L = 0..count-1"""
    bits = T.precision
    a = T.cf.alpha_fixed
    values = np.zeros(count)
    for m, c in T.h.positive_terms():
        weight = c * phase_ratio(r * m * a, m * a, bits)
        angle = 2 * np.pi * phase_grid(m * x.value, m * a, count, bits)
        values += 2 * (weight.real * np.cos(angle) - weight.imag * np.sin(angle))
    return values


def _digit_map(d: Digits) -> Dict[int, int]:
    if isinstance(d, OstrowskiDigits):
        return dict(d.digits)
    return {int(k): int(v) for k, v in d.items()}


def _window_for(digits: Dict[int, int], window: Optional[DigitWindow]) -> DigitWindow:
    if window is not None:
        return window
    support = [k for k, v in digits.items() if v]
    if not support:
        return DigitWindow(2, 2)
    return DigitWindow(min(support), max(support))


def _require_window(T: SkewProduct, window: DigitWindow):
    if window.k_plus > T.cf.depth:
        raise ValidationError(f"window reaches k={window.k_plus}; only {T.cf.depth} quotients are certified")


def approx_H1(T: SkewProduct, n_digits: Digits, x: CirclePoint, window: Optional[DigitWindow] = None) -> BirkhoffSum:
    """
    H_n^(1)(x): scale-by-scale geometric sums with phase e(m_k q_k (x + n̄_{k-1} α))

    Digits may be signed; n = Σ n_k q_k over the window.
    """
    digits = _digit_map(n_digits)
    w = _window_for(digits, window)
    _require_window(T, w)
    bits = T.precision
    a = T.cf.alpha_fixed
    osc = 0.0
    n_bar = 0
    for k in w.indices():
        n_k = digits.get(k, 0)
        q_k = T.cf.q[k]
        for m, c in T.scale_terms(k):
            ratio = phase_ratio(n_k * m * q_k * a, m * a, bits)
            osc += 2 * (c * ratio * unit(m * (x.value + n_bar * a), bits)).real
        n_bar += n_k * q_k
    return BirkhoffSum(n_bar * T.h.mean, osc)


def approx_H2(T: SkewProduct, n_digits: Digits, x_digits: Digits, window: Optional[DigitWindow] = None) -> BirkhoffSum:
    """H_n^(2)(x) = nĥ(0) + Σ_k Σ_m ĥ(m)(e((n_k + x̃_k)m q_k α) - e(x̃_k m q_k α))/(e(mα) - 1)"""
    digits = _digit_map(n_digits)
    xs = _digit_map(x_digits)
    w = _window_for(digits, window)
    _require_window(T, w)
    bits = T.precision
    a = T.cf.alpha_fixed
    osc = 0.0
    n = 0
    for k in w.indices():
        n_k = digits.get(k, 0)
        x_k = xs.get(k, 0)
        q_k = T.cf.q[k]
        for m, c in T.scale_terms(k):
            step = m * q_k * a
            osc += 2 * (c * unit(x_k * step, bits) * phase_ratio(n_k * step, m * a, bits)).real
        n += n_k * q_k
    return BirkhoffSum(n * T.h.mean, osc)


def phi_tilde(T: SkewProduct, k: int, l: int) -> BirkhoffSum:
    """φ̃_k(l) = l q_k ĥ(0) + Σ_m ĥ(m)(e(l m q_k α) - 1)/(e(mα) - 1) over the scale-k frequencies"""
    bits = T.precision
    a = T.cf.alpha_fixed
    q_k = T.cf.q[k]
    osc = sum(2 * (c * phase_ratio(l * m * q_k * a, m * a, bits)).real for m, c in T.scale_terms(k))
    return BirkhoffSum(l * q_k * T.h.mean, float(osc))


def phi_ladder_lifted(T: SkewProduct, n_digits: Digits, x_digits: Digits, window: Optional[DigitWindow] = None) -> BirkhoffSum:
    """Σ_k (φ̃_k(n_k + x̃_k) - φ̃_k(x̃_k)) without reduction"""
    digits = _digit_map(n_digits)
    xs = _digit_map(x_digits)
    w = _window_for(digits, window)
    _require_window(T, w)
    total = BirkhoffSum(Fraction(0), 0.0)
    for k in w.indices():
        n_k, x_k = digits.get(k, 0), xs.get(k, 0)
        total = total + (phi_tilde(T, k, n_k + x_k) - phi_tilde(T, k, x_k))
    return total


def phi_ladder(T: SkewProduct, n_digits: Digits, x_digits: Digits, window: Optional[DigitWindow] = None) -> float:
    """
    Σ_k (φ_k(n_k + x̃_k) - φ_k(x̃_k)) mod 1 with φ_k the a_k-periodic reduction of φ̃_k

    Requires |n_k| <= a_k and |x̃_k| <= 2a_k.
    """
    digits = _digit_map(n_digits)
    xs = _digit_map(x_digits)
    w = _window_for(digits, window)
    _require_window(T, w)
    total = BirkhoffSum(Fraction(0), 0.0)
    for k in w.indices():
        a_k = T.cf.a(k)
        n_k, x_k = digits.get(k, 0), xs.get(k, 0)
        if abs(n_k) > a_k or abs(x_k) > 2 * a_k:
            raise DigitRangeError(f"digits n_{k}={n_k}, x_{k}={x_k} exceed a_{k}={a_k} and 2a_{k}")
        total = total + (phi_tilde(T, k, (n_k + x_k) % a_k) - phi_tilde(T, k, x_k % a_k))
    return total.mod1


def truncate_model(h: FourierModel, cf: ContinuedFraction, k_plus: int) -> FourierModel:
    """h*: ĥ(0) and the frequencies m_j q_j with j <= k_plus, 1 <= |m_j| <= a_j"""
    limit = min(k_plus, cf.depth)

    def on_low_scale(m: int) -> bool:
        m = abs(m)
        return any(m % cf.q[j] == 0 and m // cf.q[j] <= cf.a(j) for j in range(1, limit + 1))

    return h.restrict(on_low_scale)


def truncated_H(T: SkewProduct, n: int, x: CirclePoint, k_plus: int) -> BirkhoffSum:
    """H*_n(x), the Birkhoff sum of the truncated model h*"""
    osc, err = _closed_osc(truncate_model(T.h, T.cf, k_plus), T.cf, x.value, n)
    return BirkhoffSum(n * T.h.mean, osc, err)


def truncation_error(T: SkewProduct, n: int, x: CirclePoint, k_plus: int) -> float:
    """|H*_n(x) - H_n(x)| evaluated directly on the dropped frequencies"""
    kept = truncate_model(T.h, T.cf, k_plus)
    dropped = T.h.restrict(lambda m: m not in kept.coeff)
    return abs(_closed_osc(dropped, T.cf, x.value, n)[0])


def step_bound(T: SkewProduct, n_digits: Digits) -> float:
    """Σ |n_k| q_k^-(τ-1)"""
    exponent = float(T.h.tau) - 1
    return sum(abs(n_k) * math.exp(-exponent * math.log(T.cf.q[k])) for k, n_k in _digit_map(n_digits).items() if n_k)


@dataclass(frozen=True)
class PhiTable:
    """
    φ_k on ℤ/a_kℤ: lifted values l q_k ĥ(0) + oscillatory part, reduced values mod 1

    Non-resonant scales keep only the linear part. Tables larger than LAZY_PHI_THRESHOLD are
    evaluated per chunk instead of stored.
    """

    k: int
    size: int
    linear_step: Fraction
    T: SkewProduct = field(repr=False, compare=False)
    osc: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    resonant: bool = True

    @property
    def lazy(self) -> bool:
        return self.osc is None

    def osc_values(self, start: int = 0, count: Optional[int] = None) -> np.ndarray:
        count = self.size - start if count is None else count
        if not self.resonant:
            return np.zeros(count)
        if self.osc is not None:
            return self.osc[start:start + count]
        return _phi_osc(self.T, self.k, start, count)

    def reduced(self, start: int = 0, count: Optional[int] = None) -> np.ndarray:
        count = self.size - start if count is None else count
        bits = self.T.precision
        step = round((self.linear_step % 1) * (1 << bits))
        linear = phase_grid(start * step, step, count, bits)
        return np.mod(linear + self.osc_values(start, count), 1.0)

    @property
    def values(self) -> np.ndarray:
        return self.reduced()

    @property
    def lifted_values(self) -> np.ndarray:
        return np.arange(self.size) * float(self.linear_step) + self.osc_values()

    def at(self, l: int) -> BirkhoffSum:
        if not self.resonant:
            return BirkhoffSum(l * self.linear_step, 0.0)
        return phi_tilde(self.T, self.k, l)

    def mean_exponential(self) -> complex:
        """E_l e(φ_k(l)) over l = 0..a_k-1"""
        total = 0j
        for start in range(0, self.size, Config.PHI_CHUNK):
            count = min(Config.PHI_CHUNK, self.size - start)
            total += np.exp(2j * np.pi * self.reduced(start, count)).sum()
        return complex(total / self.size)


def _phi_osc(T: SkewProduct, k: int, start: int, count: int) -> np.ndarray:
    bits = T.precision
    a = T.cf.alpha_fixed
    q_k = T.cf.q[k]
    values = np.zeros(count)
    for m, c in T.scale_terms(k):
        step = m * q_k * a
        s = signed_phase(m * a, bits)
        if s == 0.0:
            raise PrecisionError(f"mα vanishes at {bits} bits for m={m}; raise the precision")
        t = phase_grid(start * step, step, count, bits)
        t = t - (t >= 0.5)
        ratio = np.exp(1j * np.pi * (t - s)) * (np.sin(np.pi * t) / math.sin(math.pi * s))
        values += 2 * (c * ratio).real
    return values


def phi_table(T: SkewProduct, k: int) -> PhiTable:
    """Table of φ_k for l = 0..a_k-1; non-resonant scales carry only l q_k ĥ(0)"""
    if not 1 <= k <= T.cf.depth:
        raise ValidationError(f"k={k} outside certified range 1..{T.cf.depth}")
    size = T.cf.a(k)
    step = T.cf.q[k] * T.h.mean
    if not T.cf.is_resonant(k, T.h.tau):
        return PhiTable(k, size, step, T, np.zeros(size) if size <= Config.LAZY_PHI_THRESHOLD else None, resonant=False)
    if size > Config.LAZY_PHI_THRESHOLD:
        logger.warning(f"φ_{k} has {size} entries; evaluating lazily")
        return PhiTable(k, size, step, T)
    return PhiTable(k, size, step, T, _phi_osc(T, k, 0, size))


class DecayStep(NamedTuple):
    k: int
    factor: float
    partial: float


def product_decay(T: SkewProduct, k_minus: int, k_plus: int) -> List[DecayStep]:
    """Partial products of |E_l e(φ_k(l))| over the resonant k in [k_minus, k_plus]"""
    w = DigitWindow(k_minus, k_plus)
    _require_window(T, w)
    steps: List[DecayStep] = []
    partial = 1.0
    for k in w.indices():
        if not T.cf.is_resonant(k, T.h.tau):
            continue
        factor = abs(phi_table(T, k).mean_exponential())
        partial *= factor
        steps.append(DecayStep(k, factor, partial))
    logger.info(f"Product over {len(steps)} resonant scales ends at {partial:.4g}")
    return steps


def luzin_defect(T: SkewProduct, n_digits: Digits) -> float:
    """‖nĥ(0)‖ for digits with |n_k| <= min(q_k^((τ-1)/2), a_k)"""
    digits = _digit_map(n_digits)
    exponent = (float(T.h.tau) - 1) / 2
    n = 0
    for k, n_k in digits.items():
        limit = min(math.exp(exponent * math.log(T.cf.q[k])), T.cf.a(k))
        if abs(n_k) > limit:
            raise DigitRangeError(f"|n_{k}| = {abs(n_k)} exceeds min(q_{k}^((τ-1)/2), a_{k}) = {limit:.4g}")
        n += n_k * T.cf.q[k]
    frac = (n * T.h.mean) % 1
    return float(min(frac, 1 - frac))


def increment_residual(T: SkewProduct, n_digits: Digits, shifts: Mapping[int, int]) -> float:
    """‖Σ_k (φ̃_k(n_k) - φ̃_k(n_k + b_k a_k))‖ for |b_k| <= 8 and |n_k| <= 4a_k"""
    digits = _digit_map(n_digits)
    total = BirkhoffSum(Fraction(0), 0.0)
    for k in sorted(set(digits) | set(shifts)):
        n_k, b_k, a_k = digits.get(k, 0), shifts.get(k, 0), T.cf.a(k)
        if abs(b_k) > 8 or abs(n_k) > 4 * a_k:
            raise DigitRangeError(f"shift b_{k}={b_k} or digit n_{k}={n_k} outside |b| <= 8, |n| <= 4a_{k}")
        total = total + (phi_tilde(T, k, n_k) - phi_tilde(T, k, n_k + b_k * a_k))
    return circle_distance(float(total.linear % 1) + total.osc)


def cocycle_tail_bound(T: SkewProduct, k_minus: int) -> float:
    """
    sup over x and s in I_{k_-}^∞ of |H_s(x) - sĥ(0)|

    Uses ‖smα‖ <= |m||θ_{k_- - 1}| and |e(u) - 1| <= min(2, 2π‖u‖).
    """
    theta = abs(float(T.cf.theta_exact(k_minus - 1)))
    bound = 0.0
    for m, c in T.h.positive_terms():
        bound += 2 * abs(c) * min(2.0, 2 * math.pi * m * theta) / abs(_e_minus_one(m, T.cf))
    return bound


@dataclass(frozen=True)
class VarianceReport:
    """Mean z of X = e(Σφ_k(n_k)), its variance and the frequency of |X - z| >= δ"""

    z: complex
    variance: float
    exceed_prob: float
    samples: int


def ensemble_variance(T: SkewProduct, window: DigitWindow, delta: float, samples: int, seed: int) -> VarianceReport:
    """
    Statistic of X over the ensemble B of the window

    Digits are independent under B, so z is the product of the table means and Var X = 1 - |z|^2
    exactly; the deviation probability is estimated from seeded draws.
    """
    _require_window(T, window)
    ks = [k for k in window.indices() if T.cf.is_resonant(k, T.h.tau)]
    tables = [phi_table(T, k) for k in ks]
    z = complex(np.prod([t.mean_exponential() for t in tables])) if tables else 1 + 0j
    rng = np.random.default_rng(seed)
    total = np.zeros(samples)
    for table in tables:
        picks = rng.integers(0, table.size, size=samples)
        if table.lazy:
            total += np.array([table.at(int(l)).mod1 for l in picks])
        else:
            total += table.values[picks]
    X = np.exp(2j * np.pi * total)
    exceed = float(np.mean(np.abs(X - z) >= delta))
    return VarianceReport(z, max(0.0, 1 - abs(z) ** 2), exceed, samples)


def interval_variance(T: SkewProduct, window: DigitWindow, delta: float, samples: int, seed: int) -> VarianceReport:
    """Statistic of X over uniform n in I_{k_-}^{k_+}; z is the empirical mean"""
    _require_window(T, window)
    ks = [k for k in window.indices() if T.cf.is_resonant(k, T.h.tau)]
    tables = {k: phi_table(T, k) for k in ks}
    rng = np.random.default_rng(seed)
    draws = sample_interval(window, T.cf, rng, samples)
    X = np.empty(samples, dtype=complex)
    for i, n in enumerate(draws):
        digits = encode_int(n, T.cf)
        phase = 0.0
        for k, table in tables.items():
            phase += table.at(digits[k] % table.size).mod1
        X[i] = cmath.exp(2j * math.pi * phase)
    z = complex(X.mean())
    variance = float(np.mean(np.abs(X - z) ** 2))
    return VarianceReport(z, variance, float(np.mean(np.abs(X - z) >= delta)), samples)


class DigitRangeError(ValidationError):
    """Digits outside the range an approximation is stated for"""

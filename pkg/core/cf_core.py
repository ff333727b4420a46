"""
Continued Fractions - Partial quotients, convergents, θ enclosures and fixed-point circle arithmetic

Indexing: p_0 = 1, q_0 = 0 seed the recurrence, p_1 = 0, q_1 = 1, p_2 = 1, q_2 = a_1 and
p_{k+1} = a_k p_k + p_{k-1}, q_{k+1} = a_k q_k + q_{k-1}. θ_k = q_k α - p_k, so θ_0 = -1,
θ_1 = α and sign(θ_k) = (-1)^(k+1). This is shifted by one against the usual h_k / k_k notation:
p_{k+1} / q_{k+1} is the convergent [0; a_1, ..., a_k].

All circle arithmetic runs on P-bit fixed point integers. The working rotation number α_P is the
P-bit dyadic closest to the midpoint of the α enclosure; it has the same first K partial quotients,
so every multiple of it is computed exactly.
"""

import cmath
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple, Union

import mpmath
import numpy as np

from config import Config

logger = logging.getLogger(__name__)

Number = Union[int, Fraction, str, float]

# Absolute error of a phase produced by phase_grid, in turns
PHASE_GRID_ERROR = 2.0**-52


def to_fraction(value: Number) -> Fraction:
    """Exact rational from an int, Fraction, decimal string or float (read as its decimal repr)"""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, mpmath.mpf):
        man, exp = value.man_exp
        return Fraction(int(man)) * Fraction(2) ** int(exp)
    try:
        return Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError):
        raise ValidationError(f"not a decimal or p/q number: '{value}'")


@dataclass(frozen=True)
class Interval:
    """Open interval (lo, hi) with exact rational endpoints"""

    lo: Fraction
    hi: Fraction
    bits: int = 0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValidationError(
                f"degenerate enclosure [{self.lo}, {self.hi}]; a rational point has no infinite expansion"
            )

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def midpoint(self) -> Fraction:
        return (self.lo + self.hi) / 2

    @property
    def sign(self) -> int:
        """+1 or -1 when the interval is sign-definite, 0 when it straddles zero"""
        if self.lo >= 0:
            return 1
        if self.hi <= 0:
            return -1
        return 0

    def abs_bounds(self) -> Tuple[Fraction, Fraction]:
        if self.sign == 0:
            return Fraction(0), max(-self.lo, self.hi)
        return (self.lo, self.hi) if self.sign > 0 else (-self.hi, -self.lo)

    def contains(self, value: Fraction) -> bool:
        return self.lo < value < self.hi

    def scale(self, factor: int, shift: int = 0) -> "Interval":
        """factor·(lo, hi) + shift for a positive integer factor"""
        return Interval(factor * self.lo + shift, factor * self.hi + shift, self.bits)

    def to_json(self) -> dict:
        return {"lo": str(self.lo), "hi": str(self.hi), "bits": self.bits}


def enclosure_from_decimal(text: str, bits: int = 0) -> Interval:
    """Open enclosure of a decimal string: its value ± half a unit in the last place"""
    text = text.strip()
    value = to_fraction(text)
    mantissa = text.lower().split("e", 1)[0]
    digits = len(mantissa.split(".", 1)[1]) if "." in mantissa else 0
    half = Fraction(1, 2 * 10**digits)
    if "e" in text.lower():
        half *= Fraction(10) ** int(text.lower().split("e", 1)[1])
    return Interval(value - half, value + half, bits)


def enclosure_from_mpf(value: "mpmath.mpf") -> Interval:
    """Open enclosure of an mpmath value: its binary value ± one unit of its last mantissa bit"""
    man, exp = mpmath.mpf(value).man_exp
    # gmpy backends hand back mpz; Fractions and quotients must stay plain ints
    ulp = Fraction(2) ** int(exp)
    center = int(man) * ulp
    return Interval(center - ulp, center + ulp, mpmath.mp.prec)


@dataclass(frozen=True)
class PartialQuotients:
    """Known partial quotients a_1, ..., a_K"""

    a: Tuple[int, ...]

    def __post_init__(self):
        if len(self.a) < 2:
            raise ValidationError(f"need at least 2 partial quotients, got {len(self.a)}")
        for k, a_k in enumerate(self.a, start=1):
            if not isinstance(a_k, int) or a_k < 1:
                raise ValidationError(f"partial quotient a_{k} must be a positive integer, got {a_k!r}")

    @property
    def K(self) -> int:
        return len(self.a)

    def __getitem__(self, k: int) -> int:
        """a_k with 1-based k"""
        if not 1 <= k <= len(self.a):
            raise IndexError(f"a_{k} outside known range 1..{len(self.a)}")
        return self.a[k - 1]

    def to_json(self) -> List[str]:
        return [str(a_k) for a_k in self.a]

    @classmethod
    def from_json(cls, items: Sequence[str]) -> "PartialQuotients":
        return cls(tuple(int(item) for item in items))


def convergents(a: Sequence[int]) -> Tuple[List[int], List[int]]:
    """Numerators and denominators p_0..p_{K+1}, q_0..q_{K+1} for quotients a_1..a_K"""
    p = [1, 0]
    q = [0, 1]
    for a_k in a:
        p.append(a_k * p[-1] + p[-2])
        q.append(a_k * q[-1] + q[-2])
    return p, q


def sandwich(a: Sequence[int]) -> Interval:
    """The open set of α sharing the partial quotients a: between p_{K+1}/q_{K+1} and the mediant"""
    p, q = convergents(a)
    end = Fraction(p[-1], q[-1])
    mediant = Fraction(p[-1] + p[-2], q[-1] + q[-2])
    return Interval(min(end, mediant), max(end, mediant))


def certified_depth(a: Sequence[int], precision_bits: int) -> int:
    """Largest K ≤ len(a) whose sandwich is at least four ulps wide at the given precision"""
    p, q = convergents(a)
    depth = 0
    for K in range(1, len(a) + 1):
        if 4 * q[K + 1] * (q[K + 1] + q[K]) > (1 << precision_bits):
            break
        depth = K
    return depth


def required_precision_bits(a: Sequence[int]) -> int:
    """Smallest multiple of 64 bits that certifies every quotient of a"""
    _, q = convergents(a)
    needed = (q[-1] * (q[-1] + q[-2])).bit_length() + 2
    return max(Config.MIN_PRECISION_BITS, -(-needed // 64) * 64)


def is_resonant(q_k: int, q_next: int, tau: Number) -> bool:
    """
    Exact resonance test q_{k+1} > q_k^(τ/2)

    For τ = num/den the test is q_{k+1}^(2·den) > q_k^num in integers. When those powers would be
    unreasonably large the comparison falls back to logarithms at a precision that separates them.
    """
    tau = to_fraction(tau)
    num, den = tau.numerator, tau.denominator
    if num * q_k.bit_length() <= 1 << 20 and 2 * den * q_next.bit_length() <= 1 << 20:
        return q_next ** (2 * den) > q_k**num
    with mpmath.workprec(2 * max(q_k.bit_length(), q_next.bit_length()) + 128):
        gap = 2 * den * mpmath.log(q_next) - num * mpmath.log(q_k)
    return gap > 0


@dataclass(frozen=True)
class CirclePoint:
    """
    Point of the circle as a P-bit fixed point fraction

    value is in [0, 2^P); err_ulps bounds the distance to the exact point in units of 2^-P.
    """

    value: int
    bits: int
    err_ulps: int = 0

    def __post_init__(self):
        if not 0 <= self.value < (1 << self.bits):
            object.__setattr__(self, "value", self.value % (1 << self.bits))
        if self.err_ulps >= 1 << (self.bits - self.bits // 2):
            raise PrecisionError(
                f"accumulated error of {self.err_ulps} ulps exceeds 2^-{self.bits // 2}; raise the precision"
            )

    @property
    def err(self) -> Fraction:
        return Fraction(self.err_ulps, 1 << self.bits)

    @classmethod
    def zero(cls, bits: int) -> "CirclePoint":
        return cls(0, bits)

    @classmethod
    def from_fraction(cls, value: Number, bits: int) -> "CirclePoint":
        """Nearest P-bit point; one ulp of error unless the value is dyadic at this precision"""
        value = to_fraction(value)
        scaled = value * (1 << bits)
        rounded = round(scaled)
        return cls(rounded % (1 << bits), bits, 0 if scaled == rounded else 1)

    @classmethod
    def from_decimal(cls, text: str, bits: int) -> "CirclePoint":
        return cls.from_fraction(to_fraction(text), bits)

    @classmethod
    def random(cls, rng: np.random.Generator, bits: int) -> "CirclePoint":
        """Uniform P-bit point drawn from a numpy generator"""
        words = rng.integers(0, 1 << 32, size=-(-bits // 32), dtype=np.uint64)
        value = 0
        for word in words:
            value = (value << 32) | int(word)
        return cls(value >> (32 * len(words) - bits), bits)

    def to_fraction(self) -> Fraction:
        return Fraction(self.value, 1 << self.bits)

    def __float__(self) -> float:
        return self.value / (1 << self.bits)

    def signed(self) -> float:
        """Representative in [-1/2, 1/2) as a float"""
        return signed_phase(self.value, self.bits)

    def representative(self, cf: "ContinuedFraction") -> Fraction:
        """Representative in [-α, 1 - α) with α the working rotation number of cf"""
        self._check_bits(cf.precision_bits)
        if self.value >= (1 << self.bits) - cf.alpha_fixed:
            return Fraction(self.value - (1 << self.bits), 1 << self.bits)
        return self.to_fraction()

    def _check_bits(self, bits: int):
        if bits != self.bits:
            raise ValidationError(f"precision mismatch: {self.bits} bits against {bits} bits")


def circle_add(x: CirclePoint, y: CirclePoint) -> CirclePoint:
    """x + y mod 1; errors add"""
    x._check_bits(y.bits)
    return CirclePoint((x.value + y.value) % (1 << x.bits), x.bits, x.err_ulps + y.err_ulps)


def circle_neg(x: CirclePoint) -> CirclePoint:
    return CirclePoint((-x.value) % (1 << x.bits), x.bits, x.err_ulps)


def circle_mul_int(x: CirclePoint, n: int) -> CirclePoint:
    """n·x mod 1; the error scales by |n|"""
    return CirclePoint((x.value * n) % (1 << x.bits), x.bits, x.err_ulps * abs(n))


def signed_phase(value: int, bits: int) -> float:
    """value / 2^P reduced to [-1/2, 1/2), correctly rounded to a float"""
    value %= 1 << bits
    if value >= 1 << (bits - 1):
        value -= 1 << bits
    return value / (1 << bits)


def circle_distance(value: float) -> float:
    """‖value‖, the distance to the nearest integer"""
    return abs(value - round(value))


def phase_ratio(t: int, s: int, bits: int) -> complex:
    """
    (e(t) - 1) / (e(s) - 1) for fixed point phases t, s

    Uses e(u) - 1 = 2i·sin(πu)·e(u/2) on signed representatives so that small phases keep their
    relative precision.
    """
    ts = signed_phase(t, bits)
    ss = signed_phase(s, bits)
    if ss == 0.0:
        raise PrecisionError("a frequency multiple of α vanishes at this precision; raise the precision")
    return cmath.exp(1j * math.pi * (ts - ss)) * (math.sin(math.pi * ts) / math.sin(math.pi * ss))


def unit(value: int, bits: int) -> complex:
    """e(value / 2^P)"""
    return cmath.exp(2j * math.pi * signed_phase(value, bits))


def phase_grid(base: int, step: int, count: int, bits: int) -> np.ndarray:
    """
    Phases (base + l·step) / 2^P mod 1 for l = 0..count-1 as floats in [0, 1)

    The fixed point products are formed exactly on a coarse and a fine table of Python integers,
    truncated to their top 64 bits and combined with wrapping uint64 addition. Absolute error is at
    most PHASE_GRID_ERROR regardless of l.
    """
    if count <= 0:
        return np.zeros(0)
    modulus = 1 << bits
    shift = bits - 64
    block = max(1, math.isqrt(count))
    fine = []
    current = 0
    for _ in range(block):
        fine.append(current >> shift)
        current = (current + step) % modulus
    coarse = []
    stride = (block * step) % modulus
    current = base % modulus
    for _ in range(-(-count // block)):
        coarse.append(current >> shift)
        current = (current + stride) % modulus
    words = np.array(coarse, dtype=np.uint64)[:, None] + np.array(fine, dtype=np.uint64)[None, :]
    words = words.ravel()[:count]
    return (words >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class ContinuedFraction:
    """
    Continued fraction data of α: quotients, convergents and θ enclosures

    p and q are stored for indices 0..K+1; theta(k) is available for 0 <= k <= K+1.
    """

    quotients: PartialQuotients
    p: Tuple[int, ...]
    q: Tuple[int, ...]
    alpha: Interval
    precision_bits: int
    alpha_fixed: int

    @property
    def depth(self) -> int:
        return self.quotients.K

    def a(self, k: int) -> int:
        return self.quotients[k]

    def theta(self, k: int) -> Interval:
        """Signed open enclosure of θ_k = q_k α - p_k for 1 <= k <= K+1"""
        if not 1 <= k <= self.depth + 1:
            raise IndexError(f"θ_{k} outside certified range 1..{self.depth + 1}")
        return self.alpha.scale(self.q[k], -self.p[k])

    def theta_fixed(self, k: int) -> int:
        """θ_k of the working rotation number, as an exact multiple of 2^-P"""
        return self.q[k] * self.alpha_fixed - (self.p[k] << self.precision_bits)

    def theta_exact(self, k: int) -> Fraction:
        return Fraction(self.theta_fixed(k), 1 << self.precision_bits)

    def alpha_point(self) -> CirclePoint:
        """α_P, one ulp from the midpoint of the enclosure"""
        return CirclePoint(self.alpha_fixed, self.precision_bits, 1)

    def multiple(self, n: int) -> CirclePoint:
        """n·α as a circle point"""
        return circle_mul_int(self.alpha_point(), n)

    def is_resonant(self, k: int, tau: Number) -> bool:
        if not 1 <= k <= self.depth:
            raise IndexError(f"resonance of k={k} needs q_{k + 1}; known depth is {self.depth}")
        return is_resonant(self.q[k], self.q[k + 1], tau)

    def truncate(self, depth: int) -> "ContinuedFraction":
        return cf_from_quotients(PartialQuotients(self.quotients.a[:depth]), self.precision_bits)

    def to_json(self) -> dict:
        return {
            "quotients": self.quotients.to_json(),
            "p": [str(v) for v in self.p[1:]],
            "q": [str(v) for v in self.q[1:]],
            "alpha": self.alpha.to_json(),
            "theta": [self.theta(k).to_json() for k in range(1, self.depth + 1)],
        }

    def check_invariants(self):
        """Assert recurrence, coprimality, θ bounds, alternating signs and growth"""
        p, q, a = self.p, self.q, self.quotients.a
        for k in range(1, self.depth + 1):
            if p[k + 1] != a[k - 1] * p[k] + p[k - 1] or q[k + 1] != a[k - 1] * q[k] + q[k - 1]:
                raise ValidationError(f"convergent recurrence broken at k={k}")
            if math.gcd(p[k], q[k]) != 1:
                raise ValidationError(f"p_{k}/q_{k} is not in lowest terms")
            low, high = self.theta(k).abs_bounds()
            if self.theta(k).sign != (1 if k % 2 else -1):
                raise PrecisionError(f"θ_{k} enclosure does not carry the sign (-1)^(k+1)")
            if low < Fraction(1, q[k + 1] + q[k]) or high > Fraction(1, q[k + 1]):
                raise PrecisionError(f"θ_{k} enclosure escapes (1/(q_{k+1}+q_{k}), 1/q_{k+1})")
            if k + 2 <= self.depth + 1 and q[k + 2] < 2 * q[k]:
                raise ValidationError(f"q_{k + 2} < 2 q_{k}")


def _build(quotients: PartialQuotients, alpha: Interval, precision_bits: int) -> ContinuedFraction:
    if precision_bits < Config.MIN_PRECISION_BITS:
        raise ValidationError(f"precision must be at least {Config.MIN_PRECISION_BITS} bits")
    p, q = convergents(quotients.a)
    around = sandwich(quotients.a)
    if 4 * q[-1] * (q[-1] + q[-2]) > (1 << precision_bits):
        raise PrecisionError(
            f"{quotients.K} partial quotients need {required_precision_bits(quotients.a)} bits, "
            f"only {precision_bits} available"
        )
    alpha_fixed = round(alpha.midpoint * (1 << precision_bits))
    if not around.contains(Fraction(alpha_fixed, 1 << precision_bits)):
        raise PrecisionError(f"no {precision_bits}-bit point shares the first {quotients.K} quotients")
    cf = ContinuedFraction(
        quotients=quotients,
        p=tuple(p),
        q=tuple(q),
        alpha=Interval(alpha.lo, alpha.hi, precision_bits),
        precision_bits=precision_bits,
        alpha_fixed=alpha_fixed,
    )
    cf.check_invariants()
    return cf


def cf_from_quotients(a: Union[PartialQuotients, Sequence[int]], precision_bits: int) -> ContinuedFraction:
    """
    Continued fraction for known partial quotients

    Args:
        a: Quotients a_1..a_K, K >= 2
        precision_bits: Fixed point precision P of the working rotation number

    Returns:
        ContinuedFraction with α enclosed by the open convergent sandwich
    """
    if not isinstance(a, PartialQuotients):
        a = PartialQuotients(tuple(int(v) for v in a))
    cf = _build(a, sandwich(a.a), precision_bits)
    logger.debug(f"Built continued fraction of depth {cf.depth} at {precision_bits} bits")
    return cf


def cf_from_real(enclosure: Interval, max_k: int, precision_bits: Optional[int] = None) -> ContinuedFraction:
    """
    Interval Euclidean algorithm: as many quotients as the open enclosure certifies, at most max_k

    Args:
        enclosure: Open interval inside (0, 1) containing α
        max_k: Upper limit on the number of quotients
        precision_bits: Working precision; defaults to the enclosure's bits or the configured default

    Returns:
        ContinuedFraction whose α enclosure is the given interval
    """
    if not (0 <= enclosure.lo and enclosure.hi <= 1):
        raise ValidationError(f"α enclosure must lie inside (0, 1), got ({enclosure.lo}, {enclosure.hi})")
    quotients: List[int] = []
    lo, hi = enclosure.lo, enclosure.hi
    while len(quotients) < max_k and lo > 0:
        y_lo, y_hi = 1 / hi, 1 / lo
        a_k = int(math.floor(y_lo))
        if y_hi > a_k + 1:
            break
        quotients.append(a_k)
        lo, hi = y_lo - a_k, y_hi - a_k
    if len(quotients) < 2:
        raise PrecisionError(
            f"enclosure of width {float(enclosure.width):.3g} certifies only {len(quotients)} quotient(s); "
            "it is too wide or contains a rational with a short expansion"
        )
    bits = max(precision_bits or enclosure.bits or Config.DEFAULT_PRECISION_BITS, Config.MIN_PRECISION_BITS)
    depth = certified_depth(quotients, bits)
    if depth < 2:
        raise PrecisionError(f"{bits} bits cannot hold even two of the certified quotients")
    cf = _build(PartialQuotients(tuple(quotients[:depth])), enclosure, bits)
    logger.info(f"Certified {cf.depth} partial quotients from an enclosure of width {float(enclosure.width):.3g}")
    return cf


class ValidationError(ValueError):
    """Input violates a documented precondition"""


class PrecisionError(ArithmeticError):
    """Working precision or error budget is insufficient; raise the precision"""

"""
Ostrowski Numeration - Digits of integers and circle points, intervals I, ensembles B, residue arcs

Integers: n = Σ n_k q_k with 0 <= n_k <= a_k, n_1 <= a_1 - 1 and n_k = 0 whenever
n_{k+1} = a_{k+1}. Circle points: x = Σ x̃_k θ_k under the same digit rules, x taken in [-α, 1-α).
"""

import itertools
import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from config import Config
from core.cf_core import (
    CirclePoint,
    ContinuedFraction,
    PrecisionError,
    ValidationError,
)

logger = logging.getLogger(__name__)

INTEGER = "integer"
REAL = "real"


@dataclass(frozen=True)
class OstrowskiDigits:
    """Finitely supported digit map k -> n_k tied to the continued fraction it was computed for"""

    digits: Dict[int, int]
    cf: ContinuedFraction = field(compare=False, repr=False)
    kind: str = INTEGER
    tail_err_bound: Fraction = Fraction(0)
    ambiguous: bool = False

    def __getitem__(self, k: int) -> int:
        return self.digits.get(k, 0)

    def support(self) -> List[int]:
        return sorted(k for k, d in self.digits.items() if d != 0)

    def to_json(self) -> Dict[str, int]:
        return {str(k): d for k, d in sorted(self.digits.items()) if d != 0}

    @classmethod
    def from_json(cls, data: Mapping[str, int], cf: ContinuedFraction, kind: str = INTEGER) -> "OstrowskiDigits":
        return cls({int(k): int(v) for k, v in data.items()}, cf, kind)


@dataclass(frozen=True)
class DigitWindow:
    """Index window [k_minus, k_plus]"""

    k_minus: int
    k_plus: int

    def __post_init__(self):
        if not 1 <= self.k_minus <= self.k_plus:
            raise ValidationError(f"window needs 1 <= k_minus <= k_plus, got [{self.k_minus}, {self.k_plus}]")

    def indices(self) -> range:
        return range(self.k_minus, self.k_plus + 1)

    def require(self, cf: ContinuedFraction):
        if self.k_plus > cf.depth:
            raise OstrowskiRangeError(
                f"window reaches k={self.k_plus} but only {cf.depth} quotients are certified"
            )


def encode_int(n: int, cf: ContinuedFraction) -> OstrowskiDigits:
    """
    Greedy Ostrowski digits of a nonnegative integer

    Args:
        n: Integer with 0 <= n < q_{K+1}
        cf: Continued fraction with K certified quotients

    Returns:
        Integer-kind digits; decode_int inverts exactly
    """
    if n < 0:
        raise OstrowskiRangeError(f"negative integers have no Ostrowski numeration (got {n})")
    if n >= cf.q[cf.depth + 1]:
        raise OstrowskiRangeError(
            f"{n} needs more than the {cf.depth} certified quotients (limit q_{cf.depth + 1} = {cf.q[cf.depth + 1]})"
        )
    digits: Dict[int, int] = {}
    rest = n
    for k in range(cf.depth, 0, -1):
        d, rest = divmod(rest, cf.q[k])
        if d:
            digits[k] = d
    return OstrowskiDigits(digits, cf)


def is_valid(d: OstrowskiDigits) -> bool:
    """Digit bounds and the carry rule for either kind"""
    cf = d.cf
    for k, n_k in d.digits.items():
        if n_k == 0:
            continue
        if k < 1 or k > cf.depth or n_k < 0 or n_k > cf.a(k):
            return False
        if k == 1 and n_k > cf.a(1) - 1:
            return False
        if n_k == cf.a(k) and d[k - 1] != 0:
            return False
    return True


def decode_int(d: OstrowskiDigits) -> int:
    """Σ n_k q_k for a valid integer numeration"""
    if d.kind != INTEGER:
        raise InvalidNumerationError("decode_int needs integer digits; real digits reconstruct with reconstruct_real")
    if not is_valid(d):
        raise InvalidNumerationError(f"not a valid Ostrowski numeration: {d.to_json()}")
    return sum(n_k * d.cf.q[k] for k, n_k in d.digits.items())


def partial_sum(d: OstrowskiDigits, k: int, k_minus: int = 1) -> int:
    """n̄_k = Σ_{j=k_minus}^{k} n_j q_j"""
    return sum(n_j * d.cf.q[j] for j, n_j in d.digits.items() if k_minus <= j <= k)


def encode_real(x: CirclePoint, cf: ContinuedFraction, depth: int) -> OstrowskiDigits:
    """
    Digits x̃_1..x̃_K of a circle point with x ≈ Σ x̃_k θ_k

    Works on the exact fixed point representative in [-α, 1-α) and peels off x̃_k θ_k one scale at a
    time; boundary ties go to the smaller digit. If x ± err would produce different digits the
    point is ambiguous at this precision.

    Args:
        x: Point to encode
        cf: Continued fraction; θ_{K+1} must be known
        depth: Number of digits K

    Returns:
        Real-kind digits with tail_err_bound = 1/q_{K+1} + x.err
    """
    if depth > cf.depth:
        raise OstrowskiRangeError(f"depth {depth} exceeds the {cf.depth} certified quotients")
    x._check_bits(cf.precision_bits)
    digits, remainder = _peel(x.value, cf, depth)
    if x.err_ulps:
        for shifted in (x.value - x.err_ulps, x.value + x.err_ulps):
            if _peel(shifted, cf, depth)[0] != digits:
                raise BoundaryAmbiguousError(
                    f"point lies within its error bound of a digit boundary at {cf.precision_bits} bits"
                )
    # a remainder on an endpoint of the next tail set has two expansions
    tie = remainder != 0 and remainder in (-cf.theta_fixed(depth + 1), -cf.theta_fixed(depth))
    tail = Fraction(1, cf.q[depth + 1]) + x.err
    return OstrowskiDigits(digits, cf, REAL, tail, ambiguous=tie)


def _peel(value: int, cf: ContinuedFraction, depth: int) -> Tuple[Dict[int, int], int]:
    modulus = 1 << cf.precision_bits
    y = value % modulus
    if y >= modulus - cf.alpha_fixed:
        y -= modulus
    digits: Dict[int, int] = {}
    for k in range(1, depth + 1):
        theta = cf.theta_fixed(k)
        nxt = abs(cf.theta_fixed(k + 1))
        s = 1 if theta > 0 else -1
        d = max(0, -((nxt - s * y) // abs(theta)))
        if d:
            digits[k] = d
            y -= d * theta
    return digits, y


def reconstruct_real(d: OstrowskiDigits) -> Fraction:
    """Σ x̃_k θ_k of the working rotation number"""
    return sum((x_k * d.cf.theta_exact(k) for k, x_k in d.digits.items()), Fraction(0))


def valid_vectors(w: DigitWindow, cf: ContinuedFraction) -> Iterator[Dict[int, int]]:
    """Valid digit vectors supported on the window, in increasing order of the integer they encode"""
    w.require(cf)

    def descend(k: int, forced: bool) -> Iterator[Dict[int, int]]:
        if k < w.k_minus:
            yield {}
            return
        top = 0 if forced else (cf.a(1) - 1 if k == 1 else cf.a(k))
        for digit in range(top + 1):
            for below in descend(k - 1, k != 1 and digit == cf.a(k)):
                if digit:
                    below = dict(below)
                    below[k] = digit
                yield below

    yield from descend(w.k_plus, False)


def enumerate_interval(w: DigitWindow, cf: ContinuedFraction) -> Iterator[int]:
    """
    The integers I_{k_-}^{k_+} whose numeration is supported on the window, increasing

    I_1^k is {0, ..., q_{k+1} - 1}.
    """
    size = interval_size(w, cf)
    if size > Config.MAX_ENUMERATION:
        raise EnumerationTooLargeError(
            f"I_[{w.k_minus},{w.k_plus}] has {size} elements, above the limit {Config.MAX_ENUMERATION}; "
            "use sample_interval"
        )
    for digits in valid_vectors(w, cf):
        yield sum(n_k * cf.q[k] for k, n_k in digits.items())


def _completion_counts(w: DigitWindow, cf: ContinuedFraction) -> Tuple[Dict[int, int], Dict[int, int]]:
    # free[k]: valid assignments of digits k_minus..k; forced[k]: the same with digit k forced to 0
    free = {w.k_minus - 1: 1}
    forced = {w.k_minus - 1: 1}
    for k in w.indices():
        if k == 1:
            free[k] = cf.a(1) * free[k - 1]
        else:
            free[k] = cf.a(k) * free[k - 1] + forced[k - 1]
        forced[k] = free[k - 1]
    return free, forced


def interval_size(w: DigitWindow, cf: ContinuedFraction) -> int:
    """Exact |I_{k_-}^{k_+}|"""
    w.require(cf)
    return _completion_counts(w, cf)[0][w.k_plus]


def sample_interval(w: DigitWindow, cf: ContinuedFraction, rng: np.random.Generator, size: int) -> List[int]:
    """Uniform draws from I_{k_-}^{k_+} without enumerating it"""
    w.require(cf)
    free, forced = _completion_counts(w, cf)
    draws = []
    for _ in range(size):
        n = 0
        is_forced = False
        for k in range(w.k_plus, w.k_minus - 1, -1):
            if is_forced:
                is_forced = False
                continue
            u = randbelow(rng, free[k])
            d = u // free[k - 1]
            if d >= (cf.a(1) if k == 1 else cf.a(k)):
                d = cf.a(k)
                is_forced = True
            n += d * cf.q[k]
        draws.append(n)
    return draws


def randbelow(rng: np.random.Generator, bound: int) -> int:
    """Uniform integer in [0, bound) for bounds of any size"""
    if bound <= 1 << 62:
        return int(rng.integers(0, bound))
    nbits = bound.bit_length()
    while True:
        words = rng.integers(0, 1 << 32, size=-(-nbits // 32), dtype=np.uint64)
        value = 0
        for word in words:
            value = (value << 32) | int(word)
        value >>= 32 * len(words) - nbits
        if value < bound:
            return value


def resonant_indices(w: DigitWindow, cf: ContinuedFraction, tau) -> List[int]:
    w.require(cf)
    return [k for k in w.indices() if cf.is_resonant(k, tau)]


def enumerate_B(w: DigitWindow, cf: ContinuedFraction, tau) -> Iterator[Dict[int, int]]:
    """
    The ensemble B: 0 <= n_k <= a_k - 1 on resonant k of the window, zero elsewhere

    Cardinality is Π a_k over the resonant k.
    """
    ks = resonant_indices(w, cf, tau)
    for choice in itertools.product(*(range(cf.a(k)) for k in ks)):
        yield {k: d for k, d in zip(ks, choice) if d}


def ensemble_size(w: DigitWindow, cf: ContinuedFraction, tau) -> int:
    size = 1
    for k in resonant_indices(w, cf, tau):
        size *= cf.a(k)
    return size


def residue(n: int, cf: ContinuedFraction, k_minus: int) -> int:
    """r(n) = Σ_{k<k_minus} n_k q_k"""
    return partial_sum(encode_int(n, cf), k_minus - 1)


@dataclass(frozen=True)
class Arc:
    """Half-open arc [lo, lo + length) of the circle"""

    r: int
    lo: Fraction
    length: Fraction


@dataclass(frozen=True)
class ResidueArcs:
    """
    Partition of the circle into arcs D_r, r < q_{k_minus}, with r(n) = r iff nα ∈ D_r

    Endpoints are exact fixed point integers of the working rotation number.
    """

    k_minus: int
    bits: int
    starts: Tuple[int, ...]
    lengths: Tuple[int, ...]
    residues: Tuple[int, ...]

    @property
    def arcs(self) -> List[Arc]:
        scale = 1 << self.bits
        ordered = sorted(zip(self.residues, self.starts, self.lengths))
        return [Arc(r, Fraction(s, scale), Fraction(l, scale)) for r, s, l in ordered]

    def arc(self, r: int) -> Arc:
        i = self.residues.index(r)
        scale = 1 << self.bits
        return Arc(r, Fraction(self.starts[i], scale), Fraction(self.lengths[i], scale))

    def locate(self, w: CirclePoint) -> int:
        """Residue index of the arc containing w"""
        w._check_bits(self.bits)
        i = bisect_right(self.starts, w.value) - 1
        offset = (w.value - self.starts[i]) % (1 << self.bits)
        if offset >= self.lengths[i]:
            raise ValidationError("residue arcs do not cover the point; the partition is inconsistent")
        if w.err_ulps and (offset < w.err_ulps or self.lengths[i] - offset <= w.err_ulps):
            raise BoundaryAmbiguousError(f"point within {w.err_ulps} ulps of an arc endpoint")
        return self.residues[i]


def residue_arcs(cf: ContinuedFraction, k_minus: int) -> ResidueArcs:
    """
    Arcs D_r = rα + (interval between -θ_{k_-} and -θ_{k_- - 1}) for r < q_{k_- - 1}, and
    rα + (interval between -θ_{k_-} and -θ_{k_- - 1} - θ_{k_-}) otherwise

    Coverage and disjointness are verified exactly on construction.
    """
    if not 1 <= k_minus <= cf.depth:
        raise OstrowskiRangeError(f"k_minus={k_minus} outside certified range 1..{cf.depth}")
    count = cf.q[k_minus]
    if count > Config.MAX_ENUMERATION:
        raise EnumerationTooLargeError(f"{count} residue arcs exceed the limit {Config.MAX_ENUMERATION}")
    modulus = 1 << cf.precision_bits
    t = cf.theta_fixed(k_minus)
    t_prev = cf.theta_fixed(k_minus - 1)
    long_count = cf.q[k_minus - 1]
    entries = []
    for r in range(count):
        end = -t_prev if r < long_count else -t_prev - t
        lo = min(-t, end)
        entries.append(((r * cf.alpha_fixed + lo) % modulus, abs(end + t), r))
    entries.sort()
    starts = tuple(e[0] for e in entries)
    lengths = tuple(e[1] for e in entries)
    if sum(lengths) != modulus:
        raise PrecisionError(f"residue arcs at k_minus={k_minus} have total length {sum(lengths)}/{modulus}")
    for i, (start, length) in enumerate(zip(starts, lengths)):
        if (start + length) % modulus != starts[(i + 1) % count]:
            raise PrecisionError(f"residue arcs at k_minus={k_minus} leave a gap or overlap")
    logger.debug(f"Built {count} residue arcs for k_minus={k_minus}")
    return ResidueArcs(k_minus, cf.precision_bits, starts, lengths, tuple(e[2] for e in entries))


def digit_joint_tv(w: DigitWindow, cf: ContinuedFraction, indices: Sequence[int]) -> float:
    """
    Total variation distance between the law of (n_{k_1}, ..., n_{k_T}) for uniform n in
    I_{k_-}^{k_+} and the product of uniforms on {0, ..., a_{k_t} - 1}

    The joint law is computed exactly by a transfer recursion over the window whose state is
    whether the previous digit is positive; selected indices become tensor axes.
    """
    w.require(cf)
    chosen = sorted(set(indices))
    for k in chosen:
        if k not in w.indices():
            raise ValidationError(f"index {k} lies outside the window [{w.k_minus}, {w.k_plus}]")
    cells = 1
    for k in chosen:
        cells *= cf.a(k) + 1
    if cells > Config.MAX_JOINT_CELLS:
        raise EnumerationTooLargeError(
            f"joint law over {chosen} needs {cells} cells, above the limit {Config.MAX_JOINT_CELLS}"
        )

    zero_prev = np.ones(())
    pos_prev = np.zeros(())
    for k in w.indices():
        a_k = cf.a(k)
        top = a_k - 1 if k == 1 else a_k
        if k in chosen:
            both = zero_prev + pos_prev
            zero_next = np.zeros(both.shape + (a_k + 1,))
            pos_next = np.zeros(both.shape + (a_k + 1,))
            zero_next[..., 0] = both
            if top >= 1:
                pos_next[..., 1:top + 1] = both[..., None]
                if k != 1:
                    pos_next[..., a_k] = zero_prev
        else:
            zero_next = zero_prev + pos_prev
            pos_next = top * zero_prev + (top if k == 1 else top - 1) * pos_prev
        total = zero_next.sum() + pos_next.sum()
        zero_prev, pos_prev = zero_next / total, pos_next / total
    joint = zero_prev + pos_prev

    uniform = np.ones(())
    for k in chosen:
        a_k = cf.a(k)
        marginal = np.zeros(a_k + 1)
        marginal[:a_k] = 1.0 / a_k
        uniform = np.multiply.outer(uniform, marginal)
    return 0.5 * float(np.abs(joint - uniform).sum())


def concat_defect(cf: ContinuedFraction, breakpoints: Sequence[int]) -> float:
    """
    Fraction of tuples (n^(1), ..., n^(T)) with n^(t) in I_{k_t}^{k_{t+1}-1} whose concatenation
    is not a valid numeration: 1 - |I_{k_1}^{k_{T+1}-1}| / Π |I_{k_t}^{k_{t+1}-1}|
    """
    points = list(breakpoints)
    if len(points) < 2 or any(b <= a for a, b in zip(points, points[1:])):
        raise ValidationError(f"breakpoints must increase and number at least 2, got {points}")
    product = 1
    for lo, hi in zip(points, points[1:]):
        product *= interval_size(DigitWindow(lo, hi - 1), cf)
    whole = interval_size(DigitWindow(points[0], points[-1] - 1), cf)
    return float(1 - Fraction(whole, product))


class InvalidNumerationError(ValidationError):
    """Digit vector violates the Ostrowski digit rules"""


class OstrowskiRangeError(ValidationError):
    """Integer or window exceeds the certified depth"""


class EnumerationTooLargeError(ValidationError):
    """Requested enumeration or joint table exceeds its configured limit"""


class BoundaryAmbiguousError(PrecisionError):
    """Point lies within its error bound of a boundary; raise the precision"""

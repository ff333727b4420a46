"""
Möbius statistics - sieve, Davenport and short interval correlations, arc indicators and the
disjointness statistic along skew product orbits
"""

import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from config import Config
from core.cf_core import (
    PHASE_GRID_ERROR,
    CirclePoint,
    ContinuedFraction,
    Number,
    PrecisionError,
    ValidationError,
    phase_grid,
    to_fraction,
)
from core.dynamics import (
    EPS,
    SkewProduct,
    birkhoff_profile,
    closed_osc_along_orbit,
    cocycle_tail_bound,
)
from core.ostrowski import Arc, EnumerationTooLargeError, ResidueArcs, residue_arcs

logger = logging.getLogger(__name__)

TABLE_MAGIC = b"MUTB"
TABLE_VERSION = 1
_HEADER = struct.Struct("<IQ")


@dataclass(frozen=True)
class MoebiusTable:
    """μ(n) for 0 <= n <= N as int8, with μ(0) = 0 by convention"""

    values: np.ndarray
    N: int

    def __post_init__(self):
        if len(self.values) != self.N + 1:
            raise ValidationError(f"table of length {len(self.values)} does not cover 0..{self.N}")
        self.values.setflags(write=False)

    def __getitem__(self, n: int) -> int:
        return int(self.values[n])

    def mertens(self, n: Optional[int] = None) -> int:
        n = self.N if n is None else n
        return int(self.values[1:n + 1].sum(dtype=np.int64))


Weights = Union[MoebiusTable, np.ndarray]


@dataclass(frozen=True)
class TestFunction:
    """f(x, y) = e(ζ₁x + ζ₂y)"""

    __test__ = False

    zeta1: int
    zeta2: int

    def __post_init__(self):
        if self.zeta2 < 0:
            raise ValidationError(f"zeta2 must be nonnegative (conjugate f otherwise), got {self.zeta2}")


def _small_primes(limit: int) -> np.ndarray:
    if limit < 2:
        return np.array([], dtype=np.int64)
    is_prime = np.ones(limit + 1, dtype=bool)
    is_prime[:2] = False
    for p in range(2, math.isqrt(limit) + 1):
        if is_prime[p]:
            is_prime[p * p::p] = False
    return np.flatnonzero(is_prime).astype(np.int64)


def sieve_mu(N: int) -> MoebiusTable:
    """
    Segmented sieve for μ up to N

    Each segment flips the sign once per prime p <= √N dividing n, zeroes multiples of p², and
    accumulates the product of those primes; a remaining cofactor above 1 is one more prime.
    """
    if N < 1:
        raise ValidationError(f"N must be positive, got {N}")
    if N > Config.MAX_SIEVE_N:
        raise MemoryBudgetError(f"N={N} exceeds MAX_SIEVE_N={Config.MAX_SIEVE_N}; raise the budget to sieve further")
    primes = _small_primes(math.isqrt(N))
    values = np.zeros(N + 1, dtype=np.int8)
    segment = Config.SIEVE_SEGMENT
    for lo in range(1, N + 1, segment):
        hi = min(lo + segment, N + 1)
        mu = np.ones(hi - lo, dtype=np.int8)
        prod = np.ones(hi - lo, dtype=np.int64)
        for p in primes:
            p = int(p)
            first = -(-lo // p) * p
            if first >= hi:
                continue
            mu[first - lo::p] *= -1
            prod[first - lo::p] *= p
            square = p * p
            first_sq = -(-lo // square) * square
            if first_sq < hi:
                mu[first_sq - lo::square] = 0
        n = np.arange(lo, hi, dtype=np.int64)
        mu[prod != n] *= -1
        values[lo:hi] = mu
        logger.debug(f"Sieved segment [{lo}, {hi})")
    logger.info(f"Sieved μ up to {N}")
    return MoebiusTable(values, N)


def save_table(table: MoebiusTable, path: Union[str, Path]) -> Path:
    """
    Write the MUTB layout: magic, little-endian u32 version and u64 N, then μ(n)+1 packed two bits
    per entry for n = 0..N, entry n at bits 2(n mod 4) of byte n // 4

    The file appears atomically through a rename.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    codes = (table.values.astype(np.int16) + 1).astype(np.uint8)
    padded = np.zeros(-(-len(codes) // 4) * 4, dtype=np.uint8)
    padded[:len(codes)] = codes
    quads = padded.reshape(-1, 4)
    packed = quads[:, 0] | (quads[:, 1] << 2) | (quads[:, 2] << 4) | (quads[:, 3] << 6)
    fd, temp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(TABLE_MAGIC)
            f.write(_HEADER.pack(TABLE_VERSION, table.N))
            f.write(packed.astype(np.uint8).tobytes())
        os.replace(temp_name, path)
    except OSError:
        Path(temp_name).unlink(missing_ok=True)
        raise
    logger.info(f"Saved μ table up to {table.N} to {path}")
    return path


def load_table(path: Union[str, Path]) -> MoebiusTable:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != TABLE_MAGIC:
        raise TableFormatError(f"{path} is not a μ table (bad magic)")
    version, N = _HEADER.unpack_from(data, 4)
    if version != TABLE_VERSION:
        raise TableFormatError(f"{path} has table version {version}; expected {TABLE_VERSION}")
    body = np.frombuffer(data, dtype=np.uint8, offset=4 + _HEADER.size)
    if len(body) * 4 < N + 1:
        raise TableFormatError(f"{path} is truncated: {len(body)} bytes for N={N}")
    codes = np.stack([(body >> shift) & 3 for shift in (0, 2, 4, 6)], axis=1).ravel()[:N + 1]
    if np.any(codes == 3):
        raise TableFormatError(f"{path} holds an invalid entry code")
    return MoebiusTable(codes.astype(np.int8) - 1, int(N))


def _weights(mu: Weights) -> np.ndarray:
    return mu.values if isinstance(mu, MoebiusTable) else np.asarray(mu)


def _limit(mu: Weights) -> int:
    return len(_weights(mu)) - 1


def _beta_step(beta: Number) -> int:
    return round((to_fraction(beta) % 1) * (1 << 64)) % (1 << 64)


def _beta_units(beta: Number, start: int, count: int) -> np.ndarray:
    """e(βn) for n = start..start+count-1 from a 64 bit fixed point β"""
    step = _beta_step(beta)
    return np.exp(2j * np.pi * phase_grid(start * step, step, count, 64))


def davenport_avg(mu: Weights, N: int, beta: Number) -> float:
    """|(1/N) Σ_{n<=N} μ(n)e(βn)|"""
    if not 1 <= N <= _limit(mu):
        raise ValidationError(f"N={N} outside the table range 1..{_limit(mu)}")
    weights = _weights(mu)[1:N + 1]
    return float(abs(np.dot(weights, _beta_units(beta, 1, N))) / N)


def short_interval_corr(mu: Weights, N: int, R: int, beta: Number) -> float:
    """
    E_{L<N} |E_{1<=n<=R} μ(L+n)e(βn)|

    Windows running past the table end are clipped and averaged over their clipped length.
    Evaluated through the prefix sums of μ(m)e(βm); the modulus removes the e(βL) factor.
    """
    limit = _limit(mu)
    if not 10 <= R <= N <= limit:
        raise ValidationError(f"need 10 <= R <= N <= table limit, got R={R}, N={N}, limit={limit}")
    weights = _weights(mu)
    prefix = np.zeros(limit + 1, dtype=complex)
    prefix[1:] = np.cumsum(weights[1:] * _beta_units(beta, 1, limit))
    L = np.arange(N)
    hi = np.minimum(L + R, limit)
    return float(np.mean(np.abs(prefix[hi] - prefix[L]) / (hi - L)))


def _orbit_phases(T: SkewProduct, x: CirclePoint, y: CirclePoint, f: TestFunction, count: int) -> np.ndarray:
    """ζ₁x_n + ζ₂y_n mod 1 for n = 1..count"""
    bits = T.precision
    x._check_bits(bits)
    y._check_bits(bits)
    mean_step = round((f.zeta2 * T.h.mean % 1) * (1 << bits))
    base = f.zeta1 * x.value + f.zeta2 * y.value
    step = f.zeta1 * T.cf.alpha_fixed + mean_step
    phases = phase_grid(base + step, step, count, bits)
    if f.zeta2 and T.h.coeff:
        weight = sum(2 * abs(c) for _, c in T.h.positive_terms())
        drift = Config.REANCHOR_INTERVAL * weight * (2 * math.pi * PHASE_GRID_ERROR + 4 * EPS)
        err = 2 * math.pi * f.zeta2 * drift + count * 2.0**-bits
        if err > Config.ERROR_BUDGET:
            raise PrecisionError(f"orbit phase error {err:.3g} exceeds the budget {Config.ERROR_BUDGET}")
        phases = phases + f.zeta2 * birkhoff_profile(T, x, count)[1:]
    return phases


def disjointness_profile(
    T: SkewProduct, x: CirclePoint, y: CirclePoint, f: TestFunction, mu: Weights, Ns: Iterable[int]
) -> Dict[int, float]:
    """|E_{n<=N} μ(n) f(T^n(x, y))| for several N from one pass along the orbit"""
    Ns = sorted(set(Ns))
    top = Ns[-1]
    if Ns[0] < 1 or top > _limit(mu):
        raise ValidationError(f"N values must lie in 1..{_limit(mu)}, got {Ns}")
    terms = _weights(mu)[1:top + 1] * np.exp(2j * np.pi * _orbit_phases(T, x, y, f, top))
    partial = np.cumsum(terms)
    return {N: float(abs(partial[N - 1]) / N) for N in Ns}


def disjointness_stat(T: SkewProduct, x: CirclePoint, y: CirclePoint, f: TestFunction, mu: Weights, N: int) -> float:
    """
    |E_{n<=N} μ(n)e(ζ₁x_n + ζ₂y_n)| with (x_n, y_n) = T^n(x, y)

    Args:
        T: Skew product
        x: Base coordinate
        y: Fiber coordinate
        f: Character e(ζ₁x + ζ₂y)
        mu: μ table, or any weight array indexed from 0
        N: Averaging length

    Returns:
        Modulus of the average
    """
    return disjointness_profile(T, x, y, f, mu, [N])[N]


def residues_below(cf: ContinuedFraction, Q: int, k_minus: int, k_plus: int) -> np.ndarray:
    """r(n) for n = 0..Q-1; greedy digits above k_minus peel off, the remainder is r(n)"""
    remainder = np.arange(Q, dtype=np.int64)
    for k in range(k_plus, k_minus - 1, -1):
        remainder %= cf.q[k]
    return remainder


def window_decomp_stat(
    T: SkewProduct, x: CirclePoint, y: CirclePoint, f: TestFunction, mu: Weights, N: int, k_minus: int, k_plus: int
) -> float:
    """
    E_{1<=L<=N} |E_{n<Q} μ(L+n) e(ζ₁nα + ζ₂H_{r(n)}(x + Lα))| with Q = q_{k_plus+1}

    For each residue r the inner sum over n with r(n) = r is a cross correlation of μ against
    e(ζ₁nα), computed with zero padded FFTs.
    """
    cf = T.cf
    if not 1 <= k_minus <= k_plus < cf.depth:
        raise ValidationError(f"window [{k_minus}, {k_plus}] needs q_{k_plus + 1}; certified depth is {cf.depth}")
    Q = cf.q[k_plus + 1]
    if Q > N:
        raise ValidationError(f"q_{k_plus + 1} = {Q} exceeds N={N}")
    if N + Q - 1 > _limit(mu):
        raise ValidationError(f"table must reach N + q_{k_plus + 1} - 1 = {N + Q - 1}, got {_limit(mu)}")
    residue_count = cf.q[k_minus]
    if residue_count * (N + Q) > Config.MAX_JOINT_CELLS * 10:
        raise EnumerationTooLargeError(f"{residue_count} residues over {N + Q} terms exceed the correlation budget")
    bits = cf.precision_bits
    r_of_n = residues_below(cf, Q, k_minus, k_plus)
    characters = np.exp(2j * np.pi * phase_grid(0, f.zeta1 * cf.alpha_fixed, Q, bits))
    size = 1 << (N + 2 * Q).bit_length()
    spectrum = np.fft.fft(_weights(mu)[1:N + Q].astype(float), size)
    start = CirclePoint((x.value + cf.alpha_fixed) % (1 << bits), bits, x.err_ulps)
    total = np.zeros(N, dtype=complex)
    for r in np.unique(r_of_n):
        r = int(r)
        g = np.where(r_of_n == r, characters, 0)
        # S_r(L) = Σ_n g[n] μ(L + n), L = 1..N
        corr = np.fft.ifft(spectrum * np.conj(np.fft.fft(np.conj(g), size)))[:N]
        heights = f.zeta2 * (float(r * T.h.mean % 1) + closed_osc_along_orbit(T, start, r, N))
        total += np.exp(2j * np.pi * heights) * corr
    logger.debug(f"Window decomposition over {len(np.unique(r_of_n))} residues, Q={Q}")
    return float(np.mean(np.abs(total)) / Q)


def window_decomp_slack(T: SkewProduct, f: TestFunction, N: int, k_minus: int, k_plus: int) -> float:
    """
    Certified gap between disjointness_stat and window_decomp_stat

    2q_{k_plus+1}/N for the window overlap plus min(2, 2π‖ζ₂(H_n - H_{r(n)})‖) bounded through the
    cocycle tail and the linear defect max ‖ζ₂(n - r(n))ĥ(0)‖.
    """
    cf = T.cf
    Q = cf.q[k_plus + 1]
    shifts = np.arange(Q, dtype=np.int64) - residues_below(cf, Q, k_minus, k_plus)
    linear = 0.0
    if f.zeta2 and T.h.mean:
        frac = (f.zeta2 * T.h.mean) % 1
        mean_fixed = round(frac * (1 << 64)) % (1 << 64)
        phases = (shifts.astype(np.uint64) * np.uint64(mean_fixed) >> np.uint64(11)).astype(float) * 2.0**-53
        linear = float(np.max(np.minimum(phases, 1 - phases))) + Q * 2.0**-60
    oscillation = f.zeta2 * cocycle_tail_bound(T, k_minus) if f.zeta2 else 0.0
    return 2 * Q / N + min(2.0, 2 * math.pi * (oscillation + linear))


@dataclass(frozen=True)
class ArcApproximation:
    """
    Trigonometric polynomial ψ of degree A approximating the indicator of an arc

    ψ = 𝟏_arc * K with K the normalized square of the Fejér kernel of order n, A = 2n - 2. Outside
    the exceptional arcs U (radius eta around each endpoint) |ψ - 𝟏| <= sup_error.
    """

    r: int
    lo: Fraction
    length: Fraction
    degree: int
    coeffs: np.ndarray
    eta: float
    sup_error: float

    @property
    def exceptional_length(self) -> float:
        return 0.0 if self.degree == 0 else 4 * self.eta

    def coefficient(self, xi: int) -> complex:
        return complex(self.coeffs[xi + self.degree]) if abs(xi) <= self.degree else 0j

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        xi = np.arange(-self.degree, self.degree + 1)
        return (np.exp(2j * np.pi * np.outer(points, xi)) @ self.coeffs).real

    def indicator(self, points: np.ndarray) -> np.ndarray:
        offset = np.mod(points - float(self.lo), 1.0)
        return (offset < float(self.length)).astype(float)

    def outside_exceptional(self, points: np.ndarray) -> np.ndarray:
        lo = float(self.lo)
        hi = float((self.lo + self.length) % 1)
        near = np.minimum(_circle_gap(points, lo), _circle_gap(points, hi))
        return near > self.eta


def _circle_gap(points: np.ndarray, center: float) -> np.ndarray:
    d = np.mod(points - center, 1.0)
    return np.minimum(d, 1 - d)


def jackson_order(q_k_minus: int, delta: float) -> int:
    """Fejér order n with tail mass 1/(16n³η³) <= δ/(16q) for η = 0.99δ/(128q)"""
    eta = _exceptional_radius(q_k_minus, delta)
    return math.ceil((q_k_minus / delta) ** (1 / 3) / eta)


def _exceptional_radius(q_k_minus: int, delta: float) -> float:
    return 0.99 * delta / (128 * q_k_minus)


def jackson_coefficients(order: int) -> np.ndarray:
    """κ̂(ξ) for |ξ| <= 2n - 2: the triangle sequence convolved with itself, κ̂(0) = 1"""
    triangle = order - np.abs(np.arange(-(order - 1), order)).astype(float)
    kernel = np.convolve(triangle, triangle)
    return kernel / kernel[len(kernel) // 2]


def _indicator_coefficients(lo: Fraction, length: Fraction, degree: int) -> np.ndarray:
    xi = np.arange(-degree, degree + 1)
    out = np.empty(len(xi), dtype=complex)
    nonzero = xi != 0
    start = float(lo % 1)
    end = float((lo + length) % 1)
    k = xi[nonzero]
    out[nonzero] = (np.exp(-2j * np.pi * k * start) - np.exp(-2j * np.pi * k * end)) / (2j * np.pi * k)
    out[~nonzero] = float(length)
    return out


def arc_indicator_trigpoly(arc: Arc, q_k_minus: int, delta: Number) -> ArcApproximation:
    """
    Smooth the arc indicator with a Jackson kernel

    Args:
        arc: Arc [lo, lo + length)
        q_k_minus: Denominator fixing the accuracy δ/(16q) and exceptional budget δ/(32q)
        delta: Accuracy parameter in (0, 1)

    Returns:
        ArcApproximation; the full circle gives ψ = 1 with A = 0
    """
    delta = float(to_fraction(delta))
    if not 0 < delta < 1:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    if not 0 < arc.length <= 1:
        raise ValidationError(f"arc length must lie in (0, 1], got {arc.length}")
    if arc.length == 1:
        return ArcApproximation(arc.r, arc.lo, arc.length, 0, np.ones(1, dtype=complex), 0.0, 0.0)
    order = jackson_order(q_k_minus, delta)
    degree = 2 * order - 2
    if degree > Config.MAX_TRIG_DEGREE:
        raise DegreeCapError(
            f"δ={delta} at q={q_k_minus} needs degree {degree} above MAX_TRIG_DEGREE={Config.MAX_TRIG_DEGREE}"
        )
    eta = _exceptional_radius(q_k_minus, delta)
    coeffs = jackson_coefficients(order) * _indicator_coefficients(arc.lo, arc.length, degree)
    bound = 1 / (16 * order**3 * eta**3)
    return ArcApproximation(arc.r, arc.lo, arc.length, degree, coeffs, eta, bound)


def verify_arc_approx(approx: ArcApproximation, points_per_arc: int = 10**4) -> float:
    """Measured sup |ψ - 𝟏| outside the exceptional arcs on an FFT grid"""
    if approx.degree == 0:
        return float(abs(approx.coeffs[0].real - 1))
    grid = max(2 * approx.degree + 1, math.ceil(points_per_arc / float(approx.length)))
    grid = 1 << (grid - 1).bit_length()
    spectrum = np.zeros(grid, dtype=complex)
    xi = np.arange(-approx.degree, approx.degree + 1)
    spectrum[xi % grid] = approx.coeffs
    values = (np.fft.ifft(spectrum) * grid).real
    points = np.arange(grid) / grid
    mask = approx.outside_exceptional(points)
    return float(np.max(np.abs(values - approx.indicator(points))[mask]))


def arc_family(cf: ContinuedFraction, k_minus: int, delta: Number) -> List[ArcApproximation]:
    """Approximations of every residue arc D_r"""
    arcs: ResidueArcs = residue_arcs(cf, k_minus)
    return [arc_indicator_trigpoly(arc, cf.q[k_minus], delta) for arc in arcs.arcs]


def coefficient_bound(cf: ContinuedFraction, k_minus: int, delta: Number) -> float:
    """
    B₀ = max_ξ Σ_r |θ_{r,ξ}|

    |θ_{r,ξ}| = κ̂(ξ)|sin(πξℓ_r)|/(π|ξ|) depends on r only through the arc length, and the residue
    arcs take two lengths.
    """
    delta = float(to_fraction(delta))
    arcs = residue_arcs(cf, k_minus)
    counts: Dict[int, int] = {}
    for length in arcs.lengths:
        counts[length] = counts.get(length, 0) + 1
    order = jackson_order(cf.q[k_minus], delta)
    degree = 2 * order - 2
    if degree > Config.MAX_TRIG_DEGREE:
        raise DegreeCapError(f"degree {degree} exceeds MAX_TRIG_DEGREE={Config.MAX_TRIG_DEGREE}")
    xi = np.arange(-degree, degree + 1)
    kernel = jackson_coefficients(order)
    total = np.zeros(len(xi))
    for length, count in counts.items():
        ell = length / float(1 << arcs.bits)
        magnitude = np.where(xi == 0, ell, np.abs(np.sin(np.pi * xi * ell)) / (np.pi * np.maximum(np.abs(xi), 1)))
        total += count * magnitude
    return float(np.max(kernel * total))


@dataclass(frozen=True)
class ExpDecompBound:
    B0: float
    degree: int
    max_corr: float
    bound: float


def exp_decomp_bound(
    cf: ContinuedFraction, mu: Weights, N: int, R: int, k_minus: int, zeta1: int, delta: Number
) -> ExpDecompBound:
    """B₀(2A + 1)·max_{|ξ|<=A} short_interval_corr(μ, N, R, (ζ₁ + ξ)α)"""
    B0 = coefficient_bound(cf, k_minus, delta)
    degree = 2 * jackson_order(cf.q[k_minus], float(to_fraction(delta))) - 2
    alpha = Fraction(cf.alpha_fixed, 1 << cf.precision_bits)
    worst = 0.0
    for xi in range(-degree, degree + 1):
        worst = max(worst, short_interval_corr(mu, N, R, (zeta1 + xi) * alpha))
    logger.info(f"Exponential decomposition: B0={B0:.4g}, A={degree}, max correlation {worst:.4g}")
    return ExpDecompBound(B0, degree, worst, B0 * (2 * degree + 1) * worst)


class MemoryBudgetError(ValidationError):
    """Requested table exceeds the configured memory budget"""


class DegreeCapError(ValidationError):
    """Required trigonometric degree exceeds MAX_TRIG_DEGREE"""


class TableFormatError(ValidationError):
    """Malformed μ table file"""

"""
Configuration settings for MobiusSkew - Möbius disjointness experiments on skew products
"""

import hashlib
import logging
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from fuzzywuzzy import fuzz, process

logger = logging.getLogger(__name__)


class Config:
    """Application defaults, budgets and presets"""

    # App metadata
    APP_NAME = "MobiusSkew"
    APP_VERSION = "1.0.0"
    APP_DESCRIPTION = "Desk-scale experiments for Möbius disjointness of torus skew products"

    # Precision
    DEFAULT_PRECISION_BITS = 256
    MIN_PRECISION_BITS = 64
    DEFAULT_MAX_K = 40

    # Iteration and error budgets
    MAX_ITERATES = 10**8
    REANCHOR_INTERVAL = 1 << 16
    ERROR_BUDGET = 1e-6

    # Memory and enumeration budgets
    MAX_SIEVE_N = 10**8
    SIEVE_SEGMENT = 1 << 22
    MAX_JOINT_CELLS = 10**7
    MAX_ENUMERATION = 5 * 10**6
    LAZY_PHI_THRESHOLD = 10**7
    PHI_CHUNK = 1 << 20
    MAX_TRIG_DEGREE = 1 << 18

    # Synthetic models
    MULTIPLIER_CAP = 4
    TOWER_EXPONENT_CAP = 64

    # Fuzzy suggestions for mistyped names
    FUZZY_THRESHOLD = 0.6

    PRESETS = ("golden", "silver", "liouville-d", "tower", "constant-c")
    SUBCOMMANDS = (
        "cf-info", "ostrowski-check", "indep-tv", "approx-ladder", "trunc-decay",
        "phi-product", "residue-arcs", "mu-sieve", "davenport", "mrt-corr",
        "disjointness", "window-decomp",
    )
    H_KINDS = ("synthetic", "coboundary", "zero")

    @staticmethod
    def validate_precision(bits: int) -> int:
        """Validate a precision in bits"""
        if bits < Config.MIN_PRECISION_BITS:
            raise ConfigError(
                f"precision must be at least {Config.MIN_PRECISION_BITS} bits, got {bits}"
            )
        return bits

    @staticmethod
    def validate_tau(tau: Fraction) -> Fraction:
        """Validate the Fourier decay exponent"""
        if tau <= 2:
            raise ConfigError(f"tau must exceed 2, got {tau}")
        return tau

    @staticmethod
    def validate_window(k_minus: int, k_plus: int) -> Tuple[int, int]:
        """Validate a digit window"""
        if k_minus < 2 or k_plus < k_minus:
            raise ConfigError(f"window needs 2 <= k_minus <= k_plus, got ({k_minus}, {k_plus})")
        return k_minus, k_plus

    @staticmethod
    def suggest(name: str, choices) -> Optional[str]:
        """Closest known name to a mistyped one, if any is close enough"""
        choices = list(choices)
        if not choices:
            return None
        best, score = process.extractOne(name, choices, scorer=fuzz.ratio)
        if score / 100.0 >= Config.FUZZY_THRESHOLD:
            return best
        return None


@dataclass
class ExperimentConfig:
    """Flat experiment configuration; numeric values stay decimal strings until used"""

    alpha: str = "golden"
    tau: str = "2.5"
    precision: int = Config.DEFAULT_PRECISION_BITS
    seed: int = 0
    N: int = 10**4
    R: str = "100,1000"
    k_minus: int = 2
    k_plus: int = 4
    zeta1: int = 1
    zeta2: int = 1
    h: str = "synthetic"
    amplitude: str = "1"
    g_amplitude: str = "0.01"
    c: str = "0"
    winding: int = 0
    samples: int = 200
    beta: str = "golden"
    delta: str = "0.5"
    indices: str = ""
    max_k: int = Config.DEFAULT_MAX_K
    out: str = "reports"

    def __post_init__(self):
        Config.validate_precision(self.precision)
        Config.validate_tau(self.tau_value)
        Config.validate_window(self.k_minus, self.k_plus)
        if self.h not in Config.H_KINDS:
            hint = Config.suggest(self.h, Config.H_KINDS)
            raise ConfigError(
                f"unknown h kind '{self.h}'" + (f"; did you mean '{hint}'?" if hint else "")
            )
        if self.zeta2 < 0:
            raise ConfigError(f"zeta2 must be nonnegative, got {self.zeta2}")
        if self.N < 1:
            raise ConfigError(f"N must be positive, got {self.N}")
        if self.samples < 1:
            raise ConfigError(f"samples must be positive, got {self.samples}")

    @property
    def tau_value(self) -> Fraction:
        return _decimal(self.tau, "tau")

    @property
    def amplitude_value(self) -> Fraction:
        return _decimal(self.amplitude, "amplitude")

    @property
    def g_amplitude_value(self) -> Fraction:
        return _decimal(self.g_amplitude, "g_amplitude")

    @property
    def c_value(self) -> Fraction:
        return _decimal(self.c, "c")

    @property
    def delta_value(self) -> Fraction:
        value = _decimal(self.delta, "delta")
        if not 0 < value < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        return value

    @property
    def R_values(self) -> List[int]:
        return [int(part) for part in _split(self.R)]

    @property
    def beta_values(self) -> List[str]:
        return _split(self.beta)

    @property
    def index_values(self) -> List[int]:
        return [int(part) for part in _split(self.indices)]

    @property
    def output_dir(self) -> Path:
        return Path(self.out)

    def canonical_lines(self) -> List[str]:
        """Sorted key=value lines; the output directory is not part of the identity"""
        return sorted(
            f"{f.name}={getattr(self, f.name)}" for f in fields(self) if f.name != "out"
        )

    def config_hash(self) -> str:
        """First 16 hex digits of SHA-256 over the canonical lines"""
        digest = hashlib.sha256("\n".join(self.canonical_lines()).encode("utf-8"))
        return digest.hexdigest()[:16]


def load_config(path: Optional[Path] = None, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """
    Load a flat key = value configuration file

    Args:
        path: Config file; '#' starts a comment, blank lines are ignored
        overrides: Values that win over the file (from CLI flags)

    Returns:
        Validated ExperimentConfig
    """
    raw: Dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{line}'")
            key, value = (part.strip() for part in line.split("=", 1))
            raw[key] = value
        logger.info(f"Loaded {len(raw)} settings from {path}")
    if overrides:
        raw.update({k: str(v) for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**_coerce(raw))
    except TypeError as e:
        raise ConfigError(str(e)) from e


def _coerce(raw: Dict[str, str]) -> Dict[str, object]:
    known = {f.name: f for f in fields(ExperimentConfig)}
    values: Dict[str, object] = {}
    for key, value in raw.items():
        if key not in known:
            hint = Config.suggest(key, known)
            raise ConfigError(
                f"unknown config key '{key}'" + (f"; did you mean '{hint}'?" if hint else "")
            )
        if known[key].type in (int, "int") and not isinstance(value, int):
            try:
                value = int(str(value).replace("_", ""))
            except ValueError:
                raise ConfigError(f"config key '{key}' needs an integer, got '{value}'")
        values[key] = value
    return values


def _decimal(text: str, name: str) -> Fraction:
    try:
        return Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"config key '{name}' needs a decimal or p/q value, got '{text}'")


def _split(text: str) -> List[str]:
    return [part.strip() for part in str(text).split(",") if part.strip()]


class ConfigError(ValueError):
    """Invalid experiment configuration"""

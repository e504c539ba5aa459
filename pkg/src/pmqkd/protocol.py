"""Core protocol types, phase-slice arithmetic, sifting and shared numerics.

The phase interval [0, 2*pi) is divided into D equal slices; slice j is the
half-open arc [pi/D*(2j-1), pi/D*(2j+1)), so slice 0 is centered on phase 0.
Sifting merges announced slice indices into D/2 groups and decides Bob's
conditional bit flip.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import IntEnum

import numpy as np

TWO_PI = 2.0 * math.pi

# Joint intensity-setting indices used throughout tallies.
SETTING_SIGNAL = 0
SETTING_WEAK = 1
SETTING_VACUUM = 2
SETTING_MIXED = 3
SETTING_NAMES = ("signal", "weak", "vacuum")


class InvalidInputError(ValueError):
    """Raised when an operation receives arguments outside its domain."""


class Detector(IntEnum):
    """Single-detector click outcomes used by sifting."""

    L = 0
    R = 1


class DetectionOutcome(IntEnum):
    """Result of one interference measurement."""

    NONE = 0
    L = 1
    R = 2
    BOTH = 3


def slice_of_phase(phi: float, D: int) -> int:
    """Return the index j of the phase slice containing ``phi``.

    ``phi`` is reduced mod 2*pi into [0, 2*pi); boundaries are half-open on
    the right, so pi/D*(2j+1) belongs to slice j+1.
    """
    if not math.isfinite(phi):
        raise InvalidInputError(f"phase must be finite, got {phi!r}")
    if D < 4 or D % 2:
        raise InvalidInputError(f"slice count D must be even and >= 4, got {D}")
    reduced = phi % TWO_PI
    half_width = math.pi / D
    j = int((reduced + half_width) // (TWO_PI / D))
    return j % D


def sift(j_a: int, j_b: int, j_delta: int, outcome: Detector | int, D: int) -> tuple[int, bool]:
    """Merge one detected round into its phase group.

    Returns ``(group, flip_b)`` where ``group`` is in {0, .., D/2-1} and
    ``flip_b`` tells whether Bob flips his key bit.  The raw index
    ``(j_a - j_b + j_delta) mod D`` triggers a flip when it falls in
    [D/4, 3D/4); an R-click flips once more; the two flips cancel via XOR.
    """
    if D % 4:
        raise InvalidInputError(f"D must be divisible by 4 for group merging, got {D}")
    for name, j in (("j_a", j_a), ("j_b", j_b), ("j_delta", j_delta)):
        if not 0 <= j < D:
            raise InvalidInputError(f"{name}={j} out of range [0, {D})")
    outcome = Detector(outcome)
    raw = (j_a - j_b + j_delta) % D
    flip_from_half = D // 4 <= raw < 3 * D // 4
    flip_b = (outcome == Detector.R) != flip_from_half
    return raw % (D // 2), flip_b


def binary_entropy(x: float) -> float:
    """Binary entropy H(x) in bits, with H(0) = H(1) = 0 by continuity."""
    if not 0.0 <= x <= 1.0:
        raise InvalidInputError(f"entropy argument must lie in [0, 1], got {x!r}")
    # log-domain guard: below 1e-15 the x*log(x) term is < 5e-14 bits
    if x < 1e-15 or 1.0 - x < 1e-15:
        return 0.0
    return -(x * math.log2(x) + (1.0 - x) * math.log2(1.0 - x))


@dataclass(frozen=True)
class ProtocolParams:
    """Protocol configuration: intensities, slicing, decoy ratios, analysis presets.

    Intensities are totals over both sides (each side modulates half).  The
    strict ordering vac < nu < mu is required by the decoy-bound denominator.
    """

    D: int = 16
    mu_total: float = 0.0716
    nu_total: float = 0.0358
    vac_total: float = 0.0
    r_signal: float = 0.5
    r_weak: float = 0.3
    r_vacuum: float = 0.2
    n_rounds: int = 10**6
    f_ec: float = 1.1
    n_alpha: float = 7.0
    group_set: tuple[int, ...] = ()

    def __post_init__(self):
        if self.D < 4 or self.D % 4:
            raise InvalidInputError(f"D must be a multiple of 4 and >= 4, got {self.D}")
        if abs(self.r_signal + self.r_weak + self.r_vacuum - 1.0) > 1e-12:
            raise InvalidInputError("intensity ratios must sum to 1 within 1e-12")
        if min(self.r_signal, self.r_weak, self.r_vacuum) < 0:
            raise InvalidInputError("intensity ratios must be nonnegative")
        if not 0.0 <= self.vac_total < self.nu_total < self.mu_total:
            raise InvalidInputError(
                "intensities must satisfy 0 <= vac < nu < mu, got "
                f"vac={self.vac_total}, nu={self.nu_total}, mu={self.mu_total}"
            )
        if self.n_rounds <= 0:
            raise InvalidInputError("n_rounds must be positive")
        if self.f_ec < 1.0:
            raise InvalidInputError("error correction efficiency must be >= 1")
        if self.n_alpha <= 0:
            raise InvalidInputError("n_alpha must be positive")
        groups = tuple(self.group_set) or tuple(range(self.D // 2))
        if any(not 0 <= g < self.D // 2 for g in groups):
            raise InvalidInputError("group_set entries must lie in [0, D/2)")
        object.__setattr__(self, "group_set", groups)

    @property
    def ratios(self) -> tuple[float, float, float]:
        return (self.r_signal, self.r_weak, self.r_vacuum)

    @property
    def intensities(self) -> tuple[float, float, float]:
        return (self.mu_total, self.nu_total, self.vac_total)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["group_set"] = list(self.group_set)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolParams":
        d = dict(d)
        if "group_set" in d:
            d["group_set"] = tuple(d["group_set"])
        return cls(**d)


@dataclass(frozen=True)
class RoundRecord:
    """One quantum round: settings, announced slices, key bits, outcome."""

    setting_a: int
    setting_b: int
    j_a: int
    j_b: int
    kappa_a: int
    kappa_b: int
    outcome: DetectionOutcome
    D: int = 16

    def __post_init__(self):
        if not (0 <= self.j_a < self.D and 0 <= self.j_b < self.D):
            raise InvalidInputError("slice indices must be strictly less than D")
        if self.kappa_a not in (0, 1) or self.kappa_b not in (0, 1):
            raise InvalidInputError("key bits must be 0 or 1")


@dataclass
class TallyTable:
    """Send/click/error counts accumulated over a run.

    Indices 0..2 are the joint settings (signal, weak, vacuum); rounds where
    the two sides picked different settings land in the ``mixed`` buckets and
    are never analyzed.  Per-group arrays have shape (3, D/2).  The
    ``*_k1`` arrays record ground truth for rounds whose true total photon
    number was exactly one; they exist for soundness checks only and are not
    visible to the estimation procedure.
    """

    D: int = 16
    sends: np.ndarray = None
    mixed_sends: int = 0
    clicks: np.ndarray = None
    mixed_clicks: int = 0
    group_clicks: np.ndarray = None
    group_errors: np.ndarray = None
    both_clicks: int = 0
    discarded_trains: int = 0
    discarded_rounds: int = 0
    sends_k1: np.ndarray = None
    clicks_k1: np.ndarray = None

    def __post_init__(self):
        half = self.D // 2
        if self.sends is None:
            self.sends = np.zeros(3, dtype=np.int64)
        if self.clicks is None:
            self.clicks = np.zeros(3, dtype=np.int64)
        if self.group_clicks is None:
            self.group_clicks = np.zeros((3, half), dtype=np.int64)
        if self.group_errors is None:
            self.group_errors = np.zeros((3, half), dtype=np.int64)
        if self.sends_k1 is None:
            self.sends_k1 = np.zeros(3, dtype=np.int64)
        if self.clicks_k1 is None:
            self.clicks_k1 = np.zeros((3, half), dtype=np.int64)
        for arr in (self.sends, self.clicks, self.sends_k1):
            if arr.shape != (3,):
                raise InvalidInputError("per-setting tallies must have shape (3,)")
        for arr in (self.group_clicks, self.group_errors, self.clicks_k1):
            if arr.shape != (3, half):
                raise InvalidInputError(f"per-group tallies must have shape (3, {half})")
        self.validate()

    def validate(self) -> None:
        if (self.sends < 0).any() or (self.clicks < 0).any():
            raise InvalidInputError("negative counts in tally")
        if (self.group_errors > self.group_clicks).any():
            raise InvalidInputError("group error count exceeds group click count")
        if not np.array_equal(self.group_clicks.sum(axis=1), self.clicks):
            raise InvalidInputError("per-group clicks do not sum to per-setting clicks")

    @property
    def n_rounds(self) -> int:
        return int(self.sends.sum()) + self.mixed_sends

    def merge(self, other: "TallyTable") -> "TallyTable":
        """Field-wise sum; associative and commutative."""
        if self.D != other.D:
            raise InvalidInputError("cannot merge tallies with different D")
        return TallyTable(
            D=self.D,
            sends=self.sends + other.sends,
            mixed_sends=self.mixed_sends + other.mixed_sends,
            clicks=self.clicks + other.clicks,
            mixed_clicks=self.mixed_clicks + other.mixed_clicks,
            group_clicks=self.group_clicks + other.group_clicks,
            group_errors=self.group_errors + other.group_errors,
            both_clicks=self.both_clicks + other.both_clicks,
            discarded_trains=self.discarded_trains + other.discarded_trains,
            discarded_rounds=self.discarded_rounds + other.discarded_rounds,
            sends_k1=self.sends_k1 + other.sends_k1,
            clicks_k1=self.clicks_k1 + other.clicks_k1,
        )

    def __add__(self, other: "TallyTable") -> "TallyTable":
        return self.merge(other)

    def to_dict(self) -> dict:
        return {
            "schema": "pmqkd-tally/1",
            "D": self.D,
            "sends": self.sends.tolist(),
            "mixed_sends": self.mixed_sends,
            "clicks": self.clicks.tolist(),
            "mixed_clicks": self.mixed_clicks,
            "group_clicks": self.group_clicks.tolist(),
            "group_errors": self.group_errors.tolist(),
            "both_clicks": self.both_clicks,
            "discarded_trains": self.discarded_trains,
            "discarded_rounds": self.discarded_rounds,
            "sends_k1": self.sends_k1.tolist(),
            "clicks_k1": self.clicks_k1.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TallyTable":
        if d.get("schema") != "pmqkd-tally/1":
            raise InvalidInputError(f"unsupported tally schema: {d.get('schema')!r}")
        return cls(
            D=int(d["D"]),
            sends=np.asarray(d["sends"], dtype=np.int64),
            mixed_sends=int(d["mixed_sends"]),
            clicks=np.asarray(d["clicks"], dtype=np.int64),
            mixed_clicks=int(d["mixed_clicks"]),
            group_clicks=np.asarray(d["group_clicks"], dtype=np.int64),
            group_errors=np.asarray(d["group_errors"], dtype=np.int64),
            both_clicks=int(d["both_clicks"]),
            discarded_trains=int(d["discarded_trains"]),
            discarded_rounds=int(d["discarded_rounds"]),
            sends_k1=np.asarray(d["sends_k1"], dtype=np.int64),
            clicks_k1=np.asarray(d["clicks_k1"], dtype=np.int64),
        )

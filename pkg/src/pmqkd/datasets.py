"""Experiment-table datasets: schema, validation, observables, reproduction.

Five distance datasets ship as versioned JSON fixtures; the detailed
101 km per-slice click counts ship as CSV.  ``reproduce`` reruns the
finite-size analyzer on a dataset and reports computed values next to the
published ones without hiding deviations.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .channel import plob_bound
from .finitekey import DecoyInputs, KeyReport, optimize_group_set

DATASET_SCHEMA = "pmqkd-dataset/1"
STATES = ("vacuum", "decoy", "signal")
DATA_DIR_ENV = "PMQKD_DATA_DIR"
DEFAULT_CLOCK_RATE = 312.5e6


class DatasetFormatError(ValueError):
    """Raised when a dataset file is malformed or violates an invariant."""


@dataclass(frozen=True)
class GroupCounts:
    received: dict[str, int]
    erroneous: dict[str, int]

    def __post_init__(self):
        for state in STATES:
            r = self.received.get(state, 0)
            e = self.erroneous.get(state, 0)
            if r < 0 or e < 0:
                raise DatasetFormatError(f"negative count for state {state!r}")
            if e > r:
                raise DatasetFormatError(
                    f"state {state!r}: erroneous rounds {e} exceed received rounds {r}"
                )


@dataclass(frozen=True)
class ExperimentDataset:
    """One distance row of the experiment: channel, intensities, tallies."""

    label: str
    distance_km: float
    channel_transmittance: float
    detector_efficiency: float
    dark_count_per_pulse: float
    signal_intensity_single_side: float
    decoy_intensity_single_side: float
    rounds_total: int
    sent: dict[str, int]
    received: dict[str, int]
    groups: dict[int, GroupCounts]
    f_ec: float
    n_alpha: float
    slices: int = 16
    published_total_transmittance: float | None = None
    published: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rounds_total <= 0:
            raise DatasetFormatError("total sending rounds must be positive")
        for state in STATES:
            if self.sent.get(state, -1) < 0 or self.received.get(state, -1) < 0:
                raise DatasetFormatError(f"missing or negative counts for state {state!r}")
            if self.received[state] > self.sent[state]:
                raise DatasetFormatError(f"state {state!r}: received exceeds sent")
        for g, counts in self.groups.items():
            for state in STATES:
                if counts.received[state] > self.received[state]:
                    raise DatasetFormatError(
                        f"group {g} state {state!r}: group received exceeds state total"
                    )

    @property
    def eta_tot(self) -> float:
        """End-to-end transmittance; prefers the published double-side value."""
        if self.published_total_transmittance is not None:
            return self.published_total_transmittance
        return self.channel_transmittance**2 * self.detector_efficiency

    @property
    def mu_total(self) -> float:
        return 2.0 * self.signal_intensity_single_side

    @property
    def nu_total(self) -> float:
        return 2.0 * self.decoy_intensity_single_side

    def decoy_inputs(self) -> DecoyInputs:
        return DecoyInputs(
            n_rounds=self.rounds_total,
            D=self.slices,
            mu_total=self.mu_total,
            nu_total=self.nu_total,
            f_ec=self.f_ec,
            n_alpha=self.n_alpha,
            sends=(self.sent["signal"], self.sent["decoy"], self.sent["vacuum"]),
            clicks=(self.received["signal"], self.received["decoy"], self.received["vacuum"]),
            signal_group_clicks={g: c.received["signal"] for g, c in self.groups.items()},
            signal_group_errors={g: c.erroneous["signal"] for g, c in self.groups.items()},
        )

    def to_dict(self) -> dict:
        return {
            "schema": DATASET_SCHEMA,
            "label": self.label,
            "distance_km": self.distance_km,
            "channel": {
                "channel_transmittance_single_side": self.channel_transmittance,
                "detector_efficiency": self.detector_efficiency,
                "dark_count_per_pulse": self.dark_count_per_pulse,
                "total_transmittance_double_side": self.published_total_transmittance,
            },
            "intensities": {
                "signal_single_side": self.signal_intensity_single_side,
                "decoy_single_side": self.decoy_intensity_single_side,
            },
            "rounds": {
                "total": self.rounds_total,
                "sent": dict(self.sent),
                "received": dict(self.received),
                "received_by_group": {
                    str(g): dict(c.received) for g, c in sorted(self.groups.items())
                },
                "errors_by_group": {
                    str(g): dict(c.erroneous) for g, c in sorted(self.groups.items())
                },
            },
            "analysis": {"f_ec": self.f_ec, "n_alpha": self.n_alpha, "slices": self.slices},
            "published": dict(self.published),
        }


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise DatasetFormatError(f"missing field {key!r} in {context}")
    return mapping[key]


def dataset_from_dict(doc: dict, source: str = "<memory>") -> ExperimentDataset:
    if doc.get("schema") != DATASET_SCHEMA:
        raise DatasetFormatError(
            f"{source}: unsupported schema {doc.get('schema')!r}, expected {DATASET_SCHEMA!r}"
        )
    channel = _require(doc, "channel", source)
    intensities = _require(doc, "intensities", source)
    rounds = _require(doc, "rounds", source)
    analysis = _require(doc, "analysis", source)
    received_by_group = _require(rounds, "received_by_group", f"{source}:rounds")
    errors_by_group = _require(rounds, "errors_by_group", f"{source}:rounds")
    groups: dict[int, GroupCounts] = {}
    for g_str, received in received_by_group.items():
        erroneous = errors_by_group.get(g_str)
        if erroneous is None:
            raise DatasetFormatError(f"{source}: group {g_str} has no error counts")
        try:
            groups[int(g_str)] = GroupCounts(
                received={s: int(received[s]) for s in STATES},
                erroneous={s: int(erroneous[s]) for s in STATES},
            )
        except DatasetFormatError as exc:
            raise DatasetFormatError(f"{source}: group {g_str}: {exc}") from None
    try:
        return ExperimentDataset(
            label=_require(doc, "label", source),
            distance_km=float(_require(doc, "distance_km", source)),
            channel_transmittance=float(
                _require(channel, "channel_transmittance_single_side", f"{source}:channel")
            ),
            detector_efficiency=float(
                _require(channel, "detector_efficiency", f"{source}:channel")
            ),
            dark_count_per_pulse=float(
                _require(channel, "dark_count_per_pulse", f"{source}:channel")
            ),
            signal_intensity_single_side=float(
                _require(intensities, "signal_single_side", f"{source}:intensities")
            ),
            decoy_intensity_single_side=float(
                _require(intensities, "decoy_single_side", f"{source}:intensities")
            ),
            rounds_total=int(_require(rounds, "total", f"{source}:rounds")),
            sent={s: int(v) for s, v in _require(rounds, "sent", f"{source}:rounds").items()},
            received={
                s: int(v) for s, v in _require(rounds, "received", f"{source}:rounds").items()
            },
            groups=groups,
            f_ec=float(_require(analysis, "f_ec", f"{source}:analysis")),
            n_alpha=float(_require(analysis, "n_alpha", f"{source}:analysis")),
            slices=int(analysis.get("slices", 16)),
            published_total_transmittance=channel.get("total_transmittance_double_side"),
            published=doc.get("published", {}),
        )
    except DatasetFormatError:
        raise
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{source}: {exc}") from None


def load_dataset(path: str | os.PathLike) -> ExperimentDataset:
    """Load and validate a dataset file; errors name the offending field."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    return dataset_from_dict(doc, source=str(path))


def data_dir() -> Path:
    override = os.environ.get(DATA_DIR_ENV)
    if override:
        return Path(override)
    return Path(str(resources.files("pmqkd").joinpath("data")))


def bundled_path(name: str) -> Path:
    """Resolve a bundled dataset by label ('502km'), file name, or path."""
    p = Path(name)
    if p.exists():
        return p
    candidates = [name, f"{name}.json"]
    for cand in candidates:
        full = data_dir() / cand
        if full.exists():
            return full
    raise FileNotFoundError(
        f"no dataset {name!r}; available: {sorted(f.name for f in data_dir().glob('*.json'))}"
    )


def list_bundled() -> list[str]:
    return sorted(f.stem for f in data_dir().glob("*.json"))


@dataclass(frozen=True)
class Observables:
    label: str
    gains: dict[str, float]
    qber_by_group: dict[int, float | None]
    eta_tot: float
    plob: float


def compute_observables(ds: ExperimentDataset) -> Observables:
    """Per-group signal QBERs, per-state gains, and the linear bound."""
    gains = {s: ds.received[s] / ds.sent[s] for s in STATES if ds.sent[s] > 0}
    qber: dict[int, float | None] = {}
    for g, counts in sorted(ds.groups.items()):
        m = counts.received["signal"]
        qber[g] = counts.erroneous["signal"] / m if m > 0 else None
    return Observables(
        label=ds.label,
        gains=gains,
        qber_by_group=qber,
        eta_tot=ds.eta_tot,
        plob=plob_bound(ds.eta_tot),
    )


@dataclass(frozen=True)
class ComparisonRow:
    quantity: str
    computed: float
    published: float | None

    @property
    def relative_deviation(self) -> float | None:
        if self.published in (None, 0):
            return None
        return (self.computed - self.published) / self.published


@dataclass(frozen=True)
class ReproduceResult:
    dataset: ExperimentDataset
    report: KeyReport
    observables: Observables
    rows: list[ComparisonRow]
    bits_per_second: float | None = None

    def to_text(self) -> str:
        lines = [f"dataset {self.dataset.label}: computed vs published"]
        lines.append(f"{'quantity':<26}{'computed':>14}{'published':>14}{'rel.dev':>10}")
        for row in self.rows:
            pub = f"{row.published:.6g}" if row.published is not None else "-"
            dev = (
                f"{row.relative_deviation:+.1%}"
                if row.relative_deviation is not None
                else "-"
            )
            lines.append(f"{row.quantity:<26}{row.computed:>14.6g}{pub:>14}{dev:>10}")
        if self.bits_per_second is not None:
            lines.append(f"key rate (bps, with duty factor): {self.bits_per_second:.4g}")
        lines.append(f"group set: {list(self.report.group_set)}")
        return "\n".join(lines)


def reproduce(
    ds: ExperimentDataset,
    duty_factor: float | None = None,
    clock_rate: float = DEFAULT_CLOCK_RATE,
) -> ReproduceResult:
    """Rerun the analyzer on a dataset and tabulate against published values.

    Bits-per-second conversion is opt-in through ``duty_factor`` because the
    quantum-pulse duty cycle was not published.
    """
    obs = compute_observables(ds)
    inputs = ds.decoy_inputs()
    report = optimize_group_set(inputs, plob_rate=obs.plob)
    pub = ds.published

    rows = [
        ComparisonRow("PLOB bound", obs.plob, pub.get("plob_bound")),
        ComparisonRow(
            "aligned QBER (%)",
            (obs.qber_by_group.get(0) or 0.0) * 100.0,
            pub.get("aligned_qber_percent"),
        ),
        ComparisonRow("key length", report.key_length, pub.get("key_length")),
        ComparisonRow("key rate per round", report.key_rate, _published_rate(ds)),
        ComparisonRow("failure probability", report.epsilon_total,
                      pub.get("failure_probability")),
    ]
    if report.expansion_factor is not None:
        rows.append(
            ComparisonRow("expansion factor", report.expansion_factor,
                          pub.get("expansion_factor"))
        )
    bps = None
    if duty_factor is not None:
        bps = report.key_rate * clock_rate * duty_factor
    return ReproduceResult(dataset=ds, report=report, observables=obs, rows=rows,
                           bits_per_second=bps)


def _published_rate(ds: ExperimentDataset) -> float | None:
    k = ds.published.get("key_length")
    if k is None:
        return None
    return k / ds.rounds_total


@dataclass(frozen=True)
class SliceCountMatrix:
    """Detailed per-slice click counts: (phase slice, phase-difference index, detector)."""

    counts: np.ndarray
    label: str = "101km"

    def __post_init__(self):
        if self.counts.shape != (16, 16, 2):
            raise DatasetFormatError(
                f"slice count matrix must be 16x16x2, got {self.counts.shape}"
            )
        if (self.counts < 0).any():
            raise DatasetFormatError("slice counts must be nonnegative")

    @property
    def total_clicks(self) -> int:
        return int(self.counts.sum())

    def left_fraction(self, opd: int) -> np.ndarray:
        """Left-detector click fraction per phase slice at one OPD column."""
        col = self.counts[:, opd, :]
        totals = col.sum(axis=1)
        return np.where(totals > 0, col[:, 0] / np.maximum(totals, 1), np.nan)

    def visibility(self, phase_slice: int) -> float:
        """Interference visibility across OPD columns for one source slice."""
        left = self.counts[phase_slice, :, 0].astype(float)
        right = self.counts[phase_slice, :, 1].astype(float)
        frac = left / (left + right)
        return float((frac.max() - frac.min()) / (frac.max() + frac.min()))


def load_slice_matrix(path: str | os.PathLike) -> SliceCountMatrix:
    path = Path(path)
    counts = np.zeros((16, 16, 2), dtype=np.int64)
    seen = np.zeros((16, 16), dtype=bool)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"phase_slice", "opd", "det_l", "det_r"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DatasetFormatError(
                f"{path}: expected columns {sorted(required)}, got {reader.fieldnames}"
            )
        for line, row in enumerate(reader, start=2):
            try:
                s, o = int(row["phase_slice"]), int(row["opd"])
                l, r = int(row["det_l"]), int(row["det_r"])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{line}: {exc}") from None
            if not (0 <= s < 16 and 0 <= o < 16):
                raise DatasetFormatError(f"{path}:{line}: indices out of range")
            counts[s, o, 0] = l
            counts[s, o, 1] = r
            seen[s, o] = True
    if not seen.all():
        missing = int((~seen).sum())
        raise DatasetFormatError(f"{path}: {missing} (slice, opd) cells missing")
    return SliceCountMatrix(counts=counts, label=path.stem)

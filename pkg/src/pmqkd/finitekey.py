"""Finite-size decoy-state estimation and key-length accounting.

The pipeline bounds the expected click counts of each joint intensity
setting from the observed tallies (inverse concentration bound), turns them
into a lower bound on the single-photon yield, maps that back into the
observed domain for the signal rounds of the kept phase groups (direct
concentration bound), and finally prices privacy amplification through the
even-photon fraction.

Failure-probability bookkeeping is one-sided: each consumed bound side
contributes its own tail probability, and the report totals exactly the
tails the estimate relies on.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .protocol import (
    SETTING_SIGNAL,
    SETTING_WEAK,
    SETTING_VACUUM,
    InvalidInputError,
    ProtocolParams,
    TallyTable,
    binary_entropy,
)


class DegenerateBoundError(ValueError):
    """Raised when an observation is too small for a positive lower bound."""


def g2(x: float) -> float:
    """Concentration exponent g2(x) = ln(1+x) - x/(1+x); zero iff x = 0."""
    if x <= -1.0:
        raise InvalidInputError(f"g2 argument must exceed -1, got {x}")
    return math.log1p(x) - x / (1.0 + x)


@dataclass(frozen=True)
class BoundedValue:
    """An interval around an observed or expected count with its failure tails.

    ``eps_lower`` bounds the probability that the true quantity lies below
    ``lower``; ``eps_upper`` the probability it lies above ``upper``.
    ``epsilon`` is their sum (the two-sided failure probability).
    """

    value: float
    lower: float
    upper: float
    eps_lower: float
    eps_upper: float
    degenerate: bool = False

    def __post_init__(self):
        if not (self.lower <= self.value <= self.upper):
            raise InvalidInputError("bounds must bracket the value")

    @property
    def epsilon(self) -> float:
        return self.eps_lower + self.eps_upper

    @property
    def vacuous(self) -> bool:
        return self.epsilon >= 1.0


def chernoff_inverse(chi: float, n_alpha: float, clamp: bool = False) -> BoundedValue:
    """Bound the expectation of a count from one observation of it.

    Presets the interval at chi -+ n_alpha*sqrt(chi) and prices each side
    with the concentration exponent at the Gaussian-equivalent relative
    deviation n_alpha/sqrt(chi).  A lower preset at or below zero raises
    DegenerateBoundError unless ``clamp`` is set, in which case the lower
    bound is pinned to zero with the failure tails unchanged.
    """
    if chi < 0:
        raise InvalidInputError(f"observed count must be nonnegative, got {chi}")
    if n_alpha < 0:
        raise InvalidInputError("n_alpha must be nonnegative")
    if chi == 0.0:
        if not clamp:
            raise DegenerateBoundError("zero observation cannot bound the expectation below")
        return BoundedValue(value=0.0, lower=0.0, upper=0.0,
                            eps_lower=1.0, eps_upper=1.0, degenerate=True)
    width = n_alpha * math.sqrt(chi)
    lower, upper = chi - width, chi + width
    delta = n_alpha / math.sqrt(chi)
    tail = math.exp(-chi * g2(delta)) if delta > 0 else 1.0
    degenerate = lower <= 0.0
    if degenerate and not clamp:
        raise DegenerateBoundError(
            f"observation {chi} too small for a positive lower bound at n_alpha={n_alpha}"
        )
    return BoundedValue(
        value=chi,
        lower=max(lower, 0.0),
        upper=upper,
        eps_lower=tail,
        eps_upper=tail,
        degenerate=degenerate,
    )


def chernoff_direct(expect: float, n_alpha: float) -> BoundedValue:
    """Bound a future observation around its known expectation.

    Presets the interval at expect -+ n_alpha*sqrt(expect); each side fails
    with probability exp(-delta^2*E/(2+delta)) at delta = n_alpha/sqrt(E).
    """
    if expect <= 0:
        raise InvalidInputError(f"expectation must be positive, got {expect}")
    if n_alpha < 0:
        raise InvalidInputError("n_alpha must be nonnegative")
    width = n_alpha * math.sqrt(expect)
    delta = n_alpha / math.sqrt(expect)
    tail = math.exp(-delta**2 * expect / (2.0 + delta)) if delta > 0 else 1.0
    return BoundedValue(
        value=expect,
        lower=max(expect - width, 0.0),
        upper=expect + width,
        eps_lower=tail,
        eps_upper=tail,
        degenerate=expect - width <= 0.0,
    )


def y1_lower(
    q_signal_upper: float,
    q_weak_lower: float,
    q_vacuum_upper: float,
    mu_total: float,
    nu_total: float,
) -> float:
    """Lower-bound the single-photon yield from gain bounds of the three settings.

    The weak-decoy gain enters from below, the signal and vacuum gains from
    above; the result is clamped to [0, 1].
    """
    if not 0.0 < nu_total < mu_total:
        raise InvalidInputError("intensities must satisfy 0 < nu < mu")
    mu, nu = mu_total, nu_total
    y1 = (
        mu
        / (mu * nu - nu**2)
        * (
            q_weak_lower * math.exp(nu)
            - q_signal_upper * math.exp(mu) * nu**2 / mu**2
            - (mu**2 - nu**2) / mu**2 * q_vacuum_upper
        )
    )
    return min(max(y1, 0.0), 1.0)


@dataclass(frozen=True)
class DecoyInputs:
    """The analyzer's view of a dataset or tally.

    ``sends`` and ``clicks`` are per joint setting (signal, weak, vacuum);
    ``signal_group_clicks``/``signal_group_errors`` map merged phase-group
    index to signal-setting counts for the groups that were recorded.
    """

    n_rounds: int
    D: int
    mu_total: float
    nu_total: float
    f_ec: float
    n_alpha: float
    sends: tuple[int, int, int]
    clicks: tuple[int, int, int]
    signal_group_clicks: dict[int, int]
    signal_group_errors: dict[int, int]

    def __post_init__(self):
        if any(s < 0 for s in self.sends) or any(c < 0 for c in self.clicks):
            raise InvalidInputError("counts must be nonnegative")
        for g, e in self.signal_group_errors.items():
            m = self.signal_group_clicks.get(g, 0)
            if not 0 <= e <= m:
                raise InvalidInputError(f"group {g}: errors {e} outside [0, clicks={m}]")

    @property
    def recorded_groups(self) -> list[int]:
        return sorted(self.signal_group_clicks)

    def group_error_rate(self, group: int) -> float:
        m = self.signal_group_clicks[group]
        if m == 0:
            raise InvalidInputError(f"group {group} has no clicks; error rate undefined")
        return self.signal_group_errors[group] / m


def tally_decoy_inputs(tally: TallyTable, params: ProtocolParams) -> DecoyInputs:
    """Project a simulation tally onto the analyzer's input surface."""
    groups = range(tally.D // 2)
    return DecoyInputs(
        n_rounds=tally.n_rounds,
        D=tally.D,
        mu_total=params.mu_total,
        nu_total=params.nu_total,
        f_ec=params.f_ec,
        n_alpha=params.n_alpha,
        sends=tuple(int(x) for x in tally.sends),
        clicks=tuple(int(x) for x in tally.clicks),
        signal_group_clicks={g: int(tally.group_clicks[SETTING_SIGNAL, g]) for g in groups},
        signal_group_errors={g: int(tally.group_errors[SETTING_SIGNAL, g]) for g in groups},
    )


def expected_k_photon_sends(params: ProtocolParams, k: int) -> float:
    """Expected number of rounds whose joint pulse carried exactly k photons."""
    weights = [
        params.n_rounds * params.r_signal**2,
        params.n_rounds * params.r_weak**2,
        params.n_rounds * params.r_vacuum**2,
    ]
    return _expected_k_sends(weights, params.intensities, k)


def _expected_k_sends(setting_rounds, intensities, k: int) -> float:
    if k < 0:
        raise InvalidInputError("photon number must be nonnegative")
    total = 0.0
    for n_a, intensity in zip(setting_rounds, intensities):
        total += n_a * _poisson_pmf(k, intensity)
    return total


def _poisson_pmf(k: int, lam: float) -> float:
    if lam == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(-lam + k * math.log(lam) - math.lgamma(k + 1))


@dataclass(frozen=True)
class DecoyEstimate:
    """Intermediate bounds of the single-photon estimation chain."""

    expected_clicks: dict[str, BoundedValue]
    y1_star_lower: float
    m1_bar_lower: float
    p1_signal_group: float
    m1_signal_lower: float
    even_fraction_upper: float
    eps_expectation: float
    eps_observation: float
    group_set: tuple[int, ...]
    degenerate: bool = False

    @property
    def epsilon_total(self) -> float:
        return self.eps_expectation + self.eps_observation

    def to_dict(self) -> dict:
        return {
            "expected_clicks": {
                name: {
                    "value": bv.value,
                    "lower": bv.lower,
                    "upper": bv.upper,
                    "eps_lower": bv.eps_lower,
                    "eps_upper": bv.eps_upper,
                    "degenerate": bv.degenerate,
                }
                for name, bv in self.expected_clicks.items()
            },
            "y1_star_lower": self.y1_star_lower,
            "m1_bar_lower": self.m1_bar_lower,
            "p1_signal_group": self.p1_signal_group,
            "m1_signal_lower": self.m1_signal_lower,
            "even_fraction_upper": self.even_fraction_upper,
            "eps_expectation": self.eps_expectation,
            "eps_observation": self.eps_observation,
            "epsilon_total": self.epsilon_total,
            "group_set": list(self.group_set),
            "degenerate": self.degenerate,
        }


def m1_lower_in_group(
    y1_star_low: float,
    inputs: DecoyInputs,
    group_set: tuple[int, ...],
) -> tuple[float, float, float, bool]:
    """Observed-domain lower bound on single-photon signal clicks in the groups.

    Returns ``(m1_lower, p1_fraction, eps, degenerate)``.  The expectation is
    the single-photon send estimate restricted to the signal setting and the
    kept groups (fraction 2|J|/D of the signal clicks under uniform phase
    randomization), then mapped to the observed domain.
    """
    if not 0.0 <= y1_star_low <= 1.0:
        raise InvalidInputError("yield bound must lie in [0, 1]")
    p1_by_setting = [
        n_a * _poisson_pmf(1, intensity)
        for n_a, intensity in zip(inputs.sends, (inputs.mu_total, inputs.nu_total, 0.0))
    ]
    n1_inf = sum(p1_by_setting)
    if n1_inf <= 0.0:
        return 0.0, 0.0, 0.0, True
    group_factor = 2.0 * len(group_set) / inputs.D
    p1 = p1_by_setting[SETTING_SIGNAL] * group_factor / n1_inf
    m1_bar = n1_inf * y1_star_low
    expectation = p1 * m1_bar
    if expectation <= 0.0:
        return 0.0, p1, 0.0, True
    bound = chernoff_direct(expectation, inputs.n_alpha)
    return bound.lower, p1, bound.eps_lower, bound.degenerate


def estimate_decoys(inputs: DecoyInputs, group_set: tuple[int, ...] | None = None) -> DecoyEstimate:
    """Run the decoy-state estimation chain on observed counts.

    Only the consumed bound sides contribute to the failure probability:
    the weak setting from below, signal and vacuum from above, and the
    final observed-domain conversion from below.
    """
    if group_set is None:
        group_set = tuple(inputs.recorded_groups)
    names = ("signal", "weak", "vacuum")
    bounds: dict[str, BoundedValue] = {}
    for name, clicks in zip(names, inputs.clicks):
        bounds[name] = chernoff_inverse(float(clicks), inputs.n_alpha, clamp=True)

    sends = inputs.sends
    q_signal_upper = bounds["signal"].upper / sends[SETTING_SIGNAL] if sends[SETTING_SIGNAL] else 0.0
    q_weak_lower = bounds["weak"].lower / sends[SETTING_WEAK] if sends[SETTING_WEAK] else 0.0
    q_vacuum_upper = bounds["vacuum"].upper / sends[SETTING_VACUUM] if sends[SETTING_VACUUM] else 0.0

    y1_low = y1_lower(q_signal_upper, q_weak_lower, q_vacuum_upper,
                      inputs.mu_total, inputs.nu_total)
    eps_expectation = (
        bounds["weak"].eps_lower + bounds["signal"].eps_upper + bounds["vacuum"].eps_upper
    )

    m1_low, p1, eps_observation, degenerate = m1_lower_in_group(y1_low, inputs, group_set)

    m_group = sum(inputs.signal_group_clicks.get(g, 0) for g in group_set)
    if m_group > 0:
        even_upper = min(max(1.0 - m1_low / m_group, 0.0), 1.0)
    else:
        even_upper = 1.0

    n1_inf = sum(
        n_a * _poisson_pmf(1, intensity)
        for n_a, intensity in zip(inputs.sends, (inputs.mu_total, inputs.nu_total, 0.0))
    )
    return DecoyEstimate(
        expected_clicks=bounds,
        y1_star_lower=y1_low,
        m1_bar_lower=n1_inf * y1_low,
        p1_signal_group=p1,
        m1_signal_lower=m1_low,
        even_fraction_upper=even_upper,
        eps_expectation=eps_expectation,
        eps_observation=eps_observation,
        group_set=tuple(group_set),
        degenerate=degenerate or any(b.degenerate for b in bounds.values()),
    )


@dataclass(frozen=True)
class KeyReport:
    """Key length, rate and bookkeeping for one analyzed dataset."""

    group_set: tuple[int, ...]
    key_length: float
    key_per_group: dict[int, float]
    key_rate: float
    n_rounds: int
    even_fraction_upper: float
    epsilon_total: float
    rate_vs_plob: float | None = None
    expansion_factor: float | None = None
    estimate: DecoyEstimate | None = None

    def to_dict(self) -> dict:
        return {
            "group_set": list(self.group_set),
            "key_length": self.key_length,
            "key_per_group": {str(g): k for g, k in self.key_per_group.items()},
            "key_rate": self.key_rate,
            "n_rounds": self.n_rounds,
            "even_fraction_upper": self.even_fraction_upper,
            "epsilon_total": self.epsilon_total,
            "rate_vs_plob": self.rate_vs_plob,
            "expansion_factor": self.expansion_factor,
            "estimate": self.estimate.to_dict() if self.estimate else None,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def key_length(
    inputs: DecoyInputs,
    group_set: tuple[int, ...] | None = None,
    plob_rate: float | None = None,
) -> KeyReport:
    """Key length for a group set, with per-group breakdown and failure total.

    Per-group contributions use each group's own estimation restriction; the
    total uses the joint group-set estimate.  Both clamp at zero.
    """
    if group_set is None:
        group_set = tuple(inputs.recorded_groups)
    group_set = tuple(sorted(group_set))
    missing = [g for g in group_set if g not in inputs.signal_group_clicks]
    if missing:
        raise InvalidInputError(f"tally does not cover groups {missing}")

    m_group_total = sum(inputs.signal_group_clicks[g] for g in group_set)
    if m_group_total == 0:
        return KeyReport(
            group_set=group_set,
            key_length=0.0,
            key_per_group={g: 0.0 for g in group_set},
            key_rate=0.0,
            n_rounds=inputs.n_rounds,
            even_fraction_upper=1.0,
            epsilon_total=0.0,
        )

    estimate = estimate_decoys(inputs, group_set)
    correction = 0.0
    for g in group_set:
        m_g = inputs.signal_group_clicks[g]
        if m_g:
            correction += inputs.f_ec * m_g * binary_entropy(inputs.group_error_rate(g))
    total = max(0.0, m_group_total * (1.0 - binary_entropy(estimate.even_fraction_upper)) - correction)

    per_group: dict[int, float] = {}
    for g in group_set:
        est_g = estimate_decoys(inputs, (g,))
        m_g = inputs.signal_group_clicks[g]
        cost_g = inputs.f_ec * m_g * binary_entropy(inputs.group_error_rate(g)) if m_g else 0.0
        per_group[g] = max(
            0.0, m_g * (1.0 - binary_entropy(est_g.even_fraction_upper)) - cost_g
        )

    rate = total / inputs.n_rounds
    return KeyReport(
        group_set=group_set,
        key_length=total,
        key_per_group=per_group,
        key_rate=rate,
        n_rounds=inputs.n_rounds,
        even_fraction_upper=estimate.even_fraction_upper,
        epsilon_total=estimate.epsilon_total,
        rate_vs_plob=(rate / plob_rate) if plob_rate else None,
        estimate=estimate,
    )


def optimize_group_set(inputs: DecoyInputs, plob_rate: float | None = None) -> KeyReport:
    """Scan nested group sets ordered by error rate and keep the best key.

    Groups without clicks are skipped.  The report carries the expansion
    factor relative to the lowest-error group alone.
    """
    usable = [g for g in inputs.recorded_groups if inputs.signal_group_clicks[g] > 0]
    if not usable:
        return key_length(inputs, (), plob_rate=plob_rate)
    by_error = sorted(usable, key=inputs.group_error_rate)
    best: KeyReport | None = None
    base: KeyReport | None = None
    for size in range(1, len(by_error) + 1):
        report = key_length(inputs, tuple(by_error[:size]), plob_rate=plob_rate)
        if base is None:
            base = report
        if best is None or report.key_length > best.key_length:
            best = report
    expansion = best.key_length / base.key_length if base.key_length > 0 else None
    return KeyReport(
        group_set=best.group_set,
        key_length=best.key_length,
        key_per_group=best.key_per_group,
        key_rate=best.key_rate,
        n_rounds=best.n_rounds,
        even_fraction_upper=best.even_fraction_upper,
        epsilon_total=best.epsilon_total,
        rate_vs_plob=best.rate_vs_plob,
        expansion_factor=expansion,
        estimate=best.estimate,
    )

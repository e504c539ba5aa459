"""Closed-form gains, yields, error rates and rate-distance models.

Conventions: ``mu`` arguments are total intensities (both senders combined,
each side modulates half); ``eta_arm`` is the one-arm transmittance from a
sender to a detector click (channel times detector efficiency); ``eta_tot``
is the end-to-end sender-to-sender transmittance that feeds the repeaterless
bounds.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .protocol import InvalidInputError, binary_entropy


@dataclass(frozen=True)
class ChannelModel:
    """Symmetric lossy channel with threshold detectors.

    eta_ch is the single-side transmittance (sender to midpoint), eta_d the
    detector efficiency, p_d the dark-count probability per detector per
    pulse window, e_d0 the misalignment error of the phase-matched group.
    """

    eta_ch: float
    eta_d: float
    p_d: float = 0.0
    e_d0: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.eta_ch <= 1.0:
            raise InvalidInputError(f"eta_ch must be in (0, 1], got {self.eta_ch}")
        if not 0.0 < self.eta_d <= 1.0:
            raise InvalidInputError(f"eta_d must be in (0, 1], got {self.eta_d}")
        if not 0.0 <= self.p_d < 0.5:
            raise InvalidInputError(f"p_d must be in [0, 0.5), got {self.p_d}")
        if not 0.0 <= self.e_d0 < 0.5:
            raise InvalidInputError(f"e_d0 must be in [0, 0.5), got {self.e_d0}")

    @property
    def eta_arm(self) -> float:
        """Per-arm transmittance including detection, the eta of the gain model."""
        return self.eta_ch * self.eta_d

    @property
    def eta_tot(self) -> float:
        """End-to-end transmittance (channel squared, detector once)."""
        return self.eta_ch**2 * self.eta_d


@dataclass(frozen=True)
class MDIParams:
    """Symmetric-channel MDI-QKD model inputs (per-side quantities)."""

    mu_a: float
    mu_b: float
    eta_a: float
    eta_b: float
    p_d: float = 0.0
    e_d: float = 0.0
    e_0: float = 0.5

    def __post_init__(self):
        if min(self.mu_a, self.mu_b, self.eta_a, self.eta_b) < 0:
            raise InvalidInputError("intensities and transmittances must be nonnegative")
        if not 0.0 <= self.e_0 <= 1.0:
            raise InvalidInputError("background error e_0 must lie in [0, 1]")
        if not 0.0 <= self.p_d < 0.5:
            raise InvalidInputError("p_d must lie in [0, 0.5)")

    @property
    def mu_reaching(self) -> float:
        """Mean photon number reaching the measurement beam splitter."""
        return self.eta_a * self.mu_a + self.eta_b * self.mu_b

    @property
    def interference_x(self) -> float:
        return 0.5 * math.sqrt(self.eta_a * self.mu_a * self.eta_b * self.mu_b)


def yield_k(k: int, ch: ChannelModel) -> float:
    """Click probability given k photons were sent in total."""
    if k < 0:
        raise InvalidInputError("photon number must be nonnegative")
    y = 1.0 - (1.0 - 2.0 * ch.p_d) * (1.0 - ch.eta_arm) ** k
    return min(max(y, 0.0), 1.0)


def gain_pm(mu_total: float, ch: ChannelModel) -> float:
    """Probability of a successful detection per round at total intensity mu."""
    if mu_total < 0:
        raise InvalidInputError("intensity must be nonnegative")
    q = 1.0 - (1.0 - 2.0 * ch.p_d) * math.exp(-ch.eta_arm * mu_total)
    return min(max(q, 0.0), 1.0)


def bit_error_pm(mu_total: float, phi_delta: float, ch: ChannelModel) -> float:
    """Bit error rate at a fixed residual phase offset ``phi_delta``.

    Clamped to [0, 1]; the approximation can marginally exceed 1 at extreme
    parameters.
    """
    q = gain_pm(mu_total, ch)
    if q <= 0.0:
        raise InvalidInputError("gain is zero; error rate undefined")
    x = ch.eta_arm * mu_total
    e = math.exp(-x) / q * (ch.p_d + x * math.sin(phi_delta / 2.0) ** 2)
    return min(max(e, 0.0), 1.0)


def bit_error_matched(mu_total: float, ch: ChannelModel, misalignment: float | None = None) -> float:
    """Bit error rate of a group with misalignment fraction ``misalignment``.

    Defaults to the channel's matched-group misalignment ``e_d0``.
    """
    q = gain_pm(mu_total, ch)
    if q <= 0.0:
        raise InvalidInputError("gain is zero; error rate undefined")
    e_d = ch.e_d0 if misalignment is None else misalignment
    x = ch.eta_arm * mu_total
    e = math.exp(-x) / q * (ch.p_d + x * e_d)
    return min(max(e, 0.0), 1.0)


def key_rate_pm_asymptotic(
    mu_total: float,
    ch: ChannelModel,
    D: int = 16,
    group_misalignment: dict[int, float] | None = None,
    f_ec: float = 1.1,
) -> float:
    """Asymptotic key rate in bits per round for the kept phase groups.

    ``group_misalignment`` maps each kept merged group to its misalignment
    error fraction; by default only the matched group is kept, at ``e_d0``.
    Each merged group captures a fraction 2/D of the clicks.  Negative
    per-group contributions are clipped at zero.
    """
    if group_misalignment is None:
        group_misalignment = {0: ch.e_d0}
    if not group_misalignment:
        return 0.0
    q_mu = gain_pm(mu_total, ch)
    if q_mu <= 0.0:
        return 0.0
    y1 = yield_k(1, ch)
    single_fraction = mu_total * math.exp(-mu_total) * y1 / q_mu
    q_even = min(max(1.0 - single_fraction, 0.0), 1.0)
    privacy = 1.0 - binary_entropy(q_even)
    rate = 0.0
    for _group, e_d in group_misalignment.items():
        err = bit_error_matched(mu_total, ch, misalignment=e_d)
        rate += (2.0 / D) * q_mu * max(0.0, privacy - f_ec * binary_entropy(err))
    return rate


def tgw_bound(eta_tot: float) -> float:
    """Repeaterless secret-key upper bound -log2((1-eta)/(1+eta))."""
    if not 0.0 < eta_tot < 1.0:
        raise InvalidInputError(f"transmittance must be in (0, 1), got {eta_tot}")
    return -math.log2((1.0 - eta_tot) / (1.0 + eta_tot))


def plob_bound(eta_tot: float) -> float:
    """Repeaterless secret-key capacity -log2(1-eta), the linear bound."""
    if not 0.0 < eta_tot < 1.0:
        raise InvalidInputError(f"transmittance must be in (0, 1), got {eta_tot}")
    return -math.log2(1.0 - eta_tot)


def bessel_i0(x: float) -> float:
    """Modified Bessel function of the first kind, order zero.

    Power series for x < 15, asymptotic expansion above; relative error
    below 1e-10 on [0, 50].
    """
    if x < 0:
        raise InvalidInputError("argument must be nonnegative")
    if x < 15.0:
        term = 1.0
        total = 1.0
        k = 0
        quarter_x2 = 0.25 * x * x
        while term > 1e-18 * total:
            k += 1
            term *= quarter_x2 / (k * k)
            total += term
        return total
    # Abramowitz-Stegun style asymptotic series in 1/(8x)
    inv8x = 1.0 / (8.0 * x)
    series = 1.0
    term = 1.0
    for k in range(1, 12):
        term *= (2 * k - 1) ** 2 * inv8x / k
        series += term
    return math.exp(x) / math.sqrt(2.0 * math.pi * x) * series


def key_rate_mdi(p: MDIParams, f_ec: float = 1.1) -> tuple[float, bool]:
    """Asymptotic MDI-QKD key rate in bits per round.

    Returns ``(rate, degenerate)``; ``degenerate`` is set when the
    single-photon-pair yield vanishes and the rate is pinned to zero.  The
    entropy argument of the single-photon term is the error rate normalized
    by the yield.
    """
    pd = p.p_d
    eta_a, eta_b = p.eta_a, p.eta_b
    y11 = (1.0 - pd) ** 2 * (
        eta_a * eta_b / 2.0
        + (2.0 * eta_a + 2.0 * eta_b - 3.0 * eta_a * eta_b) * pd
        + 4.0 * (1.0 - eta_a) * (1.0 - eta_b) * pd**2
    )
    if y11 <= 0.0:
        return 0.0, True
    e11_weighted = p.e_0 * y11 - (p.e_0 - p.e_d) * (1.0 - pd**2) * eta_a * eta_b / 2.0
    e11 = min(max(e11_weighted / y11, 0.0), 1.0)
    q11 = p.mu_a * p.mu_b * math.exp(-p.mu_a - p.mu_b) * y11

    mu_prime = p.mu_reaching
    x = p.interference_x
    q_rect_c = (
        2.0
        * (1.0 - pd) ** 2
        * math.exp(-mu_prime / 2.0)
        * (1.0 - (1.0 - pd) * math.exp(-eta_a * p.mu_a / 2.0))
        * (1.0 - (1.0 - pd) * math.exp(-eta_b * p.mu_b / 2.0))
    )
    q_rect_e = (
        2.0
        * pd
        * (1.0 - pd) ** 2
        * math.exp(-mu_prime / 2.0)
        * (bessel_i0(2.0 * x) - (1.0 - pd) * math.exp(-mu_prime / 2.0))
    )
    q_rect = q_rect_c + q_rect_e
    if q_rect <= 0.0:
        return 0.0, True
    e_rect = min(max((p.e_d * q_rect_c + (1.0 - p.e_d) * q_rect_e) / q_rect, 0.0), 1.0)

    rate = 0.5 * (q11 * (1.0 - binary_entropy(e11)) - f_ec * q_rect * binary_entropy(e_rect))
    return max(0.0, rate), False


def golden_section_max(fn, lo: float, hi: float, tol: float = 1e-4) -> tuple[float, float]:
    """Maximize a unimodal scalar function on [lo, hi]; returns (x, fn(x))."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fn(d)
    x = (a + b) / 2.0
    return x, fn(x)


@dataclass(frozen=True)
class CurvePoint:
    distance_km: float
    eta_tot: float
    rate_pm: float
    rate_mdi: float
    rate_plob: float
    rate_tgw: float


def rate_distance_curve(
    fiber_loss_db_per_km: float,
    eta_d: float,
    p_d: float,
    e_d0: float,
    distances_km,
    f_ec: float = 1.1,
    D: int = 16,
    group_misalignment: dict[int, float] | None = None,
    workers: int = 1,
) -> list[CurvePoint]:
    """Evaluate optimized rate models over sender-to-sender distances.

    The midpoint sits at half the distance, so the single-side transmittance
    is 10**(-loss*d/20).  The signal intensity of each model is optimized
    per distance by golden-section search over (0, 1].
    """
    if fiber_loss_db_per_km <= 0:
        raise InvalidInputError("fiber loss coefficient must be positive")
    distances = list(distances_km)

    def eval_point(dist: float) -> CurvePoint:
        eta_ch = 10.0 ** (-fiber_loss_db_per_km * (dist / 2.0) / 10.0)
        ch = ChannelModel(eta_ch=eta_ch, eta_d=eta_d, p_d=p_d, e_d0=e_d0)
        _, r_pm = golden_section_max(
            lambda mu: key_rate_pm_asymptotic(
                mu, ch, D=D, group_misalignment=group_misalignment, f_ec=f_ec
            ),
            1e-4,
            1.0,
        )
        eta_arm = ch.eta_arm

        def mdi_rate(mu):
            p = MDIParams(mu_a=mu / 2, mu_b=mu / 2, eta_a=eta_arm, eta_b=eta_arm,
                          p_d=p_d, e_d=e_d0)
            return key_rate_mdi(p, f_ec=f_ec)[0]

        _, r_mdi = golden_section_max(mdi_rate, 1e-4, 1.0)
        eta_tot = ch.eta_tot
        # at zero loss with a perfect detector the repeaterless capacity diverges
        lossless = eta_tot >= 1.0
        return CurvePoint(
            distance_km=dist,
            eta_tot=eta_tot,
            rate_pm=r_pm,
            rate_mdi=r_mdi,
            rate_plob=math.inf if lossless else plob_bound(eta_tot),
            rate_tgw=math.inf if lossless else tgw_bound(eta_tot),
        )

    if workers > 1 and len(distances) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(eval_point, distances))
    return [eval_point(d) for d in distances]


def curve_to_csv(points: list[CurvePoint]) -> str:
    """Render curve points as CSV with 6 significant digits."""
    lines = ["distance_km,eta_tot,R_pm,R_mdi,R_plob,R_tgw"]
    for p in points:
        lines.append(
            f"{p.distance_km:.6g},{p.eta_tot:.6g},{p.rate_pm:.6g},"
            f"{p.rate_mdi:.6g},{p.rate_plob:.6g},{p.rate_tgw:.6g}"
        )
    return "\n".join(lines) + "\n"

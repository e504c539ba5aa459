import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pmqkd import (
    ChannelModel,
    InvalidInputError,
    MDIParams,
    bessel_i0,
    bit_error_matched,
    bit_error_pm,
    gain_pm,
    key_rate_mdi,
    key_rate_pm_asymptotic,
    plob_bound,
    rate_distance_curve,
    tgw_bound,
    yield_k,
)
from pmqkd.channel import curve_to_csv, golden_section_max


def make_channel(eta_arm, p_d=0.0, e_d0=0.0):
    # split the arm transmittance over a fictitious fibre/detector pair
    return ChannelModel(eta_ch=eta_arm, eta_d=1.0, p_d=p_d, e_d0=e_d0)


class TestYieldAndGain:
    def test_vacuum_yield_is_twice_dark(self):
        ch = make_channel(0.3, p_d=1e-3)
        assert yield_k(0, ch) == pytest.approx(2e-3, rel=1e-12)

    def test_single_and_double_photon(self):
        ch = make_channel(0.5)
        assert yield_k(1, ch) == pytest.approx(0.5)
        assert yield_k(2, ch) == pytest.approx(0.75)

    def test_gain_vacuum(self):
        assert gain_pm(0.0, make_channel(0.3)) == 0.0
        assert gain_pm(0.0, make_channel(0.3, p_d=2.29e-7)) == pytest.approx(
            4.58e-7, rel=1e-6
        )

    def test_gain_at_table_scale(self):
        # 1 - exp(-0.02346*0.0716) evaluated directly
        ch = make_channel(0.02346)
        assert gain_pm(0.0716, ch) == pytest.approx(1.678326e-3, abs=1e-7)

    @pytest.mark.parametrize("mu,eta,p_d", [
        (0.0716, 0.02346, 0.0),
        (0.2, 0.1, 1e-6),
        (0.5, 0.4, 1e-4),
        (1.5, 0.9, 0.01),
    ])
    def test_gain_equals_poisson_mixture(self, mu, eta, p_d):
        ch = make_channel(eta, p_d=p_d)
        total, pk = 0.0, math.exp(-mu)
        k = 0
        while pk > 1e-14 or k <= mu:
            total += pk * yield_k(k, ch)
            k += 1
            pk *= mu / k
        assert gain_pm(mu, ch) == pytest.approx(total, abs=1e-10)


class TestBitError:
    def test_perfect_interference(self):
        ch = make_channel(0.1)
        assert bit_error_pm(0.2, 0.0, ch) == 0.0

    def test_antiphase(self):
        # x*exp(-x)/(1-exp(-x)) at x = 0.01
        ch = make_channel(0.05)
        assert bit_error_pm(0.2, math.pi, ch) == pytest.approx(0.9950083, abs=1e-4)

    def test_matched_group_model(self):
        ch = make_channel(0.02346, p_d=1e-7, e_d0=0.053)
        x = ch.eta_arm * 0.0716
        expect = (ch.p_d + x * 0.053) * math.exp(-x) / gain_pm(0.0716, ch)
        assert bit_error_matched(0.0716, ch) == pytest.approx(expect, rel=1e-12)

    def test_even_in_phase(self):
        ch = make_channel(0.1, p_d=1e-6)
        for phi in (0.3, 1.1, 2.9):
            assert bit_error_pm(0.2, phi, ch) == pytest.approx(
                bit_error_pm(0.2, -phi, ch), rel=1e-12
            )

    def test_monotone_on_half_period(self):
        ch = make_channel(0.1, p_d=1e-6)
        grid = np.linspace(0, math.pi, 50)
        vals = [bit_error_pm(0.2, p, ch) for p in grid]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_undefined_at_zero_gain(self):
        with pytest.raises(InvalidInputError):
            bit_error_pm(0.0, 0.0, make_channel(0.5))


class TestAsymptoticRate:
    def test_positive_at_strong_channel(self):
        ch = make_channel(0.9)
        assert key_rate_pm_asymptotic(0.1, ch) > 0

    def test_exceeds_linear_bound_at_302km_row(self):
        # table channel: single-side transmittance 1.29e-3, detector 0.23
        ch = ChannelModel(eta_ch=1.29e-3, eta_d=0.23, p_d=7.75e-8, e_d0=0.053)
        rate = key_rate_pm_asymptotic(2 * 0.0384, ch)
        assert rate > plob_bound(ch.eta_tot)

    def test_empty_group_set(self):
        ch = make_channel(0.5)
        assert key_rate_pm_asymptotic(0.1, ch, group_misalignment={}) == 0.0

    def test_nonincreasing_in_misalignment(self):
        rates = [
            key_rate_pm_asymptotic(0.1, make_channel(0.1, e_d0=e))
            for e in (0.0, 0.02, 0.05, 0.1)
        ]
        assert all(b <= a for a, b in zip(rates, rates[1:]))


class TestProbabilityRanges:
    @given(
        st.integers(0, 40),
        st.floats(1e-6, 1.0),
        st.floats(0.0, 0.49),
        st.floats(0.0, 3.0),
        st.floats(-10.0, 10.0),
    )
    def test_all_outputs_are_probabilities(self, k, eta_arm, p_d, mu, phi):
        ch = make_channel(eta_arm, p_d=p_d)
        assert 0.0 <= yield_k(k, ch) <= 1.0
        q = gain_pm(mu, ch)
        assert 0.0 <= q <= 1.0
        if q > 0.0:
            assert 0.0 <= bit_error_pm(mu, phi, ch) <= 1.0

    def test_table_channel_consistency(self):
        # 101 km row: single-side transmittance and detector efficiency must
        # reproduce the published double-side total within rounding
        ch = ChannelModel(eta_ch=1.02e-1, eta_d=0.23)
        assert ch.eta_tot == pytest.approx(2.39e-3, rel=2e-3)
        assert abs(ch.eta_tot - 2.40e-3) / 2.40e-3 < 5e-3
        assert ch.eta_tot <= ch.eta_arm


class TestBounds:
    def test_tgw_anchors(self):
        assert tgw_bound(1.0 / 3.0) == pytest.approx(1.0, rel=1e-12)
        assert tgw_bound(0.5) == pytest.approx(math.log2(3), rel=1e-12)

    def test_tgw_small_eta_expansion(self):
        eta = 1e-6
        assert tgw_bound(eta) == pytest.approx(2 * eta / math.log(2), rel=1e-3)

    def test_plob_anchors(self):
        assert plob_bound(0.5) == pytest.approx(1.0, rel=1e-12)
        assert float(f"{plob_bound(2.40e-3):.3g}") == 3.47e-3
        assert float(f"{plob_bound(3.77e-7):.3g}") == 5.44e-7

    def test_tgw_dominates_plob(self):
        for eta in np.geomspace(1e-9, 0.99, 40):
            assert tgw_bound(eta) >= plob_bound(eta)

    def test_domain(self):
        for fn in (tgw_bound, plob_bound):
            for bad in (0.0, 1.0, -0.5, 1.5):
                with pytest.raises(InvalidInputError):
                    fn(bad)


class TestBessel:
    def test_anchor_values(self):
        assert bessel_i0(0.0) == 1.0
        assert bessel_i0(1.0) == pytest.approx(1.2660658, abs=1e-6)
        assert bessel_i0(2.0) == pytest.approx(2.2795853, abs=1e-6)

    def test_against_mpmath_oracle(self):
        mpmath = pytest.importorskip("mpmath")
        for x in np.concatenate([np.linspace(0.1, 14.9, 25), np.linspace(15.1, 50, 25)]):
            ref = float(mpmath.besseli(0, float(x)))
            assert bessel_i0(float(x)) == pytest.approx(ref, rel=1e-10)

    def test_rejects_negative(self):
        with pytest.raises(InvalidInputError):
            bessel_i0(-1.0)


class TestMDI:
    def test_error_free_single_photon_term(self):
        p = MDIParams(mu_a=0.1, mu_b=0.1, eta_a=0.2, eta_b=0.2, p_d=0.0, e_d=0.0)
        rate, degenerate = key_rate_mdi(p)
        assert not degenerate
        # with e11 = 0 the single-photon term is fully coherent
        y11 = 0.2 * 0.2 / 2
        q11 = 0.1 * 0.1 * math.exp(-0.2) * y11
        assert rate <= 0.5 * q11 + 1e-15

    def test_erroneous_gain_vanishes_without_darks(self):
        p = MDIParams(mu_a=0.1, mu_b=0.1, eta_a=0.2, eta_b=0.2, p_d=0.0, e_d=0.02)
        pd = p.p_d
        q_rect_e = (
            2 * pd * (1 - pd) ** 2 * math.exp(-p.mu_reaching / 2)
            * (bessel_i0(2 * p.interference_x) - (1 - pd) * math.exp(-p.mu_reaching / 2))
        )
        assert q_rect_e == 0.0

    def test_degenerate_channel_flag(self):
        p = MDIParams(mu_a=0.1, mu_b=0.1, eta_a=0.0, eta_b=0.0, p_d=0.0, e_d=0.0)
        rate, degenerate = key_rate_mdi(p)
        assert rate == 0.0 and degenerate

    def test_orders_of_magnitude_below_pm(self):
        pts = rate_distance_curve(0.2, eta_d=0.23, p_d=1e-9, e_d0=0.053,
                                  distances_km=[300.0])
        ratio = pts[0].rate_pm / pts[0].rate_mdi
        assert 10**2.5 < ratio < 10**4.5


class TestCurve:
    def test_empty_distances(self):
        assert rate_distance_curve(0.2, 0.23, 0.0, 0.053, []) == []

    def test_zero_distance_ideal(self):
        pts = rate_distance_curve(0.2, eta_d=1.0, p_d=0.0, e_d0=0.0,
                                  distances_km=[0.0])
        assert pts[0].rate_pm > 0 and math.isfinite(pts[0].rate_pm)

    def test_rates_decrease_with_distance(self):
        pts = rate_distance_curve(0.2, eta_d=0.23, p_d=1e-9, e_d0=0.053,
                                  distances_km=list(range(0, 320, 40)))
        for col in ("rate_pm", "rate_mdi", "rate_plob", "rate_tgw"):
            vals = [getattr(p, col) for p in pts]
            assert all(b <= a for a, b in zip(vals, vals[1:])), col

    def test_workers_preserve_order(self):
        dist = list(range(50, 350, 50))
        seq = rate_distance_curve(0.2, 0.23, 1e-9, 0.053, dist)
        par = rate_distance_curve(0.2, 0.23, 1e-9, 0.053, dist, workers=4)
        assert seq == par

    def test_csv_shape(self):
        pts = rate_distance_curve(0.2, 0.23, 1e-9, 0.053, [100.0, 200.0])
        text = curve_to_csv(pts)
        lines = text.strip().splitlines()
        assert lines[0] == "distance_km,eta_tot,R_pm,R_mdi,R_plob,R_tgw"
        assert len(lines) == 3
        assert len(lines[1].split(",")) == 6

    def test_rejects_nonpositive_loss(self):
        with pytest.raises(InvalidInputError):
            rate_distance_curve(0.0, 0.23, 0.0, 0.0, [100.0])


class TestGoldenSection:
    def test_finds_parabola_peak(self):
        x, fx = golden_section_max(lambda t: -(t - 0.37) ** 2, 0.0, 1.0, tol=1e-6)
        assert x == pytest.approx(0.37, abs=1e-4)
        assert fx == pytest.approx(0.0, abs=1e-8)

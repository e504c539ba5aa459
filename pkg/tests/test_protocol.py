import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pmqkd import (
    Detector,
    InvalidInputError,
    ProtocolParams,
    TallyTable,
    binary_entropy,
    sift,
    slice_of_phase,
)


class TestSliceOfPhase:
    def test_examples(self):
        assert slice_of_phase(0.0, 16) == 0
        assert slice_of_phase(math.pi, 16) == 8
        # 0.2 lies in [pi/16, 3*pi/16) = [0.19635, 0.58905)
        assert slice_of_phase(0.2, 16) == 1

    def test_centers_map_to_index(self):
        for D in (4, 8, 16, 32):
            for j in range(D):
                assert slice_of_phase(j * 2 * math.pi / D, D) == j

    def test_right_open_boundary(self):
        # upper edge of slice 1 belongs to slice 2
        assert slice_of_phase(3 * math.pi / 16, 16) == 2
        assert slice_of_phase(math.pi / 16, 16) == 1

    @given(st.floats(-50, 50), st.sampled_from([4, 8, 16]))
    def test_periodicity(self, phi, D):
        assert slice_of_phase(phi + 2 * math.pi, D) == slice_of_phase(phi, D)

    def test_rejects_non_finite(self):
        for bad in (math.nan, math.inf, -math.inf):
            with pytest.raises(InvalidInputError):
                slice_of_phase(bad, 16)

    def test_rejects_bad_slice_count(self):
        with pytest.raises(InvalidInputError):
            slice_of_phase(0.0, 3)
        with pytest.raises(InvalidInputError):
            slice_of_phase(0.0, 2)


class TestSift:
    def test_examples(self):
        assert sift(5, 3, 14, Detector.L, 16) == (0, False)
        assert sift(0, 8, 0, Detector.L, 16) == (0, True)
        assert sift(1, 0, 0, Detector.R, 16) == (1, True)

    @given(
        st.integers(0, 15), st.integers(0, 15), st.integers(0, 15),
        st.integers(0, 15), st.sampled_from([Detector.L, Detector.R]),
    )
    def test_shift_invariance(self, j_a, j_b, j_delta, k, outcome):
        base = sift(j_a, j_b, j_delta, outcome, 16)
        shifted = sift((j_a + k) % 16, (j_b + k) % 16, j_delta, outcome, 16)
        assert base == shifted

    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidInputError):
            sift(16, 0, 0, Detector.L, 16)
        with pytest.raises(InvalidInputError):
            sift(0, -1, 0, Detector.L, 16)

    def test_rejects_unmergeable_slice_count(self):
        with pytest.raises(InvalidInputError):
            sift(0, 0, 0, Detector.L, 6)


class TestBinaryEntropy:
    def test_examples(self):
        assert binary_entropy(0.5) == 1.0
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0
        assert binary_entropy(0.11) == pytest.approx(0.4999160, abs=1e-5)

    @given(st.floats(0.0, 1.0))
    def test_symmetry(self, x):
        assert binary_entropy(x) == pytest.approx(binary_entropy(1.0 - x), abs=1e-12)

    @given(st.floats(1e-6, 0.499), st.floats(1e-6, 0.499))
    def test_strictly_increasing_below_half(self, a, b):
        lo, hi = sorted((a, b))
        if hi - lo > 1e-9:
            assert binary_entropy(lo) < binary_entropy(hi)

    def test_domain_errors(self):
        for bad in (-0.1, 1.1):
            with pytest.raises(InvalidInputError):
                binary_entropy(bad)


class TestProtocolParams:
    def test_ratio_sum_enforced(self):
        with pytest.raises(InvalidInputError):
            ProtocolParams(r_signal=0.5, r_weak=0.3, r_vacuum=0.3)

    def test_intensity_ordering_enforced(self):
        with pytest.raises(InvalidInputError):
            ProtocolParams(mu_total=0.1, nu_total=0.2)
        with pytest.raises(InvalidInputError):
            ProtocolParams(mu_total=0.2, nu_total=0.2)

    def test_slice_count_multiple_of_four(self):
        with pytest.raises(InvalidInputError):
            ProtocolParams(D=6)
        ProtocolParams(D=8)

    def test_group_set_defaults_to_all(self):
        p = ProtocolParams(D=16)
        assert p.group_set == tuple(range(8))

    def test_roundtrip(self):
        p = ProtocolParams(mu_total=0.08, nu_total=0.04, group_set=(0, 1))
        assert ProtocolParams.from_dict(p.to_dict()) == p


class TestRoundRecord:
    def test_valid_record(self):
        from pmqkd import DetectionOutcome, RoundRecord

        r = RoundRecord(setting_a=0, setting_b=0, j_a=3, j_b=11,
                        kappa_a=1, kappa_b=0, outcome=DetectionOutcome.L)
        assert r.j_a == 3

    def test_rejects_out_of_range_slice(self):
        from pmqkd import DetectionOutcome, RoundRecord

        with pytest.raises(InvalidInputError):
            RoundRecord(setting_a=0, setting_b=0, j_a=16, j_b=0,
                        kappa_a=0, kappa_b=0, outcome=DetectionOutcome.NONE)

    def test_rejects_non_binary_key_bit(self):
        from pmqkd import DetectionOutcome, RoundRecord

        with pytest.raises(InvalidInputError):
            RoundRecord(setting_a=0, setting_b=0, j_a=0, j_b=0,
                        kappa_a=2, kappa_b=0, outcome=DetectionOutcome.NONE)


def _random_tally(rng: np.random.Generator) -> TallyTable:
    group_clicks = rng.integers(0, 50, (3, 8)).astype(np.int64)
    group_errors = np.minimum(rng.integers(0, 50, (3, 8)).astype(np.int64), group_clicks)
    return TallyTable(
        D=16,
        sends=rng.integers(100, 1000, 3).astype(np.int64),
        mixed_sends=int(rng.integers(0, 100)),
        clicks=group_clicks.sum(axis=1),
        mixed_clicks=int(rng.integers(0, 10)),
        group_clicks=group_clicks,
        group_errors=group_errors,
        both_clicks=int(rng.integers(0, 5)),
        sends_k1=rng.integers(0, 100, 3).astype(np.int64),
        clicks_k1=np.minimum(rng.integers(0, 5, (3, 8)).astype(np.int64), group_clicks),
    )


class TestTallyTable:
    def test_merge_commutative_associative(self):
        rng = np.random.default_rng(5)
        a, b, c = (_random_tally(rng) for _ in range(3))
        assert (a + b).to_dict() == (b + a).to_dict()
        assert ((a + b) + c).to_dict() == (a + (b + c)).to_dict()

    def test_merge_preserves_invariants(self):
        rng = np.random.default_rng(6)
        merged = _random_tally(rng) + _random_tally(rng)
        merged.validate()
        assert merged.n_rounds == int(merged.sends.sum()) + merged.mixed_sends

    def test_group_sum_invariant_enforced(self):
        with pytest.raises(InvalidInputError):
            TallyTable(D=16, clicks=np.array([1, 0, 0], dtype=np.int64))

    def test_errors_bounded_by_clicks(self):
        clicks = np.zeros((3, 8), dtype=np.int64)
        errors = np.zeros((3, 8), dtype=np.int64)
        errors[0, 0] = 1
        with pytest.raises(InvalidInputError):
            TallyTable(D=16, group_clicks=clicks, group_errors=errors)

    def test_json_roundtrip(self):
        t = _random_tally(np.random.default_rng(7))
        assert TallyTable.from_dict(t.to_dict()).to_dict() == t.to_dict()

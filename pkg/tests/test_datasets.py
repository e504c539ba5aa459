import numpy as np
import pytest

from pmqkd import (
    compute_observables,
    load_dataset,
    load_slice_matrix,
    reproduce,
)
from pmqkd.datasets import (
    DatasetFormatError,
    bundled_path,
    dataset_from_dict,
    data_dir,
    list_bundled,
)

ALL_LABELS = ("101km", "201km", "302km", "402km", "502km")
PUBLISHED_QBER = {"101km": 5.31, "201km": 5.75, "302km": 6.06, "402km": 7.00,
                  "502km": 9.80}


@pytest.fixture(scope="module")
def datasets():
    return {label: load_dataset(bundled_path(label)) for label in ALL_LABELS}


class TestLoading:
    def test_all_bundled_datasets_present(self):
        assert set(list_bundled()) >= set(ALL_LABELS)

    def test_spot_fields(self, datasets):
        assert datasets["502km"].signal_intensity_single_side == 0.0253
        assert datasets["402km"].rounds_total == 19996635312500
        assert datasets["101km"].detector_efficiency == 0.23

    def test_roundtrip(self, datasets):
        for ds in datasets.values():
            again = dataset_from_dict(ds.to_dict())
            assert again.to_dict() == ds.to_dict()

    def test_rejects_bad_schema(self):
        with pytest.raises(DatasetFormatError, match="schema"):
            dataset_from_dict({"schema": "nope/9"})

    def test_error_names_missing_field(self, datasets):
        doc = datasets["101km"].to_dict()
        del doc["intensities"]["signal_single_side"]
        with pytest.raises(DatasetFormatError, match="signal_single_side"):
            dataset_from_dict(doc)

    def test_error_names_bad_group(self, datasets):
        doc = datasets["101km"].to_dict()
        doc["rounds"]["errors_by_group"]["0"]["signal"] = (
            doc["rounds"]["received_by_group"]["0"]["signal"] + 1
        )
        with pytest.raises(DatasetFormatError, match="group 0"):
            dataset_from_dict(doc)

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            bundled_path("999km")


class TestObservables:
    def test_qber_matches_published_precision(self, datasets):
        for label, ds in datasets.items():
            obs = compute_observables(ds)
            assert round(obs.qber_by_group[0] * 100, 2) == PUBLISHED_QBER[label]

    def test_plob_matches_published(self, datasets):
        for ds in datasets.values():
            obs = compute_observables(ds)
            published = ds.published["plob_bound"]
            assert abs(obs.plob - published) / published < 5e-3

    def test_gains_are_probabilities(self, datasets):
        for ds in datasets.values():
            for gain in compute_observables(ds).gains.values():
                assert 0.0 <= gain <= 1.0

    def test_group1_errs_more_than_group0(self, datasets):
        for ds in datasets.values():
            obs = compute_observables(ds)
            assert obs.qber_by_group[1] > obs.qber_by_group[0]


class TestPublishedSelfConsistency:
    def test_expansion_factor_row(self, datasets):
        for ds in datasets.values():
            ratio = ds.published["key_length"] / ds.published["aligned_key_length"]
            assert round(ratio, 2) == pytest.approx(
                ds.published["expansion_factor"], abs=5e-3
            )


class TestReproduce:
    def test_never_crashes_and_reports(self, datasets):
        for ds in datasets.values():
            result = reproduce(ds)
            assert result.report.key_length >= 0
            quantities = {row.quantity for row in result.rows}
            assert {"PLOB bound", "key length", "failure probability"} <= quantities
            text = result.to_text()
            assert "computed vs published" in text

    def test_bps_requires_duty_factor(self, datasets):
        ds = datasets["302km"]
        assert reproduce(ds).bits_per_second is None
        with_duty = reproduce(ds, duty_factor=0.45)
        assert with_duty.bits_per_second == pytest.approx(
            with_duty.report.key_rate * 312.5e6 * 0.45
        )

    def test_deviations_have_signs(self, datasets):
        result = reproduce(datasets["502km"])
        devs = [r.relative_deviation for r in result.rows if r.relative_deviation]
        assert devs, "expected at least one nonzero deviation"


@pytest.fixture(scope="module")
def matrix():
    return load_slice_matrix(data_dir() / "101km_slices.csv")


class TestSliceMatrix:
    def test_shape_and_total(self, matrix):
        assert matrix.counts.shape == (16, 16, 2)
        # total clicks equal the 101 km signal received rounds
        assert matrix.total_clicks == 1365570236

    def test_left_fraction_varies_with_slice(self, matrix):
        frac = matrix.left_fraction(0)
        assert np.isfinite(frac).all()
        assert frac.max() - frac.min() > 0.0

    def test_visibility_positive_everywhere(self, matrix):
        for s in range(16):
            assert matrix.visibility(s) > 0.0

    def test_rejects_missing_cells(self, tmp_path):
        short = tmp_path / "short.csv"
        short.write_text("phase_slice,opd,det_l,det_r\n0,0,1,2\n")
        with pytest.raises(DatasetFormatError, match="missing"):
            load_slice_matrix(short)

    def test_rejects_bad_header(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        with pytest.raises(DatasetFormatError, match="columns"):
            load_slice_matrix(bad)

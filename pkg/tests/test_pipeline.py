import csv
import filecmp
from dataclasses import replace

import numpy as np
import pytest

from dementia_svm.eigenbrain import ComponentSelection
from dementia_svm.errors import DataError
from dementia_svm.features import FEATURE_NAMES, SubjectRecord
from dementia_svm.pipeline import (
    RunConfig,
    ablate,
    compute_coefficients,
    extract_cohort,
    grid_search,
    label_subject,
    read_manifest,
    run_pipeline,
    write_run,
)
from dementia_svm.svm import KernelKind
from dementia_svm.synthetic import generate_synthetic

HEADER = "id,age,gender,etiv,nwbv,cdr,masked_path,segmented_path\n"
SMALL = RunConfig(selection=ComponentSelection(coronal_component=2, axial_component=3))


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    generate_synthetic(40, out, dims=(8, 10, 8), seed=1)
    return out


@pytest.fixture(scope="module")
def records(cohort_dir):
    return read_manifest(cohort_dir / "manifest.csv")


@pytest.fixture(scope="module")
def cohort(records):
    return extract_cohort(records, SMALL.selection)


class TestManifest:
    def write(self, tmp_path, body, header=HEADER):
        path = tmp_path / "m.csv"
        path.write_text(header + body)
        return path

    def test_parses_and_resolves_paths(self, tmp_path):
        path = self.write(tmp_path, "a,70,f,1500000,0.7,0.5,v/a.rvol,v/a_seg.rvol\n")
        (r,) = read_manifest(path)
        assert (r.id, r.age, r.gender, r.cdr) == ("a", 70.0, "F", 0.5)
        assert r.masked_volume_path == str(tmp_path / "v/a.rvol")

    def test_unknown_columns_ignored(self, tmp_path):
        path = self.write(tmp_path, "a,70,M,1500000,0.7,0,x,y,extra\n", HEADER.rstrip() + ",note\n")
        assert read_manifest(path)[0].gender == "M"

    @pytest.mark.parametrize("body", [
        "a,70,F,1500000,0.7,0,x,y\na,71,F,1500000,0.7,0,x,y\n",  # duplicate id
        "a,70,F,1500000,0.7,,x,y\n",  # missing CDR
        "a,70,female,1500000,0.7,0,x,y\n",
        "a,70,F,1500000,0.7,0.25,x,y\n",
        "a,old,F,1500000,0.7,0,x,y\n",
        "",
    ])
    def test_rejects(self, tmp_path, body):
        with pytest.raises(DataError):
            read_manifest(self.write(tmp_path, body))

    def test_missing_column(self, tmp_path):
        with pytest.raises(DataError, match="segmented_path"):
            read_manifest(self.write(tmp_path, "a,70,F,1,0.7,0,x\n", HEADER.replace(",segmented_path", "")))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_manifest(tmp_path / "nope.csv")


@pytest.mark.parametrize("cdr, label", [(0.0, -1), (0.5, 1), (1.0, 1), (2.0, 1)])
def test_label_subject(cdr, label):
    assert label_subject(SubjectRecord("s", 70, "F", 1.5e6, 0.7, cdr)) == label


class TestSynthetic:
    def test_shape_and_prevalence(self, tmp_path):
        records = generate_synthetic(200, tmp_path, seed=7)
        assert len(records) == 200
        assert len(read_manifest(tmp_path / "manifest.csv")) == 200
        positives = sum(label_subject(r) == 1 for r in records)
        # binomial(200, 100/416): mean 48, sd 6
        assert 48 - 3 * 6 <= positives <= 48 + 3 * 6

    def test_byte_identical_regeneration(self, tmp_path):
        generate_synthetic(20, tmp_path / "a", dims=(8, 8, 8), seed=3)
        generate_synthetic(20, tmp_path / "b", dims=(8, 8, 8), seed=3)
        cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        assert (tmp_path / "a/manifest.csv").read_bytes() == (tmp_path / "b/manifest.csv").read_bytes()
        vols = filecmp.cmpfiles(tmp_path / "a/volumes", tmp_path / "b/volumes",
                                [p.name for p in (tmp_path / "a/volumes").iterdir()], shallow=False)
        assert not vols[1] and not vols[2]

    def test_preconditions(self, tmp_path):
        with pytest.raises(DataError):
            generate_synthetic(19, tmp_path)
        with pytest.raises(DataError):
            generate_synthetic(20, tmp_path, dims=(8, 7, 8))


class TestCohort:
    def test_features_and_slices(self, cohort, records):
        assert cohort.base_features.shape == (40, 9)
        assert cohort.volume_dims == (8, 10, 8)
        assert (cohort.coronal_index, cohort.axial_index) == (5, 4)
        assert cohort.coronal_slices[0].dims == (8, 8)
        assert cohort.axial_slices[0].dims == (8, 10)
        assert cohort.labels.tolist() == [label_subject(r) for r in records]
        assert np.array_equal(cohort.base_features[:, 0], [r.age for r in records])

    def test_error_names_subject_and_stage(self, records, tmp_path):
        broken = list(records[:3])
        broken[1] = replace(broken[1], segmented_volume_path=str(tmp_path / "missing.rvol"))
        with pytest.raises(DataError, match=f"subject {broken[1].id}: loading segmented volume"):
            extract_cohort(broken, SMALL.selection)

    def test_slice_out_of_range(self, records):
        with pytest.raises(DataError, match="extracting slices"):
            extract_cohort(records[:2], ComponentSelection(axial_slice=99))


class TestRuns:
    def test_defaults_are_deterministic(self, records, cohort):
        a = run_pipeline(records, SMALL, cohort).to_dict()
        b = run_pipeline(records, SMALL, cohort).to_dict()
        assert a == b
        assert a["features"] == list(FEATURE_NAMES)
        assert a["n_subjects"] == 40

    def test_drop_pca_uses_nine_features_and_gamma(self, records, cohort):
        config = replace(SMALL, kernel=KernelKind.RBF, drop_features=(10, 11))
        result = run_pipeline(records, config, cohort).to_dict()
        assert len(result["features"]) == 9
        assert "coronal_pca" not in result["features"]
        assert result["config"]["gamma"] == pytest.approx(1 / 9)
        assert replace(config, drop_features=()).kernel_spec().gamma == pytest.approx(1 / 11)

    def test_gamma_override(self):
        assert replace(SMALL, kernel=KernelKind.RBF, gamma=0.5).kernel_spec().gamma == 0.5

    def test_one_by_one_grid_matches_run(self, records, cohort):
        (row,) = grid_search(records, SMALL, [2], [3], cohort)
        assert row.report.to_dict() == run_pipeline(records, SMALL, cohort).report.to_dict()

    def test_grid_cardinality_and_order(self, records, cohort):
        rows = grid_search(records, SMALL, [1, 2], [1, 2, 3], cohort)
        assert len(rows) == 6
        assert {(r.coronal_component, r.axial_component) for r in rows} == {
            (c, a) for c in (1, 2) for a in (1, 2, 3)}
        keys = [(-r.report.averages["test_accuracy"], -r.report.averages["mcc"],
                 r.coronal_component, r.axial_component) for r in rows]
        assert keys == sorted(keys)

    def test_pca_train_only_fits_per_fold(self, records, cohort):
        config = replace(SMALL, pca_train_only=True)
        result = run_pipeline(records, config, cohort)
        assert len(result.report.per_fold) == 10
        coefs = compute_coefficients(cohort, 2, 3, result.plan)
        assert coefs.per_fold and len(coefs.bases) == 10

    def test_too_many_components(self, cohort):
        with pytest.raises(DataError):
            compute_coefficients(cohort, 40, 1)

    def test_ablate(self, records, cohort):
        summary = ablate(records, SMALL, cohort)
        assert set(summary["runs"]) == {"baseline", "drop_age", "drop_pca"}
        assert "age" not in summary["runs"]["drop_age"]["features"]
        assert len(summary["runs"]["drop_pca"]["features"]) == 9
        base = summary["runs"]["baseline"]["cv"]["averages"]["mcc"]
        drop = summary["runs"]["drop_pca"]["cv"]["averages"]["mcc"]
        assert summary["deltas"]["drop_pca"]["mcc"] == pytest.approx(drop - base)

    def test_write_run(self, records, cohort, tmp_path):
        result = run_pipeline(records, replace(SMALL, final_fit=True), cohort)
        write_run(result, records, tmp_path)
        names = {p.name for p in tmp_path.iterdir()}
        assert names == {"report.json", "report.txt", "folds.csv", "model.txt",
                         "standardizer.json", "features.csv"}
        with (tmp_path / "folds.csv").open() as handle:
            rows = list(csv.DictReader(handle))
        assert [int(r["fold"]) for r in rows] == result.plan.assignments.tolist()
        assert "final fit" in (tmp_path / "report.txt").read_text()

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dementia_svm.errors import DataError, DegenerateVolumeError, EmptySliceError
from dementia_svm.features import (
    N_FEATURES,
    FeatureVector,
    FlipAxis,
    ScaleMode,
    Standardizer,
    SubjectRecord,
    apply_standardizer,
    assemble_features,
    feature_mask,
    fit_standardizer,
    slice_symmetry,
    tissue_sums,
    volume_symmetry,
)
from dementia_svm.volume_io import Slice2D, Volume, VolumeKind
from oracles import label_histogram


def record(**kw):
    base = dict(id="S1", age=75, gender="F", etiv=1500000, nwbv=0.72, cdr=0.0)
    base.update(kw)
    return SubjectRecord(**base)


def brute_symmetry(image, axis):
    nv, nu = image.shape
    num = 0.0
    for v in range(nv):
        for u in range(nu):
            mu, mv = (nu - 1 - u, v) if axis is FlipAxis.U else (u, nv - 1 - v)
            num += image[v, u] * image[mv, mu]
    return num / image.sum()


positive_slices = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(1, 6)),
    elements=st.floats(0.01, 100.0),
)


class TestSliceSymmetry:
    @pytest.mark.parametrize("axis", list(FlipAxis))
    def test_constant_slice(self, axis):
        assert slice_symmetry(Slice2D.from_image(np.ones((3, 3))), axis) == pytest.approx(1.0, abs=1e-12)

    def test_hand_case_u_flip(self):
        s = Slice2D.from_image([[1.0, 2.0], [3.0, 4.0]])
        assert slice_symmetry(s, FlipAxis.U) == pytest.approx(2.8, abs=1e-12)

    def test_hand_case_v_flip(self):
        # V-flip gives [[3,4],[1,2]]: (3 + 8 + 3 + 8) / 10
        s = Slice2D.from_image([[1.0, 2.0], [3.0, 4.0]])
        assert slice_symmetry(s, FlipAxis.V) == pytest.approx(2.2, abs=1e-12)

    def test_empty_slice(self):
        with pytest.raises(EmptySliceError):
            slice_symmetry(Slice2D.from_image(np.zeros((2, 2))), FlipAxis.U)

    @settings(max_examples=60, deadline=None)
    @given(image=positive_slices, axis=st.sampled_from(list(FlipAxis)))
    def test_matches_brute_force(self, image, axis):
        assert slice_symmetry(Slice2D.from_image(image), axis) == pytest.approx(
            brute_symmetry(image, axis), rel=1e-12
        )

    @settings(max_examples=60, deadline=None)
    @given(image=positive_slices, axis=st.sampled_from(list(FlipAxis)))
    def test_symmetric_slice_gives_sum_of_squares_ratio(self, image, axis):
        sym = image + (image[:, ::-1] if axis is FlipAxis.U else image[::-1, :])
        expected = np.sum(sym ** 2) / np.sum(sym)
        assert slice_symmetry(Slice2D.from_image(sym), axis) == pytest.approx(expected, rel=1e-12)


class TestVolumeSymmetry:
    def test_all_ones(self):
        vol = Volume((3, 3, 4), (1, 1, 1), np.ones(36))
        assert volume_symmetry(vol, FlipAxis.U) == pytest.approx(1.0, abs=1e-12)

    def test_mean_of_two_slices(self):
        # axial z=0 is [[1,2],[3,4]] (psi 2.8), z=1 all ones (psi 1.0)
        vol = Volume((2, 2, 2), (1, 1, 1), [1, 2, 3, 4, 1, 1, 1, 1])
        assert volume_symmetry(vol, FlipAxis.U) == pytest.approx(1.9, abs=1e-12)

    def test_empty_slices_are_skipped(self):
        vol = Volume((2, 2, 3), (1, 1, 1), [0, 0, 0, 0, 1, 2, 3, 4, 0, 0, 0, 0])
        assert volume_symmetry(vol, FlipAxis.U) == pytest.approx(2.8, abs=1e-12)

    def test_all_zero(self):
        with pytest.raises(DegenerateVolumeError):
            volume_symmetry(Volume((2, 2, 2), (1, 1, 1), np.zeros(8)), FlipAxis.V)

    def test_rejects_labels(self):
        with pytest.raises(DataError):
            volume_symmetry(Volume((1, 1, 1), (1, 1, 1), [1], VolumeKind.SEGMENTATION), FlipAxis.V)


class TestTissueSums:
    def test_direct_count(self):
        vol = Volume((5, 1, 1), (1, 1, 1), [0, 1, 2, 3, 3], VolumeKind.SEGMENTATION)
        assert tissue_sums(vol) == (2, 1, 1)

    def test_all_background(self):
        assert tissue_sums(Volume((2, 2, 2), (1, 1, 1), np.zeros(8), VolumeKind.SEGMENTATION)) == (0, 0, 0)

    def test_rejects_intensity(self):
        with pytest.raises(DataError):
            tissue_sums(Volume((1, 1, 1), (1, 1, 1), [1.0]))

    @pytest.mark.parametrize("seed", range(5))
    def test_histogram_oracle(self, seed):
        labels = np.random.default_rng(seed).integers(0, 4, size=7 * 6 * 5)
        vol = Volume((7, 6, 5), (1, 1, 1), labels, VolumeKind.SEGMENTATION)
        counts = tissue_sums(vol)
        assert counts == label_histogram(labels)
        assert sum(counts) == np.count_nonzero(labels)


def synthetic_subject():
    # every axial slice is all ones -> both symmetries 1.0
    masked = Volume((3, 3, 2), (1, 1, 1), np.ones(18))
    labels = np.array([0, 1, 2, 3, 3, 3, 2, 2, 1] * 2)
    segmented = Volume((3, 3, 2), (1, 1, 1), labels, VolumeKind.SEGMENTATION)
    return masked, segmented


class TestAssemble:
    def test_tabular_pass_through(self):
        masked, segmented = synthetic_subject()
        fv = assemble_features(record(), masked, segmented, 0.5, -1.5)
        assert fv.values[:4].tolist() == [75, 0, 1500000, 0.72]
        assert fv.values[9:].tolist() == [0.5, -1.5]

    def test_image_entries_match_per_feature_oracles(self):
        masked, segmented = synthetic_subject()
        fv = assemble_features(record(gender="M"), masked, segmented, 0.0, 0.0)
        assert fv.values[1] == 1.0
        assert fv.values[4:7].tolist() == list(label_histogram(segmented.data))
        assert fv.values[4:7].tolist() == [6, 6, 4]
        assert fv.values[7:9] == pytest.approx([1.0, 1.0], abs=1e-12)

    def test_updown_and_leftright_use_v_and_u_flips(self):
        masked = Volume((2, 2, 1), (1, 1, 1), [1, 2, 3, 4])
        segmented = Volume((2, 2, 1), (1, 1, 1), [0, 0, 0, 0], VolumeKind.SEGMENTATION)
        fv = assemble_features(record(), masked, segmented, 0, 0)
        assert fv.values[7] == pytest.approx(2.2)  # up/down
        assert fv.values[8] == pytest.approx(2.8)  # left/right
        swapped = assemble_features(record(), masked, segmented, 0, 0, updown_axis=FlipAxis.U)
        assert swapped.values[7:9] == pytest.approx([2.8, 2.2])

    def test_deterministic(self):
        masked, segmented = synthetic_subject()
        a = assemble_features(record(), masked, segmented, 1.0, 2.0)
        b = assemble_features(record(), masked, segmented, 1.0, 2.0)
        assert a == b

    def test_masking_keeps_other_coordinates(self):
        masked, segmented = synthetic_subject()
        full = assemble_features(record(), masked, segmented, 1.0, 2.0)
        for k in range(1, N_FEATURES + 1):
            part = assemble_features(record(), masked, segmented, 1.0, 2.0, mask=feature_mask([k]))
            keep = np.arange(N_FEATURES) != k - 1
            assert np.array_equal(part.values[keep], full.values[keep])
            assert np.array_equal(part.active, np.delete(full.values, k - 1))

    def test_record_validation(self):
        for bad in [dict(cdr=3.0), dict(cdr=0.25), dict(gender="X"), dict(age=0), dict(nwbv=1.2),
                    dict(etiv=-1)]:
            with pytest.raises(DataError):
                record(**bad)

    def test_feature_mask_bounds(self):
        with pytest.raises(DataError):
            feature_mask([12])
        with pytest.raises(DataError):
            feature_mask(range(1, 12))


def vectors_from_column(col):
    out = []
    for v in col:
        values = np.zeros(N_FEATURES)
        values[0] = v
        out.append(FeatureVector(values, feature_mask(range(2, 12))))
    return out


class TestStandardizer:
    def test_hand_case(self):
        s = fit_standardizer(vectors_from_column([1.0, 2.0, 3.0]))
        assert s.means[0] == pytest.approx(2.0)
        assert s.scales[0] == pytest.approx(math.sqrt(2 / 3), rel=1e-12)
        out = [apply_standardizer(s, v).values[0] for v in vectors_from_column([1.0, 2.0, 3.0])]
        assert out == pytest.approx([-1.224744871391589, 0.0, 1.224744871391589], abs=1e-12)

    def test_held_out_value(self):
        s = fit_standardizer(vectors_from_column([1.0, 2.0, 3.0]))
        held = apply_standardizer(s, vectors_from_column([4.0])[0])
        assert held.values[0] == pytest.approx(2.449489742783178, abs=1e-12)

    def test_constant_column(self):
        s = fit_standardizer(np.array([[5.0], [5.0], [5.0]]))
        assert s.transform([[5.0], [5.0], [5.0]]).ravel().tolist() == [0.0, 0.0, 0.0]

    def test_underflowing_spread(self):
        matrix = np.array([[5.64437353e-286], [0.0]])
        for mode in ScaleMode:
            s = fit_standardizer(matrix, mode)
            assert s.scales[0] == 1.0
            assert np.all(np.isfinite(s.transform(matrix)))

    def test_variance_mode(self):
        s = fit_standardizer(np.array([[1.0], [2.0], [3.0]]), ScaleMode.VARIANCE)
        assert s.scales[0] == pytest.approx(2 / 3)

    def test_mean_vector_maps_to_zero(self):
        rng = np.random.default_rng(3)
        vecs = [FeatureVector(rng.normal(size=N_FEATURES)) for _ in range(5)]
        s = fit_standardizer(vecs)
        centre = apply_standardizer(s, FeatureVector(s.means))
        assert np.allclose(centre.values, 0.0, atol=1e-12)

    def test_identity(self):
        v = FeatureVector(np.arange(N_FEATURES, dtype=float))
        s = Standardizer(np.zeros(N_FEATURES), np.ones(N_FEATURES), v.mask)
        assert apply_standardizer(s, v) == v

    def test_errors(self):
        with pytest.raises(DataError):
            fit_standardizer(vectors_from_column([1.0]))
        mixed = vectors_from_column([1.0]) + [FeatureVector(np.zeros(N_FEATURES))]
        with pytest.raises(DataError):
            fit_standardizer(mixed)
        s = fit_standardizer(vectors_from_column([1.0, 2.0]))
        with pytest.raises(DataError):
            apply_standardizer(s, FeatureVector(np.zeros(N_FEATURES)))

    @settings(max_examples=50, deadline=None)
    @given(matrix=arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 11)),
                         elements=st.floats(-1e4, 1e4)))
    def test_z_scoring_properties(self, matrix):
        z = fit_standardizer(matrix).transform(matrix)
        assert np.all(np.abs(z.mean(axis=0)) < 1e-10)
        varying = np.ptp(matrix, axis=0) > 1e-6 * np.maximum(1.0, np.abs(matrix).max(axis=0))
        assert np.allclose(z.var(axis=0)[varying], 1.0, atol=1e-10)
        assert np.all(z[:, np.ptp(matrix, axis=0) == 0] == 0)
        refit = fit_standardizer(z)
        assert np.all(np.abs(refit.means) < 1e-10)
        assert np.allclose(refit.scales[varying], 1.0, atol=1e-10)

"""Per-subject scalar features and cohort standardization.

The feature vector has eleven entries in a fixed order (``FEATURE_NAMES``):
four tabular values, three tissue volumes, two axial symmetry scores and two
eigenbrain coefficients. Ablations deactivate entries through a boolean mask
rather than by shortening the vector, so indices stay stable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from dementia_svm.errors import DataError, DegenerateVolumeError, EmptySliceError
from dementia_svm.volume_io import Orientation, Slice2D, Volume, VolumeKind, extract_slice

FEATURE_NAMES = (
    "age",
    "gender",
    "etiv",
    "nwbv",
    "white_matter",
    "grey_matter",
    "csf",
    "updown_symmetry",
    "leftright_symmetry",
    "coronal_pca",
    "axial_pca",
)
N_FEATURES = len(FEATURE_NAMES)
PCA_FEATURES = (10, 11)  # 1-based

VALID_CDR = (0.0, 0.5, 1.0, 2.0)
GENDER_CODES = {"F": 0.0, "M": 1.0}


class FlipAxis(enum.Enum):
    U = "u"  # reverse columns: left/right
    V = "v"  # reverse rows: up/down


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    age: float
    gender: str
    etiv: float
    nwbv: float
    cdr: float
    masked_volume_path: str = ""
    segmented_volume_path: str = ""

    def __post_init__(self):
        if self.gender not in GENDER_CODES:
            raise DataError(f"subject {self.id}: gender must be 'F' or 'M', got {self.gender!r}")
        if self.cdr not in VALID_CDR:
            raise DataError(f"subject {self.id}: CDR {self.cdr} not in {VALID_CDR}")
        if not self.age > 0:
            raise DataError(f"subject {self.id}: age must be positive, got {self.age}")
        if not self.etiv > 0:
            raise DataError(f"subject {self.id}: eTIV must be positive, got {self.etiv}")
        if not 0 < self.nwbv <= 1:
            raise DataError(f"subject {self.id}: nWBV must lie in (0, 1], got {self.nwbv}")


def feature_mask(drop: Sequence[int] = ()) -> np.ndarray:
    """Boolean mask with the given 1-based feature numbers switched off."""
    mask = np.ones(N_FEATURES, dtype=bool)
    for k in drop:
        if not 1 <= k <= N_FEATURES:
            raise DataError(f"feature number {k} outside 1..{N_FEATURES}")
        mask[k - 1] = False
    if not mask.any():
        raise DataError("every feature is masked out")
    return mask


def active_names(mask) -> list[str]:
    return [name for name, on in zip(FEATURE_NAMES, mask) if on]


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    mask: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES, dtype=bool))

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.mask, dtype=bool)
        if values.shape != (N_FEATURES,) or mask.shape != (N_FEATURES,):
            raise DataError(f"feature vectors have exactly {N_FEATURES} entries")
        if not np.all(np.isfinite(values[mask])):
            raise DataError("active feature values must be finite")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def active(self) -> np.ndarray:
        return self.values[self.mask]

    def with_mask(self, mask) -> "FeatureVector":
        return FeatureVector(self.values, mask)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(self.mask, other.mask)

    __hash__ = None


# --------------------------------------------------------------------------
# image features


def slice_symmetry(slc: Slice2D, flip_axis: FlipAxis) -> float:
    """Zero-shift correlation of a slice with its mirror image, over its total signal.

    Raises EmptySliceError when the slice sums to zero.
    """
    image = slc.image
    total = image.sum()
    if total == 0:
        raise EmptySliceError(f"{slc.orientation.value} slice {slc.index} has zero total intensity")
    mirrored = image[:, ::-1] if FlipAxis(flip_axis) is FlipAxis.U else image[::-1, :]
    return float(np.sum(image * mirrored) / total)


def volume_symmetry(volume: Volume, flip_axis: FlipAxis) -> float:
    """Mean slice symmetry over all axial slices with nonzero signal."""
    if volume.kind is not VolumeKind.INTENSITY:
        raise DataError("symmetry needs an intensity volume")
    scores = []
    for z in range(volume.dims[2]):
        try:
            scores.append(slice_symmetry(extract_slice(volume, Orientation.AXIAL, z), flip_axis))
        except EmptySliceError:
            continue
    if not scores:
        raise DegenerateVolumeError("every axial slice is empty")
    return float(np.mean(scores))


def tissue_sums(segmented: Volume) -> tuple[int, int, int]:
    """Voxel counts (white, grey, csf) for labels 3, 2 and 1."""
    if segmented.kind is not VolumeKind.SEGMENTATION:
        raise DataError("tissue sums need a segmentation volume")
    counts = np.bincount(segmented.data.astype(np.int64), minlength=4)
    return int(counts[3]), int(counts[2]), int(counts[1])


def image_features(masked: Volume, segmented: Volume,
                   updown_axis: FlipAxis = FlipAxis.V) -> np.ndarray:
    """Entries 5-9 of the feature vector: tissue counts then up/down, left/right symmetry."""
    updown_axis = FlipAxis(updown_axis)
    leftright_axis = FlipAxis.U if updown_axis is FlipAxis.V else FlipAxis.V
    white, grey, csf = tissue_sums(segmented)
    return np.array([
        white,
        grey,
        csf,
        volume_symmetry(masked, updown_axis),
        volume_symmetry(masked, leftright_axis),
    ], dtype=np.float64)


def tabular_features(record: SubjectRecord) -> np.ndarray:
    return np.array(
        [record.age, GENDER_CODES[record.gender], record.etiv, record.nwbv], dtype=np.float64
    )


def assemble_features(record: SubjectRecord, masked: Volume, segmented: Volume,
                      coronal_coeff: float, axial_coeff: float, mask=None,
                      updown_axis: FlipAxis = FlipAxis.V) -> FeatureVector:
    values = np.concatenate([
        tabular_features(record),
        image_features(masked, segmented, updown_axis),
        [coronal_coeff, axial_coeff],
    ])
    return FeatureVector(values, feature_mask() if mask is None else mask)


# --------------------------------------------------------------------------
# standardization


class ScaleMode(enum.Enum):
    STD = "std"
    VARIANCE = "variance"


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-feature affine map ``(x - mean) / scale`` over the active features."""

    means: np.ndarray
    scales: np.ndarray
    mask: np.ndarray

    def transform(self, matrix) -> np.ndarray:
        """Standardize a matrix of active-feature rows."""
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape[-1] != self.means.size:
            raise DataError(
                f"expected {self.means.size} active features, got {matrix.shape[-1]}"
            )
        return (matrix - self.means) / self.scales


def as_feature_matrix(vectors) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(vectors, np.ndarray):
        matrix = np.asarray(vectors, dtype=np.float64)
        if matrix.ndim != 2:
            raise DataError("expected a 2-D feature matrix")
        return matrix, np.ones(matrix.shape[1], dtype=bool)
    vectors = list(vectors)
    if not vectors:
        raise DataError("no feature vectors")
    mask = vectors[0].mask
    if any(not np.array_equal(v.mask, mask) for v in vectors):
        raise DataError("feature vectors have inconsistent masks")
    return np.array([v.active for v in vectors]), mask


def fit_standardizer(vectors, mode: ScaleMode = ScaleMode.STD) -> Standardizer:
    """Fit means and scales (population std, or variance in literal mode).

    Accepts FeatureVectors or a plain (n, d) matrix. Constant columns (and columns
    whose variance underflows) get scale 1.
    """
    matrix, mask = as_feature_matrix(vectors)
    if matrix.shape[0] < 2:
        raise DataError("standardizer needs at least 2 vectors")
    means = matrix.mean(axis=0)
    variance = ((matrix - means) ** 2).mean(axis=0)
    scales = np.sqrt(variance) if ScaleMode(mode) is ScaleMode.STD else variance.copy()
    constant = np.ptp(matrix, axis=0) == 0
    # exact centre so constant columns map to exactly 0
    means[constant] = matrix[0, constant]
    # a spread of ~1e-160 or less squares to zero; leave such columns unscaled too
    scales[constant | ~(scales > 0)] = 1.0
    return Standardizer(means, scales, mask)


def apply_standardizer(s: Standardizer, v: FeatureVector) -> FeatureVector:
    if not np.array_equal(v.mask, s.mask):
        raise DataError("feature mask differs from the one the standardizer was fit on")
    values = v.values.copy()
    values[v.mask] = s.transform(v.active)
    return FeatureVector(values, v.mask)

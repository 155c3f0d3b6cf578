"""Eigenbrains: principal components of one 2-D slice across a cohort.

The cohort is small (hundreds of subjects) while slices have tens of thousands
of pixels, so components come from the n x n Gram matrix of centered slices
(the snapshot method) rather than the p x p covariance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from dementia_svm.errors import ConvergenceError, DataError
from dementia_svm.volume_io import Orientation, Slice2D, Volume, VolumeKind

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
# eigenvalues below this fraction of the largest are treated as zero
DEGENERATE_RTOL = 1e-10


def _round_robin_pairs(n: int):
    """Yield n-1 rounds of n/2 disjoint (p, q) index pairs covering all pairs once (n even)."""
    players = list(range(n))
    for _ in range(n - 1):
        half = n // 2
        left, right = players[:half], players[half:][::-1]
        p = np.array([min(a, b) for a, b in zip(left, right)])
        q = np.array([max(a, b) for a, b in zip(left, right)])
        yield p, q
        players = [players[0], players[-1]] + players[1:-1]


def jacobi_eigh(matrix, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in round-robin order so that
    the n/2 rotations of a round touch disjoint rows and can be applied together.
    Iteration stops once the off-diagonal Frobenius norm is at most ``tol``
    times the Frobenius norm of the input.

    Returns (eigenvalues, eigenvectors as columns), eigenvalues descending.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0))):
        raise DataError("matrix is not symmetric")
    a = (a + a.T) / 2
    n = a.shape[0]
    size = n + (n % 2)
    if size != n:
        a = np.pad(a, ((0, 1), (0, 1)))
    v = np.eye(size)
    scale = np.linalg.norm(a)
    rounds = list(_round_robin_pairs(size)) if size > 1 else []

    def off_norm():
        return np.linalg.norm(a - np.diag(np.diag(a)))

    for _ in range(max_sweeps):
        if off_norm() <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0
            if not active.any():
                continue
            with np.errstate(over="ignore"):
                theta = (a[q, q] - a[p, p]) / (2 * np.where(active, apq, 1.0))
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0] = 1.0
            t[~active] = 0.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # A <- J^T A J with J_pp = J_qq = c, J_pq = s, J_qp = -s
            rows_p, rows_q = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rows_p - s[:, None] * rows_q
            a[q, :] = s[:, None] * rows_p + c[:, None] * rows_q
            cols_p, cols_q = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cols_p * c - cols_q * s
            a[:, q] = cols_p * s + cols_q * c
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
    else:
        if off_norm() > tol * scale:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")

    # the zero padding row/column is never rotated, so dropping it is exact
    values = np.diag(a)[:n]
    vectors = v[:n, :n]
    order = np.argsort(-values, kind="stable")
    return values[order], vectors[:, order]


def _fix_sign(vector: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(vector)))
    return -vector if vector[k] < 0 else vector


@dataclass(frozen=True, eq=False)
class EigenbrainBasis:
    orientation: Orientation
    slice_index: int
    slice_dims: tuple[int, int]
    mean_image: np.ndarray  # (p,)
    components: np.ndarray  # (k, p), orthonormal rows
    eigenvalues: np.ndarray  # (k,), population convention, nonincreasing
    degenerate: np.ndarray  # (k,) bool, True where the eigenvalue is numerically zero

    @property
    def size(self) -> int:
        return self.components.shape[0]

    def component(self, number: int) -> np.ndarray:
        """1-based component lookup."""
        if not 1 <= number <= self.size:
            raise DataError(f"component #{number} outside 1..{self.size}")
        return self.components[number - 1]


@dataclass(frozen=True)
class ComponentSelection:
    coronal_component: int = 4
    axial_component: int = 7
    coronal_slice: int | None = None
    axial_slice: int | None = None

    def __post_init__(self):
        if self.coronal_component < 1 or self.axial_component < 1:
            raise DataError("component numbers are 1-based")

    def slices_for(self, volume_dims) -> tuple[int, int]:
        """(coronal, axial) plane indices, defaulting to the middle planes."""
        nx, ny, nz = volume_dims
        coronal = ny // 2 if self.coronal_slice is None else self.coronal_slice
        axial = nz // 2 if self.axial_slice is None else self.axial_slice
        return coronal, axial


def _check_cohort(slices: Sequence[Slice2D]) -> np.ndarray:
    if len(slices) < 2:
        raise DataError("eigenbrains need at least 2 slices")
    first = slices[0]
    for s in slices[1:]:
        if s.dims != first.dims or s.orientation is not first.orientation:
            raise DataError(
                f"slice mismatch: {s.orientation.value} {s.dims} vs "
                f"{first.orientation.value} {first.dims}"
            )
    return np.array([s.data for s in slices])


def fit_eigenbrains(slices: Sequence[Slice2D], n_components: int) -> EigenbrainBasis:
    """Fit the top ``n_components`` eigenbrains of a cohort of same-shaped slices."""
    x = _check_cohort(slices)
    n, p = x.shape
    if not 1 <= n_components <= min(n - 1, p):
        raise DataError(f"n_components={n_components} must be in 1..{min(n - 1, p)} for {n} slices")
    mean = x.mean(axis=0)
    centered = x - mean
    gram = centered @ centered.T
    lam, vecs = jacobi_eigh(gram)
    lam = np.clip(lam, 0.0, None)
    cutoff = DEGENERATE_RTOL * lam[0] if lam[0] > 0 else 0.0

    components = []
    degenerate = []
    for k in range(n_components):
        if lam[k] > cutoff and lam[k] > 0:
            u = centered.T @ vecs[:, k]
            degenerate.append(False)
        else:
            u = _complement_vector(components, p)
            degenerate.append(True)
        for w in components:
            u = u - (w @ u) * w
        u = u / np.linalg.norm(u)
        components.append(_fix_sign(u))
    eigenvalues = np.where(degenerate, 0.0, lam[:n_components] / n)
    return EigenbrainBasis(
        orientation=slices[0].orientation,
        slice_index=slices[0].index,
        slice_dims=slices[0].dims,
        mean_image=mean,
        components=np.array(components),
        eigenvalues=eigenvalues,
        degenerate=np.array(degenerate),
    )


def _complement_vector(components, p: int) -> np.ndarray:
    # first standard basis vector with a usable residual after projecting out `components`
    for i in range(p):
        e = np.zeros(p)
        e[i] = 1.0
        for w in components:
            e = e - (w @ e) * w
        if np.linalg.norm(e) > 1e-6:
            return e
    raise DataError("cannot extend basis beyond the pixel count")


def _check_slice(basis: EigenbrainBasis, slc: Slice2D):
    if slc.dims != basis.slice_dims:
        raise DataError(f"slice dims {slc.dims} do not match basis dims {basis.slice_dims}")


def project_coefficient(basis: EigenbrainBasis, slc: Slice2D, component: int) -> float:
    _check_slice(basis, slc)
    return float((slc.data - basis.mean_image) @ basis.component(component))


def project_all(basis: EigenbrainBasis, slc: Slice2D) -> np.ndarray:
    """Coefficients of ``slc`` on every component, in component order."""
    _check_slice(basis, slc)
    return basis.components @ (slc.data - basis.mean_image)


def reconstruct(basis: EigenbrainBasis, coefficients: Sequence[float]) -> Slice2D:
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.size > basis.size:
        raise DataError(f"{coefficients.size} coefficients for a {basis.size}-component basis")
    image = basis.mean_image + coefficients @ basis.components[: coefficients.size]
    return Slice2D(basis.slice_dims, image, basis.orientation, basis.slice_index)


def as_volume(image: np.ndarray, slice_dims: tuple[int, int]) -> Volume:
    """Wrap a flattened slice-shaped image as a one-plane volume for RVOL export."""
    nu, nv = slice_dims
    return Volume((nu, nv, 1), (1.0, 1.0, 1.0), image, VolumeKind.INTENSITY)

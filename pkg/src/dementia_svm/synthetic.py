"""Desk-scale synthetic cohorts with a controllable dementia effect.

Each subject gets an ellipsoidal "brain": a grey-matter shell around white
matter with a central CSF ventricle. Demented subjects are older, have lower
nWBV, a thinner grey shell and larger ventricles; every shift is multiplied by
``class_effect`` so 0 gives identically distributed classes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from dementia_svm.errors import DataError
from dementia_svm.features import SubjectRecord
from dementia_svm.pipeline import write_manifest
from dementia_svm.volume_io import Volume, VolumeKind, write_rvol

PREVALENCE = 100 / 416
# CDR distribution among demented subjects: 70 at 0.5, 28 at 1, 2 at 2
DEMENTED_CDR = (0.5, 1.0, 2.0)
DEMENTED_CDR_WEIGHTS = np.array([70, 28, 2]) / 100
TISSUE_INTENSITY = {1: 25.0, 2: 70.0, 3: 110.0}


def _subject_volumes(rng, dims, etiv, grey_thickness, ventricle_radius):
    nx, ny, nz = dims
    head = (etiv / 1.5e6) ** (1 / 3)
    z, y, x = np.meshgrid(
        (np.arange(nz) + 0.5) / nz - 0.5,
        (np.arange(ny) + 0.5) / ny - 0.5,
        (np.arange(nx) + 0.5) / nx - 0.5,
        indexing="ij",
    )
    radius = 0.44 * min(head, 1.1)
    r = np.sqrt((x / radius) ** 2 + (y / radius) ** 2 + (z / radius) ** 2)
    labels = np.zeros(r.shape, dtype=np.int64)
    brain = r <= 1.0
    labels[brain] = 3
    labels[brain & (r > 1.0 - grey_thickness)] = 2
    labels[r < ventricle_radius] = 1
    intensity = np.zeros(r.shape)
    for label, level in TISSUE_INTENSITY.items():
        region = labels == label
        intensity[region] = level + rng.normal(0.0, 6.0, size=int(region.sum()))
    intensity = np.clip(np.round(intensity), 0, None)
    intensity[~brain] = 0
    return (
        Volume.from_array(intensity, kind=VolumeKind.INTENSITY),
        Volume.from_array(labels, kind=VolumeKind.SEGMENTATION),
    )


def generate_synthetic(n_subjects: int, out_dir, dims=(16, 20, 16), class_effect: float = 1.0,
                       seed: int = 0) -> list[SubjectRecord]:
    """Write RVOL volumes plus ``manifest.csv`` under ``out_dir``; return the records."""
    if n_subjects < 20:
        raise DataError("synthetic cohorts need at least 20 subjects")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 8:
        raise DataError(f"synthetic volume dims must each be >= 8, got {dims}")
    out = Path(out_dir)
    vol_dir = out / "volumes"
    vol_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    width = len(str(n_subjects))

    records = []
    for i in range(n_subjects):
        demented = rng.random() < PREVALENCE
        effect = class_effect * float(demented)
        cdr = float(rng.choice(DEMENTED_CDR, p=DEMENTED_CDR_WEIGHTS)) if demented else 0.0
        age = float(round(np.clip(rng.normal(68.0 + 9.0 * effect, 8.0), 18, 96)))
        gender = "M" if rng.random() < 0.4 else "F"
        etiv = float(round(rng.normal(1.5e6, 1.5e5)))
        nwbv = round(float(np.clip(rng.normal(0.76 - 0.045 * effect, 0.025), 0.5, 0.95)), 3)
        grey = 0.30 - 0.10 * effect + rng.normal(0.0, 0.02)
        ventricle = 0.22 + 0.10 * effect + rng.normal(0.0, 0.02)

        masked, segmented = _subject_volumes(rng, dims, etiv, grey, ventricle)
        sid = f"SYN_{i + 1:0{width}d}"
        masked_path = vol_dir / f"{sid}_masked.rvol"
        segmented_path = vol_dir / f"{sid}_segmented.rvol"
        write_rvol(masked, masked_path)
        write_rvol(segmented, segmented_path)
        records.append(SubjectRecord(
            id=sid, age=age, gender=gender, etiv=etiv, nwbv=nwbv, cdr=cdr,
            masked_volume_path=str(masked_path), segmented_volume_path=str(segmented_path),
        ))
    write_manifest(records, out / "manifest.csv", relative_to=out)
    return records

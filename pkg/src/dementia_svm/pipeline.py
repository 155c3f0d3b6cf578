"""End-to-end orchestration: manifest -> features -> eigenbrains -> CV reports."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from dementia_svm.eigenbrain import (
    ComponentSelection,
    EigenbrainBasis,
    as_volume,
    fit_eigenbrains,
    project_all,
)
from dementia_svm.errors import DataError, PipelineError
from dementia_svm.evaluation import (
    METRIC_NAMES,
    CvReport,
    FoldPlan,
    StandardizeMode,
    confusion,
    cross_validate,
    make_folds,
    metrics,
)
from dementia_svm.features import (
    FEATURE_NAMES,
    PCA_FEATURES,
    FlipAxis,
    ScaleMode,
    Standardizer,
    SubjectRecord,
    active_names,
    feature_mask,
    fit_standardizer,
    image_features,
    tabular_features,
)
from dementia_svm.svm import KernelKind, KernelSpec, SvmModel, TrainConfig, save_model, train
from dementia_svm.volume_io import Orientation, Slice2D, VolumeKind, extract_slice, load_volume, write_rvol

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("id", "age", "gender", "etiv", "nwbv", "cdr", "masked_path", "segmented_path")
AGE_FEATURE = 1
REPORT_VERSION = 1


# --------------------------------------------------------------------------
# manifest


def read_manifest(path) -> list[SubjectRecord]:
    """Parse a comma-separated manifest; volume paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot open manifest {path}: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise DataError(f"{path}: manifest lacks columns {missing}")
        records = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            sid = (row["id"] or "").strip()
            if not sid:
                raise DataError(f"{path}:{lineno}: empty subject id")
            if sid in seen:
                raise DataError(f"{path}:{lineno}: duplicate subject id {sid}")
            seen.add(sid)
            if not (row["cdr"] or "").strip():
                raise DataError(f"{path}:{lineno}: subject {sid} has no CDR score")
            try:
                record = SubjectRecord(
                    id=sid,
                    age=float(row["age"]),
                    gender=row["gender"].strip().upper(),
                    etiv=float(row["etiv"]),
                    nwbv=float(row["nwbv"]),
                    cdr=float(row["cdr"]),
                    masked_volume_path=str(base / row["masked_path"].strip()),
                    segmented_volume_path=str(base / row["segmented_path"].strip()),
                )
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: subject {sid}: {exc}") from exc
            records.append(record)
    if not records:
        raise DataError(f"{path}: manifest has no subjects")
    return records


def write_manifest(records: Sequence[SubjectRecord], path, relative_to=None) -> None:
    relative_to = Path(relative_to) if relative_to is not None else Path(path).parent
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            writer.writerow([
                r.id, repr(r.age), r.gender, repr(r.etiv), repr(r.nwbv), repr(r.cdr),
                Path(r.masked_volume_path).relative_to(relative_to).as_posix(),
                Path(r.segmented_volume_path).relative_to(relative_to).as_posix(),
            ])


def label_subject(record: SubjectRecord) -> int:
    """+1 (demented) for any nonzero CDR, else -1."""
    return 1 if record.cdr > 0 else -1


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    kernel: KernelKind = KernelKind.LINEAR
    gamma: float | None = None
    c: float = 1.0
    positive_weight: float = 1.0
    tolerance: float = 1e-3
    max_iters: int | None = None
    folds: int = 10
    seed: int = 0
    drop_features: tuple[int, ...] = ()
    selection: ComponentSelection = field(default_factory=ComponentSelection)
    standardize: StandardizeMode = StandardizeMode.PER_FOLD
    scale_mode: ScaleMode = ScaleMode.STD
    pca_train_only: bool = False
    stratified: bool = True
    final_fit: bool = False
    updown_axis: FlipAxis = FlipAxis.V

    @property
    def mask(self) -> np.ndarray:
        return feature_mask(self.drop_features)

    def kernel_spec(self) -> KernelSpec:
        if KernelKind(self.kernel) is KernelKind.LINEAR:
            return KernelSpec(KernelKind.LINEAR)
        gamma = self.gamma if self.gamma is not None else 1.0 / int(self.mask.sum())
        return KernelSpec(KernelKind.RBF, gamma)

    def train_config(self) -> TrainConfig:
        return TrainConfig(c=self.c, tolerance=self.tolerance, max_iters=self.max_iters,
                           positive_weight=self.positive_weight)

    def describe(self) -> dict:
        return {
            "kernel": KernelKind(self.kernel).value,
            "gamma": self.kernel_spec().gamma,
            "c": self.c,
            "positive_weight": self.positive_weight,
            "tolerance": self.tolerance,
            "folds": self.folds,
            "seed": self.seed,
            "drop_features": list(self.drop_features),
            "coronal_component": self.selection.coronal_component,
            "axial_component": self.selection.axial_component,
            "standardize": StandardizeMode(self.standardize).value,
            "scale_mode": ScaleMode(self.scale_mode).value,
            "pca_train_only": self.pca_train_only,
            "stratified": self.stratified,
            "updown_axis": FlipAxis(self.updown_axis).value,
        }


# --------------------------------------------------------------------------
# cohort features


@dataclass
class Cohort:
    records: list[SubjectRecord]
    labels: np.ndarray
    base_features: np.ndarray  # (n, 9): tabular + tissue + symmetry
    coronal_slices: list[Slice2D]
    axial_slices: list[Slice2D]
    volume_dims: tuple[int, int, int]
    coronal_index: int
    axial_index: int


def extract_cohort(records: Sequence[SubjectRecord], selection: ComponentSelection,
                   updown_axis: FlipAxis = FlipAxis.V) -> Cohort:
    """Load every subject's volumes once and keep only what later stages need."""
    rows, coronal, axial = [], [], []
    dims = None
    coronal_index = axial_index = None
    for record in records:
        stage = "loading masked volume"
        try:
            masked = load_volume(record.masked_volume_path, VolumeKind.INTENSITY)
            stage = "loading segmented volume"
            segmented = load_volume(record.segmented_volume_path, VolumeKind.SEGMENTATION)
            stage = "checking volume dims"
            if dims is None:
                dims = masked.dims
                coronal_index, axial_index = selection.slices_for(dims)
            if masked.dims != dims or segmented.dims != dims:
                raise DataError(f"dims {masked.dims}/{segmented.dims} differ from cohort {dims}")
            stage = "computing image features"
            rows.append(np.concatenate([
                tabular_features(record), image_features(masked, segmented, updown_axis)
            ]))
            stage = "extracting slices"
            coronal.append(extract_slice(masked, Orientation.CORONAL, coronal_index))
            axial.append(extract_slice(masked, Orientation.AXIAL, axial_index))
        except (PipelineError, OSError, IndexError) as exc:
            raise DataError(f"subject {record.id}: {stage}: {exc}") from exc
    return Cohort(
        records=list(records),
        labels=np.array([label_subject(r) for r in records]),
        base_features=np.array(rows),
        coronal_slices=coronal,
        axial_slices=axial,
        volume_dims=dims,
        coronal_index=coronal_index,
        axial_index=axial_index,
    )


@dataclass
class Coefficients:
    """Eigenbrain coefficients of every subject, on global or per-fold bases."""

    coronal: list[np.ndarray]  # one (n, k) array per basis fit
    axial: list[np.ndarray]
    bases: list[tuple[EigenbrainBasis, EigenbrainBasis]]
    per_fold: bool

    def features(self, base: np.ndarray, coronal_comp: int, axial_comp: int, fold: int = 0) -> np.ndarray:
        """Full 11-column feature matrix for one basis fit."""
        k = fold if self.per_fold else 0
        cor, ax = self.coronal[k], self.axial[k]
        if coronal_comp > cor.shape[1] or axial_comp > ax.shape[1]:
            raise DataError(
                f"component selection ({coronal_comp}, {axial_comp}) exceeds fitted basis sizes "
                f"({cor.shape[1]}, {ax.shape[1]})"
            )
        return np.column_stack([base, cor[:, coronal_comp - 1], ax[:, axial_comp - 1]])


def _fit_pair(cohort: Cohort, rows: np.ndarray, n_coronal: int, n_axial: int):
    n_fit = len(rows)
    limit = n_fit - 1
    if n_coronal > limit or n_axial > limit:
        raise DataError(f"cannot fit {max(n_coronal, n_axial)} components from {n_fit} subjects")
    cor = fit_eigenbrains([cohort.coronal_slices[i] for i in rows], n_coronal)
    ax = fit_eigenbrains([cohort.axial_slices[i] for i in rows], n_axial)
    cor_coef = np.array([project_all(cor, s) for s in cohort.coronal_slices])
    ax_coef = np.array([project_all(ax, s) for s in cohort.axial_slices])
    return cor, ax, cor_coef, ax_coef


def compute_coefficients(cohort: Cohort, n_coronal: int, n_axial: int,
                         plan: FoldPlan | None = None) -> Coefficients:
    """Fit eigenbrains on the whole cohort, or on each fold's training rows when ``plan`` is given."""
    fits = []
    if plan is None:
        fits.append(_fit_pair(cohort, np.arange(len(cohort.records)), n_coronal, n_axial))
    else:
        for fold in range(plan.k):
            fits.append(_fit_pair(cohort, plan.train_indices(fold), n_coronal, n_axial))
    return Coefficients(
        coronal=[f[2] for f in fits],
        axial=[f[3] for f in fits],
        bases=[(f[0], f[1]) for f in fits],
        per_fold=plan is not None,
    )


# --------------------------------------------------------------------------
# runs


@dataclass
class PipelineResult:
    config: RunConfig
    report: CvReport
    plan: FoldPlan
    features: np.ndarray  # (n, 11) with whole-cohort eigenbrain coefficients
    labels: np.ndarray
    model: SvmModel
    scaler: Standardizer
    final_train_accuracy: float | None = None

    def to_dict(self) -> dict:
        out = {
            "report_version": REPORT_VERSION,
            "config": self.config.describe(),
            "features": active_names(self.config.mask),
            "n_subjects": int(len(self.labels)),
            "n_positive": int(np.sum(self.labels == 1)),
            "fold_sizes": self.plan.sizes().tolist(),
            "cv": self.report.to_dict(),
        }
        if self.final_train_accuracy is not None:
            out["final_fit_train_accuracy"] = self.final_train_accuracy
        return out


def _cv(cohort: Cohort, coefs: Coefficients, config: RunConfig, plan: FoldPlan,
        coronal_comp: int, axial_comp: int) -> CvReport:
    mask = config.mask
    kwargs = dict(
        kernel=config.kernel_spec(),
        train_config=config.train_config(),
        fold_plan=plan,
        standardize=config.standardize,
        scale_mode=config.scale_mode,
    )
    if coefs.per_fold:
        def fold_features(fold):
            return coefs.features(cohort.base_features, coronal_comp, axial_comp, fold)[:, mask]
        return cross_validate(fold_features(0), cohort.labels, fold_features=fold_features, **kwargs)
    x = coefs.features(cohort.base_features, coronal_comp, axial_comp)[:, mask]
    return cross_validate(x, cohort.labels, **kwargs)


def _plan(cohort: Cohort, config: RunConfig) -> FoldPlan:
    return make_folds(cohort.labels, config.folds, config.seed, config.stratified)


def _fit_final(x: np.ndarray, labels: np.ndarray, config: RunConfig):
    scaler = fit_standardizer(x, config.scale_mode)
    xs = scaler.transform(x)
    model = train(xs, labels, config.kernel_spec(), config.train_config())
    accuracy = metrics(confusion(model.predict(xs), labels))[0]
    return model, scaler, accuracy


def fit_model(records: Sequence[SubjectRecord], config: RunConfig,
              cohort: Cohort | None = None) -> tuple[SvmModel, Standardizer, float]:
    """Standardize and train on every subject; returns (model, standardizer, train accuracy)."""
    if cohort is None:
        cohort = extract_cohort(records, config.selection, config.updown_axis)
    sel = config.selection
    coefs = compute_coefficients(cohort, sel.coronal_component, sel.axial_component)
    features = coefs.features(cohort.base_features, sel.coronal_component, sel.axial_component)
    return _fit_final(features[:, config.mask], cohort.labels, config)


def run_pipeline(records: Sequence[SubjectRecord], config: RunConfig,
                 cohort: Cohort | None = None) -> PipelineResult:
    """Cross-validate one configuration and fit a final model on every subject."""
    if cohort is None:
        cohort = extract_cohort(records, config.selection, config.updown_axis)
    sel = config.selection
    plan = _plan(cohort, config)
    global_coefs = compute_coefficients(cohort, sel.coronal_component, sel.axial_component)
    coefs = (
        compute_coefficients(cohort, sel.coronal_component, sel.axial_component, plan)
        if config.pca_train_only else global_coefs
    )
    report = _cv(cohort, coefs, config, plan, sel.coronal_component, sel.axial_component)
    features = global_coefs.features(cohort.base_features, sel.coronal_component, sel.axial_component)
    model, scaler, accuracy = _fit_final(features[:, config.mask], cohort.labels, config)
    return PipelineResult(
        config=config,
        report=report,
        plan=plan,
        features=features,
        labels=cohort.labels,
        model=model,
        scaler=scaler,
        final_train_accuracy=accuracy if config.final_fit else None,
    )


@dataclass(frozen=True)
class GridRow:
    coronal_component: int
    axial_component: int
    report: CvReport


def grid_search(records: Sequence[SubjectRecord], config: RunConfig,
                coronal_range: Sequence[int], axial_range: Sequence[int],
                cohort: Cohort | None = None) -> list[GridRow]:
    """CV every (coronal, axial) component pair; best test accuracy first."""
    coronal_range, axial_range = sorted(set(coronal_range)), sorted(set(axial_range))
    if not coronal_range or not axial_range or min(coronal_range + axial_range) < 1:
        raise DataError("component ranges must be nonempty sets of 1-based indices")
    if cohort is None:
        cohort = extract_cohort(records, config.selection, config.updown_axis)
    plan = _plan(cohort, config)
    coefs = compute_coefficients(
        cohort, max(coronal_range), max(axial_range), plan if config.pca_train_only else None
    )
    rows = [
        GridRow(c, a, _cv(cohort, coefs, config, plan, c, a))
        for c in coronal_range
        for a in axial_range
    ]
    rows.sort(key=lambda r: (
        -r.report.averages["test_accuracy"], -r.report.averages["mcc"],
        r.coronal_component, r.axial_component,
    ))
    return rows


ABLATIONS = {
    "baseline": (),
    "drop_age": (AGE_FEATURE,),
    "drop_pca": PCA_FEATURES,
}


def ablate(records: Sequence[SubjectRecord], config: RunConfig,
           cohort: Cohort | None = None) -> dict:
    """Baseline plus the drop-age and drop-PCA variants, with metric deltas vs baseline."""
    if cohort is None:
        cohort = extract_cohort(records, config.selection, config.updown_axis)
    results = {}
    for name, extra in ABLATIONS.items():
        drop = tuple(sorted(set(config.drop_features) | set(extra)))
        variant = replace(config, drop_features=drop)
        results[name] = run_pipeline(records, variant, cohort)
    base = results["baseline"].report.averages
    return {
        "runs": {name: r.to_dict() for name, r in results.items()},
        "deltas": {
            name: {m: r.report.averages[m] - base[m] for m in METRIC_NAMES}
            for name, r in results.items() if name != "baseline"
        },
    }


# --------------------------------------------------------------------------
# output


def dump_json(data, path) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def format_report(result: PipelineResult) -> str:
    cfg = result.config.describe()
    avg = result.report.averages
    lines = [
        f"kernel {cfg['kernel']}  gamma {cfg['gamma']}  C {cfg['c']}",
        f"features ({int(result.config.mask.sum())}): {', '.join(active_names(result.config.mask))}",
        f"subjects {len(result.labels)} (positive {int(np.sum(result.labels == 1))}), "
        f"{result.plan.k} folds, seed {result.plan.seed}",
        "",
        f"{'fold':>4} {'n_test':>6} {'train_acc':>9} {'test_acc':>8} {'prec':>6} {'recall':>6} {'mcc':>7}",
    ]
    for f in result.report.per_fold:
        flag = "" if f.converged else "  NOT CONVERGED"
        lines.append(
            f"{f.fold:>4} {f.n_test:>6} {f.train_accuracy:>9.3f} {f.test_accuracy:>8.3f} "
            f"{f.precision:>6.3f} {f.recall:>6.3f} {f.mcc:>7.3f}{flag}"
        )
    lines.append(
        f"{'mean':>4} {'':>6} {avg['train_accuracy']:>9.3f} {avg['test_accuracy']:>8.3f} "
        f"{avg['precision']:>6.3f} {avg['recall']:>6.3f} {avg['mcc']:>7.3f}"
    )
    if result.final_train_accuracy is not None:
        lines.append(f"final fit on all subjects: train accuracy {result.final_train_accuracy:.3f}")
    return "\n".join(lines) + "\n"


def write_features(path, records: Sequence[SubjectRecord], features: np.ndarray, labels) -> None:
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("id", *FEATURE_NAMES, "label"))
        for record, row, label in zip(records, features, labels):
            writer.writerow((record.id, *(repr(float(v)) for v in row), int(label)))


def write_run(result: PipelineResult, records: Sequence[SubjectRecord], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(result.to_dict(), out / "report.json")
    (out / "report.txt").write_text(format_report(result))
    with (out / "folds.csv").open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("id", "fold"))
        for record, fold in zip(records, result.plan.assignments):
            writer.writerow((record.id, int(fold)))
    save_model(result.model, out / "model.txt")
    write_standardizer(result.scaler, out / "standardizer.json", active_names(result.config.mask))
    write_features(out / "features.csv", records, result.features, result.labels)


def write_standardizer(scaler: Standardizer, path, feature_names: Sequence[str]) -> None:
    dump_json({
        "features": list(feature_names),
        "means": scaler.means.tolist(),
        "scales": scaler.scales.tolist(),
    }, path)


def export_eigenbrains(coefs: Coefficients, out_dir, count: int) -> None:
    """Write mean images and the first ``count`` components of the whole-cohort bases as RVOL."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for basis in coefs.bases[0]:
        tag = basis.orientation.value
        write_rvol(as_volume(basis.mean_image, basis.slice_dims), out / f"{tag}_mean.rvol", 2)
        for k in range(1, min(count, basis.size) + 1):
            write_rvol(as_volume(basis.component(k), basis.slice_dims),
                       out / f"{tag}_component_{k:02d}.rvol", 2)

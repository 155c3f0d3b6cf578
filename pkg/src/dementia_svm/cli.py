"""Command-line entry point.

Subcommands: extract, train, cv, grid, ablate, synth. Exit codes: 0 success,
1 data or parse error, 2 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from dementia_svm.eigenbrain import ComponentSelection
from dementia_svm.errors import ConvergenceError, DataError
from dementia_svm.evaluation import StandardizeMode
from dementia_svm.features import FlipAxis, ScaleMode, active_names
from dementia_svm.pipeline import (
    RunConfig,
    ablate,
    compute_coefficients,
    dump_json,
    export_eigenbrains,
    extract_cohort,
    fit_model,
    format_report,
    grid_search,
    read_manifest,
    run_pipeline,
    write_features,
    write_run,
    write_standardizer,
)
from dementia_svm.svm import KernelKind, save_model
from dementia_svm.synthetic import generate_synthetic

EXIT_OK, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2


def _index_list(text: str) -> tuple[int, ...]:
    """Parse "1,10-11" into (1, 10, 11)."""
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="comma-separated subject manifest")
    p.add_argument("--kernel", choices=[k.value for k in KernelKind], default="linear")
    p.add_argument("--gamma", type=float, help="RBF gamma (default 1 / active feature count)")
    p.add_argument("--c", type=float, default=1.0, help="soft-margin penalty C")
    p.add_argument("--pos-weight", type=float, default=1.0, help="C multiplier for the demented class")
    p.add_argument("--tolerance", type=float, default=1e-3, help="SMO stopping tolerance")
    p.add_argument("--max-iters", type=int, help="SMO iteration cap (default 1000 x training size)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop-features", type=_index_list, default=(),
                   help="1-based feature numbers to leave out, e.g. 1 or 10,11")
    p.add_argument("--coronal-comp", type=int, default=4)
    p.add_argument("--axial-comp", type=int, default=7)
    p.add_argument("--coronal-slice", type=int, help="coronal plane index (default ny // 2)")
    p.add_argument("--axial-slice", type=int, help="axial plane index (default nz // 2)")
    p.add_argument("--global-standardize", action="store_true",
                   help="fit the standardizer on all subjects instead of per training fold")
    p.add_argument("--variance-normalize", action="store_true",
                   help="divide centered features by the variance instead of the std")
    p.add_argument("--pca-train-only", action="store_true",
                   help="refit eigenbrains on each fold's training subjects")
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--final-fit", action="store_true",
                   help="also report training accuracy of a fit on all subjects")
    p.add_argument("--updown-axis", choices=["u", "v"], default="v",
                   help="slice axis flipped for the up/down symmetry feature")
    p.add_argument("--out", default="results", help="output directory")


def _config(args) -> RunConfig:
    return RunConfig(
        kernel=KernelKind(args.kernel),
        gamma=args.gamma,
        c=args.c,
        positive_weight=args.pos_weight,
        tolerance=args.tolerance,
        max_iters=args.max_iters,
        folds=args.folds,
        seed=args.seed,
        drop_features=args.drop_features,
        selection=ComponentSelection(
            coronal_component=args.coronal_comp,
            axial_component=args.axial_comp,
            coronal_slice=args.coronal_slice,
            axial_slice=args.axial_slice,
        ),
        standardize=StandardizeMode.GLOBAL if args.global_standardize else StandardizeMode.PER_FOLD,
        scale_mode=ScaleMode.VARIANCE if args.variance_normalize else ScaleMode.STD,
        pca_train_only=args.pca_train_only,
        stratified=not args.no_stratify,
        final_fit=args.final_fit,
        updown_axis=FlipAxis(args.updown_axis),
    )


def cmd_extract(args) -> int:
    config = _config(args)
    records = read_manifest(args.manifest)
    cohort = extract_cohort(records, config.selection, config.updown_axis)
    sel = config.selection
    coefs = compute_coefficients(cohort, sel.coronal_component, sel.axial_component)
    features = coefs.features(cohort.base_features, sel.coronal_component, sel.axial_component)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    write_features(Path(args.out) / "features.csv", records, features, cohort.labels)
    if args.export_eigenbrains:
        export_eigenbrains(coefs, Path(args.out) / "eigenbrains", args.export_eigenbrains)
    print(f"wrote features for {len(records)} subjects to {Path(args.out) / 'features.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config(args)
    records = read_manifest(args.manifest)
    model, scaler, accuracy = fit_model(records, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.txt")
    write_standardizer(scaler, out / "standardizer.json", active_names(config.mask))
    print(f"{len(model.dual_coefs)} support vectors, training accuracy {accuracy:.3f}; "
          f"model written to {out / 'model.txt'}")
    return EXIT_OK if model.converged else EXIT_CONVERGENCE


def cmd_cv(args) -> int:
    config = _config(args)
    records = read_manifest(args.manifest)
    result = run_pipeline(records, config)
    write_run(result, records, Path(args.out))
    print(format_report(result), end="")
    return EXIT_OK if result.report.converged else EXIT_CONVERGENCE


def cmd_grid(args) -> int:
    config = _config(args)
    records = read_manifest(args.manifest)
    rows = grid_search(records, config, args.coronal_range, args.axial_range)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = [
        {"coronal_component": r.coronal_component, "axial_component": r.axial_component,
         **r.report.averages, "converged": r.report.converged}
        for r in rows
    ]
    dump_json({"config": config.describe(), "rows": table}, out / "grid.json")
    print(f"{'coronal':>7} {'axial':>5} {'test_acc':>8} {'mcc':>7}")
    for row in table:
        print(f"{row['coronal_component']:>7} {row['axial_component']:>5} "
              f"{row['test_accuracy']:>8.3f} {row['mcc']:>7.3f}")
    return EXIT_OK if all(r.report.converged for r in rows) else EXIT_CONVERGENCE


def cmd_ablate(args) -> int:
    config = _config(args)
    records = read_manifest(args.manifest)
    summary = ablate(records, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(summary, out / "ablation.json")
    for name, deltas in summary["deltas"].items():
        print(f"{name:>9}: " + "  ".join(f"{k} {v:+.3f}" for k, v in deltas.items()))
    converged = all(run["cv"]["converged"] for run in summary["runs"].values())
    return EXIT_OK if converged else EXIT_CONVERGENCE


def cmd_synth(args) -> int:
    records = generate_synthetic(args.n, args.out, tuple(args.dims), args.class_effect, args.seed)
    positives = sum(r.cdr > 0 for r in records)
    print(f"wrote {len(records)} subjects ({positives} demented) to {args.out}/manifest.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dementia-svm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="compute the feature table only")
    _add_run_flags(p)
    p.add_argument("--export-eigenbrains", type=int, default=0, metavar="K",
                   help="also write mean images and the first K eigenbrains as RVOL")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="fit a model on every subject")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="k-fold cross-validation report")
    _add_run_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("grid", help="cross-validate a grid of eigenbrain component pairs")
    _add_run_flags(p)
    p.add_argument("--coronal-range", type=_index_list, default=tuple(range(1, 9)))
    p.add_argument("--axial-range", type=_index_list, default=tuple(range(1, 9)))
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("ablate", help="baseline vs drop-age vs drop-PCA")
    _add_run_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--class-effect", type=float, default=1.0)
    p.add_argument("--dims", type=int, nargs=3, default=[16, 20, 16], metavar=("NX", "NY", "NZ"))
    p.add_argument("--out", default="synthetic")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

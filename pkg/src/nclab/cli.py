"""Command-line entry point: ``nclab {gen,run,metrics,split-test,compare,plot}``.

Exit status is 0 on success, 2 for usage errors (argparse) and 1 for domain
errors such as malformed input files or degenerate geometry.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import collapse, datagen, experiment, nnet, plots, probes

DEFAULT = experiment.ExperimentConfig()

SUITE_PLOTS = (
    ("nc1-per-epoch", "epochs.csv", "nc1_per_epoch.svg"),
    ("split-scatter", "checkpoints.csv", "split_scatter.svg"),
    ("delta-bars", "comparison.csv", "delta_bars.svg"),
)


class CLIError(Exception):
    pass


def _seed_list(text: str) -> tuple[int, ...]:
    """``"10"`` means seeds 0..9; ``"3,5,8"`` lists seeds; ``"2-6"`` is an inclusive range."""
    text = text.strip()
    try:
        if "," in text:
            return tuple(int(s) for s in text.split(",") if s.strip())
        if "-" in text[1:]:
            lo, hi = text.split("-", 1)
            return tuple(range(int(lo), int(hi) + 1))
        count = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if count < 1:
        raise argparse.ArgumentTypeError("seed count must be >= 1")
    return tuple(range(count))


def _unit_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {v}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="nclab", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = DEFAULT.gen
    p = sub.add_parser("gen", help="generate a synthetic dataset as CSV", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--n-per-cell", type=_positive_int, default=g.n_per_cell, help="samples per (class, group) cell")
    p.add_argument("--d", type=int, default=g.d, help="input dimension (>= 2)")
    p.add_argument("--class-sep", type=float, default=g.class_mean_separation, help="class-mean separation")
    p.add_argument("--group-shift", type=float, default=g.group_shift, help="group-mean offset")
    p.add_argument("--noise-sd", type=float, default=g.noise_sd, help="isotropic noise standard deviation")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--bias-fraction", type=_unit_float, default=0.0,
                   help="fraction of target-group positives relabelled negative")
    p.add_argument("--target-group", type=int, choices=(0, 1), default=DEFAULT.target_group,
                   help="group receiving the flips")

    p = sub.add_parser("run", help="run the clean-vs-biased suite", formatter_class=fmt)
    p.add_argument("--config", help="JSON file with ExperimentConfig overrides")
    p.add_argument("--out", default=DEFAULT.output_dir, help="output directory")
    p.add_argument("--seeds", type=_seed_list, default=DEFAULT.seeds,
                   help="seed count N (0..N-1), comma list or inclusive range a-b; overrides --config")
    p.add_argument("--bias-fraction", type=_unit_float, default=DEFAULT.bias_fraction,
                   help="flip fraction for the biased arm; overrides --config")
    p.add_argument("--epochs", type=_positive_int, default=DEFAULT.hyper.max_epochs,
                   help="training epochs; overrides --config")
    p.add_argument("--quiet", action="store_true", help="suppress per-seed progress lines")
    p.add_argument("--no-checkpoints", action="store_true", help="skip writing model checkpoints")

    p = sub.add_parser("metrics", help="NC metrics of a feature matrix", formatter_class=fmt)
    p.add_argument("--features", required=True,
                   help="CSV with columns f0..f{p-1},label[,group]")
    p.add_argument("--weights", help="classifier weights: checkpoint JSON or K x p CSV without header")
    p.add_argument("--json", action="store_true", help="print a JSON object instead of text")

    p = sub.add_parser("split-test", help="group-probe AUC of a checkpoint's features", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset CSV (as written by gen)")
    p.add_argument("--checkpoint", required=True, help="model checkpoint JSON")
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--raw", action="store_true", help="also fit the linear raw-data reference probe")

    p = sub.add_parser("compare", help="clean-vs-biased comparison from suite CSVs", formatter_class=fmt)
    p.add_argument("--input", required=True, help="suite directory containing checkpoints.csv")
    p.add_argument("--out", help="write comparison.csv here instead of printing only")

    p = sub.add_parser("plot", help="render an SVG chart", formatter_class=fmt)
    p.add_argument("--kind", required=True, choices=plots.KINDS, help="chart type")
    p.add_argument("--input", required=True, help="input CSV (epochs, checkpoints or comparison)")
    p.add_argument("--out", required=True, help="output SVG path")
    p.add_argument("--title", default="", help="chart title")
    p.add_argument("--stage", choices=experiment.STAGES, default="early", help="split-scatter checkpoint stage")
    return parser


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    cfg = datagen.GenConfig(args.n_per_cell, args.d, args.class_sep, args.group_shift, args.noise_sd, args.seed)
    ds = datagen.generate_gaussian_mixture(cfg)
    if args.bias_fraction > 0:
        ds, rec = datagen.inject_label_bias(ds, args.target_group, args.bias_fraction, args.seed)
        print(f"flipped {len(rec.flipped_indices)} labels in group {args.target_group}")
    datagen.write_csv_dataset(ds, args.out)
    print(f"wrote {ds.n} rows x {ds.d} features to {args.out}")
    return 0


def resolve_run_config(args, argv_flags: set[str]) -> experiment.ExperimentConfig:
    cfg = experiment.ExperimentConfig.load(args.config) if args.config else experiment.ExperimentConfig()
    changes = {}
    if "--seeds" in argv_flags or not args.config:
        changes["seeds"] = args.seeds
    if "--bias-fraction" in argv_flags or not args.config:
        changes["bias_fraction"] = args.bias_fraction
    if "--epochs" in argv_flags or not args.config:
        changes["hyper"] = dataclasses.replace(cfg.hyper, max_epochs=args.epochs)
    changes["output_dir"] = args.out
    return dataclasses.replace(cfg, **changes)


def cmd_run(args, argv_flags) -> int:
    cfg = resolve_run_config(args, argv_flags)
    out = Path(cfg.output_dir)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore" if args.quiet else "default")
        records = experiment.run_suite(cfg, out_dir=out, quiet=args.quiet)
    failed = [r for r in records if r.error]
    for rec in failed:
        print(f"seed {rec.seed} {rec.arm} failed: {rec.error}", file=sys.stderr)
    if not args.no_checkpoints:
        ck_dir = out / "checkpoints"
        ck_dir.mkdir(exist_ok=True)
        for rec in records:
            for stage, model in rec.models.items():
                meta = {"arm": rec.arm, "seed": rec.seed, "stage": stage, "epoch": rec.checkpoints[stage].epoch}
                nnet.save_checkpoint(model, ck_dir / f"{rec.arm}_seed{rec.seed}_{stage}.json", meta)
    for kind, source, name in SUITE_PLOTS:
        try:
            plots.write_plot(plots.PlotSpec(kind, str(out / source), str(out / name)))
        except plots.PlotError as exc:
            print(f"skipped {name}: {exc}", file=sys.stderr)
    if not args.quiet:
        print(f"wrote suite outputs to {out}")
    return 1 if len(failed) == len(records) else 0


def _read_feature_csv(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CLIError(f"{path}: empty file") from None
        if "label" not in header:
            raise CLIError(f"{path}: missing 'label' column")
        fcols = [i for i, h in enumerate(header) if h.startswith("f") and h[1:].isdigit()]
        if not fcols:
            raise CLIError(f"{path}: no feature columns f0..")
        li = header.index("label")
        gi = header.index("group") if "group" in header else None
        xs, ys, gs = [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                xs.append([float(row[i]) for i in fcols])
                ys.append(int(float(row[li])))
                if gi is not None:
                    gs.append(int(float(row[gi])))
            except (ValueError, IndexError):
                raise CLIError(f"{path}: line {line}: malformed row") from None
    if not xs:
        raise CLIError(f"{path}: no data rows")
    return nnet.FeatureBatch(np.array(xs), np.array(ys), np.array(gs) if gi is not None else None)


def _read_weights(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".json":
        return nnet.load_checkpoint(path).classifier_weights
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise CLIError(f"{path}: {exc}") from None


def cmd_metrics(args) -> int:
    fb = _read_feature_csv(args.features)
    weights = _read_weights(args.weights) if args.weights else None
    report = collapse.nc_report(fb, weights)
    values = report.as_dict()
    if args.json:
        print(json.dumps(values, sort_keys=True))
        return 0
    print(f"NC1 = {report.nc1_global:.9g}")
    for g, v in sorted(report.nc1_per_group.items()):
        print(f"NC1[group {g}] = {v:.9g}")
    print(f"NC2 equinorm = {report.nc2_equinorm:.9g}")
    print(f"NC2 equiangularity = {report.nc2_equiangular:.9g}")
    if weights is not None:
        print(f"NC3 = {report.nc3_selfdual:.9g}")
        print(f"NC4 = {report.nc4_mismatch:.9g}")
    if fb.groups is not None and not math.isnan(report.config_divergence):
        print(f"configuration divergence = {report.config_divergence:.9g}")
    return 0


def cmd_split_test(args) -> int:
    ds = datagen.load_csv_dataset(args.data)
    model = nnet.load_checkpoint(args.checkpoint)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", datagen.StratificationWarning)
        splits = datagen.split_dataset(ds, DEFAULT.split_fractions, args.seed)
    print(f"feature AUC = {probes.split_test(model, ds, splits, args.seed):.9g}")
    if args.raw:
        print(f"raw AUC = {probes.raw_data_probe(ds, splits, seed=args.seed, linear=True):.9g}")
    return 0


def cmd_compare(args) -> int:
    directory = Path(args.input)
    if not (directory / "checkpoints.csv").exists():
        raise CLIError(f"{directory}: no checkpoints.csv")
    records = experiment.load_records(directory)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = experiment.compare_arms(records)
    print("stage  group  dNC1        dF1         p          method")
    for r in report.rows:
        mark = " *" if r.significant else ""
        print(f"{r.stage:<6} {r.group:<6} {r.delta_nc1_mean:+.4e} {r.delta_f1_mean:+.4e} "
              f"{r.p_value:<10.4g} {r.method}{mark}")
    for stage, tau in report.kendall_tau.items():
        print(f"SPLIT Kendall tau ({stage}) = {tau:.4g}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        experiment._write_csv(out, experiment.COMPARISON_COLUMNS, experiment.comparison_rows(report))
    return 0


def cmd_plot(args) -> int:
    spec = plots.PlotSpec(args.kind, args.input, args.out, title=args.title, stage=args.stage)
    plots.write_plot(spec)
    print(f"wrote {args.out}")
    return 0


DOMAIN_ERRORS = (
    CLIError, ValueError, FileNotFoundError, IsADirectoryError, PermissionError, json.JSONDecodeError,
    collapse.DegenerateGeometryError, plots.PlotError, FloatingPointError, KeyError,
)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    flags = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    try:
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "run":
            return cmd_run(args, flags)
        if args.command == "metrics":
            return cmd_metrics(args)
        if args.command == "split-test":
            return cmd_split_test(args)
        if args.command == "compare":
            return cmd_compare(args)
        return cmd_plot(args)
    except DOMAIN_ERRORS as exc:
        print(f"nclab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

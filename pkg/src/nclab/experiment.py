"""Clean-vs-biased training protocol, per-epoch collapse tracking and comparison.

For each seed both arms share the generated data, the split and the model
initialisation; the only difference is the label flips injected into the
biased arm's train and validation rows. Records are written to three CSV
files whose column order is fixed by the ``*_COLUMNS`` tuples below.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import collapse, nnet, probes
from .datagen import (
    Dataset,
    GenConfig,
    SplitAssignment,
    generate_gaussian_mixture,
    inject_label_bias,
    split_dataset,
)
from .stats import f1_score, kendall_tau, mann_whitney_u

log = logging.getLogger(__name__)

ARMS = ("clean", "biased")
STAGES = ("early", "final")
GROUPS = (0, 1)
P_CRITICAL = 0.05
FLOAT_FORMAT = "{:.9g}"

EPOCH_COLUMNS = (
    "arm", "seed", "epoch", "train_loss", "val_loss", "train_acc",
    "nc1", "nc1_group0", "nc1_group1", "nc1_weighted_residual",
    "nc2_equinorm", "nc2_equiangular", "nc3_selfdual", "nc4_mismatch", "config_divergence",
)
CHECKPOINT_COLUMNS = (
    "arm", "seed", "stage", "epoch", "n_flipped", "train_nc1",
    "test_nc1", "test_nc1_group0", "test_nc1_group1", "test_nc2_equinorm", "test_nc2_equiangular",
    "test_nc3_selfdual", "test_nc4_mismatch", "test_config_divergence",
    "f1", "f1_group0", "f1_group1", "accuracy", "feature_auc", "raw_auc",
)
COMPARISON_COLUMNS = (
    "stage", "group", "n_pairs", "delta_nc1_mean", "delta_nc1_std", "delta_f1_mean", "delta_f1_std",
    "f1_clean_mean", "f1_biased_mean", "u_statistic", "p_value", "method", "significant", "split_kendall_tau",
)


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    gen: GenConfig = field(default_factory=lambda: GenConfig(
        n_per_cell=500, d=256, class_mean_separation=16.0, group_shift=2.0, noise_sd=1.0))
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    bias_fraction: float = 0.25
    target_group: int = 1
    hidden_widths: tuple[int, ...] = (128, 128)
    hyper: nnet.TrainHyper = field(default_factory=lambda: nnet.TrainHyper(
        learning_rate=0.1, momentum=0.9, batch_size=32, max_epochs=200, weight_decay=1e-2,
        lr_milestones=(100, 150), warmup_epochs=10))
    seeds: tuple[int, ...] = tuple(range(10))
    raw_probe: str = "mlp"  # "mlp" | "linear"
    raw_probe_epochs: int = 50
    collapse_fraction: float = 0.05
    output_dir: str = "runs/default"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "split_fractions", tuple(float(f) for f in self.split_fractions))
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ValueError("seeds must be a nonempty list of distinct integers")
        if not 0 <= self.bias_fraction <= 1:
            raise ValueError("bias_fraction must lie in [0, 1]")
        if self.target_group not in GROUPS:
            raise ValueError("target_group must be 0 or 1")
        if self.raw_probe not in ("mlp", "linear"):
            raise ValueError("raw_probe must be 'mlp' or 'linear'")
        self.gen.validate()

    @property
    def arch(self) -> nnet.Architecture:
        return nnet.Architecture(self.gen.d, self.hidden_widths, 2)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["split_fractions"] = list(self.split_fractions)
        out["hidden_widths"] = list(self.hidden_widths)
        out["seeds"] = list(self.seeds)
        out["hyper"]["lr_milestones"] = list(self.hyper.lr_milestones)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        base = cls()
        if "gen" in doc:
            doc["gen"] = _merge(base.gen, doc["gen"], "gen")
        if "hyper" in doc:
            hyper = dict(doc["hyper"])
            if "lr_milestones" in hyper:
                hyper["lr_milestones"] = tuple(hyper["lr_milestones"])
            doc["hyper"] = _merge(base.hyper, hyper, "hyper")
        for key in ("split_fractions", "hidden_widths", "seeds"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return dataclasses.replace(base, **doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _merge(default, overrides: dict, name: str):
    known = {f.name for f in dataclasses.fields(default)}
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown {name} keys: {sorted(unknown)}")
    return dataclasses.replace(default, **overrides)


@dataclass
class CheckpointResult:
    stage: str
    epoch: int
    test_report: collapse.NCReport
    f1: float
    f1_per_group: dict
    accuracy: float
    split: probes.SplitResult
    train_nc1: float = math.nan


@dataclass
class ExperimentRecord:
    arm: str
    seed: int
    epochs: list[dict] = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)  # stage -> CheckpointResult
    early_stop_epoch: int = 0
    test_indices: tuple[int, ...] = ()
    flipped_indices: tuple[int, ...] = ()
    error: Optional[str] = None
    models: dict = field(default_factory=dict, repr=False, compare=False)  # stage -> ModelState

    def epoch_row(self, epoch: int) -> dict:
        return self.epochs[epoch - 1]


@dataclass
class SeedData:
    dataset: Dataset
    splits: SplitAssignment
    raw_auc: float


def prepare_seed(cfg: ExperimentConfig, seed: int, with_raw_probe: bool = True) -> SeedData:
    gen = dataclasses.replace(cfg.gen, seed=seed)
    ds = generate_gaussian_mixture(gen)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        splits = split_dataset(ds, cfg.split_fractions, seed)
    raw_auc = math.nan
    if with_raw_probe:
        hyper = dataclasses.replace(cfg.hyper, seed=seed, max_epochs=cfg.raw_probe_epochs, lr_milestones=())
        raw_auc = probes.raw_data_probe(ds, splits, cfg.arch, hyper, seed, linear=cfg.raw_probe == "linear")
    return SeedData(ds, splits, raw_auc)


def _epoch_metrics(model: nnet.ModelState, train: Dataset) -> dict:
    fb = nnet.feature_batch(model, train.samples, train.labels, train.groups)
    report = collapse.nc_report(fb, model)
    weighted = collapse.weighted_group_nc1(report.nc1_per_group, fb)
    pred, _ = nnet.predict(model, train.samples)
    row = {
        "train_acc": float(np.mean(pred == train.labels)),
        "nc1": report.nc1_global,
        "nc1_group0": report.nc1_per_group.get(0, math.nan),
        "nc1_group1": report.nc1_per_group.get(1, math.nan),
        "nc1_weighted_residual": abs(weighted - report.nc1_global),
        "nc2_equinorm": report.nc2_equinorm,
        "nc2_equiangular": report.nc2_equiangular,
        "nc3_selfdual": report.nc3_selfdual,
        "nc4_mismatch": report.nc4_mismatch,
        "config_divergence": report.config_divergence,
    }
    return row


def evaluate_checkpoint(model, stage: str, epoch: int, arm: str, data: SeedData, seed: int) -> CheckpointResult:
    ds, splits = data.dataset, data.splits
    test = ds.subset(splits.test)
    truth = test.clean_labels
    fb = nnet.feature_batch(model, test.samples, truth, test.groups)
    report = collapse.nc_report(fb, model)
    pred, _ = nnet.predict(model, test.samples)
    f1_groups = {g: f1_score(pred[test.groups == g], truth[test.groups == g]) for g in GROUPS}
    try:
        feature_auc = probes.split_test(model, ds, splits, seed)
    except probes.DegenerateTargetError as exc:
        log.warning("seed %s %s/%s: SPLIT skipped (%s)", seed, arm, stage, exc)
        feature_auc = math.nan
    return CheckpointResult(
        stage=stage,
        epoch=epoch,
        test_report=report,
        f1=f1_score(pred, truth),
        f1_per_group=f1_groups,
        accuracy=float(np.mean(pred == truth)),
        split=probes.SplitResult(feature_auc, data.raw_auc, stage, arm),
    )


def run_arm(cfg: ExperimentConfig, biased: bool, seed: int, data: Optional[SeedData] = None) -> ExperimentRecord:
    """Train one arm for one seed and evaluate its early and final checkpoints."""
    arm = "biased" if biased else "clean"
    data = data or prepare_seed(cfg, seed)
    ds, splits = data.dataset, data.splits
    flipped: tuple[int, ...] = ()
    if biased:
        eligible = np.concatenate([splits.train, splits.val])
        ds, flips = inject_label_bias(ds, cfg.target_group, cfg.bias_fraction, seed, eligible=eligible)
        flipped = flips.flipped_indices
        if np.intersect1d(flipped, splits.test).size:
            raise ExperimentError("label flip leaked into the test split")
    record = ExperimentRecord(arm, seed, test_indices=tuple(int(i) for i in splits.test), flipped_indices=flipped)
    train_set = ds.subset(splits.train)
    val_set = ds.subset(splits.val) if len(splits.val) else train_set
    hyper = dataclasses.replace(cfg.hyper, seed=seed)
    model = nnet.init_model(cfg.arch, seed)

    def on_epoch(epoch, state):
        return _epoch_metrics(state, train_set)

    try:
        result = nnet.train(model, train_set.samples, train_set.labels, val_set.samples, val_set.labels,
                            hyper, on_epoch)
    except nnet.TrainingDiverged as exc:
        record.epochs = [_epoch_row(arm, seed, h) for h in exc.history]
        record.error = str(exc)
        return record
    record.epochs = [_epoch_row(arm, seed, h) for h in result.history]
    record.early_stop_epoch = result.early_stop_epoch
    evaluation_data = SeedData(ds, splits, data.raw_auc)
    for stage, state, epoch in (("early", result.early_stopped, result.early_stop_epoch),
                                ("final", result.final, len(result.history))):
        ck = evaluate_checkpoint(state, stage, epoch, arm, evaluation_data, seed)
        ck.train_nc1 = record.epoch_row(epoch)["nc1"]
        record.checkpoints[stage] = ck
        record.models[stage] = state
    return record


def _epoch_row(arm: str, seed: int, log_entry: nnet.EpochLog) -> dict:
    row = {"arm": arm, "seed": seed, "epoch": log_entry.epoch,
           "train_loss": log_entry.train_loss, "val_loss": log_entry.val_loss}
    row.update(log_entry.extra)
    return row


def _run_seed(args) -> list[ExperimentRecord]:
    cfg, seed = args
    try:
        data = prepare_seed(cfg, seed)
    except Exception as exc:  # recorded, suite continues
        return [ExperimentRecord(arm, seed, error=f"data preparation failed: {exc}") for arm in ARMS]
    out = []
    for biased in (False, True):
        try:
            out.append(run_arm(cfg, biased, seed, data))
        except Exception as exc:
            out.append(ExperimentRecord("biased" if biased else "clean", seed, error=str(exc)))
    return out


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("NCLAB_THREADS", "1")))
    except ValueError:
        return 1


def run_suite(cfg: ExperimentConfig, out_dir=None, quiet: bool = True) -> list[ExperimentRecord]:
    """Both arms for every seed; rows are appended to the CSVs as seeds finish."""
    writer = SuiteWriter(out_dir, cfg) if out_dir is not None else None
    jobs = [(cfg, s) for s in cfg.seeds]
    workers = min(thread_cap(), len(jobs))
    records: list[ExperimentRecord] = []

    def consume(batch):
        for rec in batch:
            if rec.error:
                log.warning("seed %s %s failed: %s", rec.seed, rec.arm, rec.error)
            elif not quiet:
                early, final = rec.checkpoints["early"], rec.checkpoints["final"]
                print(f"seed {rec.seed:>3} {rec.arm:>6}: early@{early.epoch} F1 {early.f1:.3f} | "
                      f"final F1 {final.f1:.3f} train NC1 {final.train_nc1:.4f}", flush=True)
            records.append(rec)
            if writer:
                writer.append(rec)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch in pool.map(_run_seed, jobs):
                consume(batch)
    else:
        for job in jobs:
            consume(_run_seed(job))
    if writer:
        writer.finish(compare_arms(records))
    return records


@dataclass
class ComparisonRow:
    stage: str
    group: int
    n_pairs: int
    delta_nc1_mean: float
    delta_nc1_std: float
    delta_f1_mean: float
    delta_f1_std: float
    f1_clean_mean: float
    f1_biased_mean: float
    u_statistic: float
    p_value: float
    method: str
    significant: bool
    split_kendall_tau: float = math.nan


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow] = field(default_factory=list)
    kendall_tau: dict = field(default_factory=dict)  # stage -> tau
    notes: list[str] = field(default_factory=list)

    def row(self, stage: str, group: int) -> ComparisonRow:
        for r in self.rows:
            if r.stage == stage and r.group == group:
                return r
        raise KeyError((stage, group))


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std())


def compare_arms(records, p_critical: float = P_CRITICAL) -> ComparisonReport:
    """Seed-paired biased-minus-clean deltas with a Mann-Whitney test on per-group F1.

    ``records`` may hold ExperimentRecord objects or anything exposing the
    same ``arm``/``seed``/``checkpoints`` attributes.
    """
    report = ComparisonReport()
    by_arm: dict[str, dict[int, ExperimentRecord]] = {arm: {} for arm in ARMS}
    for rec in records:
        if rec.error is None:
            by_arm[rec.arm][rec.seed] = rec
    for stage in STAGES:
        feature_aucs, raw_aucs = [], []
        for rec in sorted(by_arm["biased"].values(), key=lambda r: r.seed):
            ck = rec.checkpoints.get(stage)
            if ck and not (math.isnan(ck.split.feature_auc) or math.isnan(ck.split.raw_auc)):
                feature_aucs.append(ck.split.feature_auc)
                raw_aucs.append(ck.split.raw_auc)
        tau = kendall_tau(raw_aucs, feature_aucs) if len(raw_aucs) >= 2 else math.nan
        report.kendall_tau[stage] = tau
        for group in GROUPS:
            d_nc1, d_f1, f1_clean, f1_biased = [], [], [], []
            for seed in sorted(set(by_arm["clean"]) & set(by_arm["biased"])):
                c = by_arm["clean"][seed].checkpoints.get(stage)
                b = by_arm["biased"][seed].checkpoints.get(stage)
                if c is None or b is None:
                    continue
                d_nc1.append(b.test_report.nc1_per_group.get(group, math.nan)
                             - c.test_report.nc1_per_group.get(group, math.nan))
                d_f1.append(b.f1_per_group[group] - c.f1_per_group[group])
                f1_clean.append(c.f1_per_group[group])
                f1_biased.append(b.f1_per_group[group])
            fc = [v for v in f1_clean if not math.isnan(v)]
            fb = [v for v in f1_biased if not math.isnan(v)]
            if len(fc) < 2 or len(fb) < 2:
                msg = f"stage {stage} group {group}: fewer than two seeds per arm; omitted"
                warnings.warn(msg, stacklevel=2)
                report.notes.append(msg)
                continue
            test = mann_whitney_u(fb, fc)
            nc1_m, nc1_s = _mean_std(d_nc1)
            f1_m, f1_s = _mean_std(d_f1)
            report.rows.append(ComparisonRow(
                stage, group, len(d_f1), nc1_m, nc1_s, f1_m, f1_s,
                float(np.mean(fc)), float(np.mean(fb)),
                test.u_statistic, test.p_value, test.method, test.p_value < p_critical, tau,
            ))
    return report


# ---------------------------------------------------------------- serialisation

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT.format(float(value))
    return str(value)


def epoch_rows(record: ExperimentRecord) -> list[list[str]]:
    return [[_fmt(row.get(col, math.nan)) for col in EPOCH_COLUMNS] for row in record.epochs]


def checkpoint_rows(record: ExperimentRecord) -> list[list[str]]:
    rows = []
    for stage in STAGES:
        ck = record.checkpoints.get(stage)
        if ck is None:
            continue
        rep = ck.test_report
        values = {
            "arm": record.arm, "seed": record.seed, "stage": stage, "epoch": ck.epoch,
            "n_flipped": len(record.flipped_indices), "train_nc1": ck.train_nc1,
            "test_nc1": rep.nc1_global,
            "test_nc1_group0": rep.nc1_per_group.get(0, math.nan),
            "test_nc1_group1": rep.nc1_per_group.get(1, math.nan),
            "test_nc2_equinorm": rep.nc2_equinorm, "test_nc2_equiangular": rep.nc2_equiangular,
            "test_nc3_selfdual": rep.nc3_selfdual, "test_nc4_mismatch": rep.nc4_mismatch,
            "test_config_divergence": rep.config_divergence,
            "f1": ck.f1, "f1_group0": ck.f1_per_group[0], "f1_group1": ck.f1_per_group[1],
            "accuracy": ck.accuracy, "feature_auc": ck.split.feature_auc, "raw_auc": ck.split.raw_auc,
        }
        rows.append([_fmt(values[col]) for col in CHECKPOINT_COLUMNS])
    return rows


def comparison_rows(report: ComparisonReport) -> list[list[str]]:
    return [[_fmt(getattr(r, col)) for col in COMPARISON_COLUMNS] for r in report.rows]


def _write_csv(path: Path, header, rows, mode="w") -> None:
    with path.open(mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(header)
        w.writerows(rows)


class SuiteWriter:
    """Single writer that appends each finished record to the suite CSVs."""

    def __init__(self, out_dir, cfg: Optional[ExperimentConfig] = None):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        _write_csv(self.out / "epochs.csv", EPOCH_COLUMNS, [])
        _write_csv(self.out / "checkpoints.csv", CHECKPOINT_COLUMNS, [])
        if cfg is not None:
            write_manifest(cfg, self.out / "manifest.json")

    def append(self, record: ExperimentRecord) -> None:
        _write_csv(self.out / "epochs.csv", None, epoch_rows(record), mode="a")
        _write_csv(self.out / "checkpoints.csv", None, checkpoint_rows(record), mode="a")

    def finish(self, report: ComparisonReport) -> None:
        _write_csv(self.out / "comparison.csv", COMPARISON_COLUMNS, comparison_rows(report))


def write_manifest(cfg: ExperimentConfig, path) -> None:
    doc = {"format": "nclab-manifest", "version": 1, "config": cfg.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def serialize(records, report: Optional[ComparisonReport], out_dir, cfg: Optional[ExperimentConfig] = None) -> Path:
    """Write epochs.csv, checkpoints.csv, comparison.csv and manifest.json."""
    writer = SuiteWriter(out_dir, cfg or ExperimentConfig())
    for rec in records:
        writer.append(rec)
    writer.finish(report if report is not None else ComparisonReport())
    return writer.out


# ---------------------------------------------------------------- parsing

def _parse_value(col: str, text: str):
    if col in ("arm", "stage", "method"):
        return text
    if col in ("seed", "epoch", "n_flipped", "group", "n_pairs"):
        return int(text)
    if col == "significant":
        return text == "1"
    return float(text)


def read_csv_rows(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: _parse_value(k, v) for k, v in row.items()} for row in reader]


def load_records(out_dir) -> list[ExperimentRecord]:
    """Rebuild records (epoch rows and checkpoints) from a suite directory."""
    out = Path(out_dir)
    records: dict[tuple[str, int], ExperimentRecord] = {}
    for row in read_csv_rows(out / "epochs.csv"):
        key = (row["arm"], row["seed"])
        records.setdefault(key, ExperimentRecord(*key)).epochs.append(row)
    for row in read_csv_rows(out / "checkpoints.csv"):
        key = (row["arm"], row["seed"])
        rec = records.setdefault(key, ExperimentRecord(*key))
        rep = collapse.NCReport(
            nc1_global=row["test_nc1"],
            nc1_per_group={0: row["test_nc1_group0"], 1: row["test_nc1_group1"]},
            nc2_equinorm=row["test_nc2_equinorm"], nc2_equiangular=row["test_nc2_equiangular"],
            nc3_selfdual=row["test_nc3_selfdual"], nc4_mismatch=row["test_nc4_mismatch"],
            config_divergence=row["test_config_divergence"],
        )
        rec.checkpoints[row["stage"]] = CheckpointResult(
            stage=row["stage"], epoch=row["epoch"], test_report=rep, f1=row["f1"],
            f1_per_group={0: row["f1_group0"], 1: row["f1_group1"]}, accuracy=row["accuracy"],
            split=probes.SplitResult(row["feature_auc"], row["raw_auc"], row["stage"], row["arm"]),
            train_nc1=row["train_nc1"],
        )
        if row["stage"] == "early":
            rec.early_stop_epoch = row["epoch"]
    return [records[k] for k in sorted(records, key=lambda k: (k[1], ARMS.index(k[0])))]

"""Synthetic subgroup-structured data, under-diagnosis label bias and splits.

The default generator places the two classes on the first axis and offsets
the two groups along the second axis, so the first two coordinates reproduce
the classic 2-D picture of two classes made of two subgroups each. Extra
coordinates (``d > 2``) carry pure isotropic noise.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


class EmptyPopulationError(ValueError):
    pass


class CSVParseError(ValueError):
    pass


class StratificationWarning(UserWarning):
    pass


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for a named sub-stream of ``seed``."""
    return np.random.default_rng([int(seed), *map(int, stream)])


@dataclass
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    clean_labels: np.ndarray
    groups: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
        self.groups = np.asarray(self.groups, dtype=np.int64)
        if self.samples.ndim != 2:
            raise ConfigError("samples must be an n x d matrix")
        n = self.samples.shape[0]
        for name in ("labels", "clean_labels", "groups"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ConfigError(f"{name} must have length {n}, got {arr.shape}")
            if not np.isin(arr, (0, 1)).all():
                raise ConfigError(f"{name} must be binary")
        changed = self.labels != self.clean_labels
        if np.any(self.labels[changed] != 0):
            raise ConfigError("labels may only differ from clean_labels by 1 -> 0 flips")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.samples[idx], self.labels[idx], self.clean_labels[idx], self.groups[idx])


@dataclass(frozen=True)
class GenConfig:
    n_per_cell: int = 500
    d: int = 2
    class_mean_separation: float = 4.0
    group_shift: float = 2.0
    noise_sd: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if int(self.n_per_cell) < 1:
            raise ConfigError(f"n_per_cell must be >= 1, got {self.n_per_cell}")
        if int(self.d) < 2:
            raise ConfigError(f"d must be >= 2, got {self.d}")
        if not self.noise_sd > 0:
            raise ConfigError(f"noise_sd must be > 0, got {self.noise_sd}")
        if not self.class_mean_separation > 0:
            raise ConfigError("class_mean_separation must be > 0")
        if not self.group_shift >= 0:
            raise ConfigError("group_shift must be >= 0")

    def cell_mean(self, label: int, group: int) -> np.ndarray:
        mean = np.zeros(self.d)
        mean[0] = (label - 0.5) * self.class_mean_separation
        mean[1] = (group - 0.5) * self.group_shift
        return mean


@dataclass(frozen=True)
class FlipRecord:
    flipped_indices: tuple[int, ...]
    target_group: int
    fraction: float


@dataclass(frozen=True)
class SplitAssignment:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def parts(self):
        return self.train, self.val, self.test


def generate_gaussian_mixture(cfg: GenConfig) -> Dataset:
    """Draw ``n_per_cell`` isotropic Gaussian samples for each (class, group) cell.

    Rows are ordered cell by cell: (0,0), (0,1), (1,0), (1,1).
    """
    cfg.validate()
    rng = make_rng(cfg.seed, 0)
    n = int(cfg.n_per_cell)
    xs, ys, gs = [], [], []
    for label in (0, 1):
        for group in (0, 1):
            noise = rng.standard_normal((n, cfg.d)) * cfg.noise_sd
            xs.append(cfg.cell_mean(label, group) + noise)
            ys.append(np.full(n, label))
            gs.append(np.full(n, group))
    labels = np.concatenate(ys)
    return Dataset(np.vstack(xs), labels, labels.copy(), np.concatenate(gs))


def flip_count(fraction: float, positives: int) -> int:
    # round half up
    return int(math.floor(fraction * positives + 0.5))


def inject_label_bias(
    ds: Dataset,
    target_group: int = 1,
    fraction: float = 0.25,
    seed: int = 0,
    eligible=None,
) -> tuple[Dataset, FlipRecord]:
    """Relabel a random ``fraction`` of the target group's positives as negative.

    ``eligible`` restricts the candidate rows (e.g. train + val indices) so
    the test split stays clean.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fraction must lie in [0, 1], got {fraction}")
    mask = (ds.labels == 1) & (ds.groups == target_group)
    if eligible is not None:
        allowed = np.zeros(ds.n, dtype=bool)
        allowed[np.asarray(eligible, dtype=np.int64)] = True
        mask &= allowed
    candidates = np.flatnonzero(mask)
    if candidates.size == 0:
        raise EmptyPopulationError(f"no positive samples in group {target_group}")
    k = flip_count(fraction, candidates.size)
    if k == 0:
        return ds, FlipRecord((), target_group, fraction)
    rng = make_rng(seed, 1)
    chosen = np.sort(rng.choice(candidates, size=k, replace=False))
    labels = ds.labels.copy()
    labels[chosen] = 0
    out = replace(ds, labels=labels, clean_labels=ds.clean_labels.copy())
    return out, FlipRecord(tuple(int(i) for i in chosen), target_group, fraction)


def _largest_remainder(total: int, fractions) -> list[int]:
    raw = [total * f for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    left = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def split_dataset(ds: Dataset, fractions=(0.7, 0.1, 0.2), seed: int = 0) -> SplitAssignment:
    """Stratified train/val/test split over (clean label, group) cells."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be 3 nonnegative values summing to 1, got {fractions}")
    rng = make_rng(seed, 2)
    nonzero_parts = sum(f > 0 for f in fractions)
    parts: list[list[int]] = [[], [], []]
    notes = []
    for label in (0, 1):
        for group in (0, 1):
            cell = np.flatnonzero((ds.clean_labels == label) & (ds.groups == group))
            if cell.size == 0:
                continue
            if cell.size < nonzero_parts:
                msg = f"cell (label={label}, group={group}) has {cell.size} samples for {nonzero_parts} splits"
                notes.append(msg)
                warnings.warn(msg, StratificationWarning, stacklevel=2)
            cell = rng.permutation(cell)
            start = 0
            for part, count in zip(parts, _largest_remainder(cell.size, fractions)):
                part.extend(cell[start : start + count].tolist())
                start += count
    train, val, test = (np.sort(np.asarray(p, dtype=np.int64)) for p in parts)
    return SplitAssignment(train, val, test, tuple(notes))


def write_csv_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{j}" for j in range(ds.d)] + ["label", "group", "clean_label"])
        for x, y, g, c in zip(ds.samples, ds.labels, ds.groups, ds.clean_labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y), int(g), int(c)])


def _parse_binary(value: str, column: str, line: int) -> int:
    try:
        num = float(value)
    except ValueError:
        raise CSVParseError(f"line {line}: {column}={value!r} is not a number") from None
    if num not in (0.0, 1.0):
        raise CSVParseError(f"line {line}: {column}={value!r} must be 0 or 1")
    return int(num)


def load_csv_dataset(path) -> Dataset:
    """Read ``f0..f{d-1},label,group[,clean_label]`` rows into a Dataset."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CSVParseError(f"{path}: empty file") from None
        for required in ("label", "group"):
            if required not in header:
                raise CSVParseError(f"line 1: missing required column {required!r}")
        feature_cols = [i for i, h in enumerate(header) if h.startswith("f") and h[1:].isdigit()]
        feature_cols.sort(key=lambda i: int(header[i][1:]))
        if not feature_cols or [int(header[i][1:]) for i in feature_cols] != list(range(len(feature_cols))):
            raise CSVParseError("line 1: feature columns must be named f0..f{d-1}")
        i_label = header.index("label")
        i_group = header.index("group")
        i_clean = header.index("clean_label") if "clean_label" in header else None
        xs, ys, gs, cs = [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CSVParseError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            try:
                x = [float(row[i]) for i in feature_cols]
            except ValueError:
                raise CSVParseError(f"line {line}: non-numeric feature value") from None
            y = _parse_binary(row[i_label], "label", line)
            g = _parse_binary(row[i_group], "group", line)
            c = _parse_binary(row[i_clean], "clean_label", line) if i_clean is not None else y
            if y != c and not (y == 0 and c == 1):
                raise CSVParseError(f"line {line}: label {y} inconsistent with clean_label {c}")
            xs.append(x)
            ys.append(y)
            gs.append(g)
            cs.append(c)
    if not xs:
        raise CSVParseError(f"{path}: no data rows")
    return Dataset(np.array(xs, dtype=float), np.array(ys), np.array(cs), np.array(gs))

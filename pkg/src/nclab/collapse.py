"""Neural-collapse diagnostics on a batch of penultimate features.

Conventions:

* the global mean is the unweighted average of class means, so for two
  classes the centred means are always antipodal and both NC2 scores are 0;
* per-group variability uses the shared class means, not group-conditional
  ones;
* NC3/NC4 use the classifier weight rows only; the bias is ignored.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .nnet import FeatureBatch, ModelState


class MissingClassError(ValueError):
    pass


class DegenerateGeometryError(ValueError):
    pass


@dataclass
class ClassStatistics:
    class_means: np.ndarray  # K x p
    class_counts: np.ndarray
    global_mean: np.ndarray
    normalized_means: np.ndarray  # rows are unit vectors, zero where degenerate
    degenerate: np.ndarray  # bool per class

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def centered_means(self) -> np.ndarray:
        return self.class_means - self.global_mean


@dataclass
class GroupClassStatistics:
    means: dict  # (class, group) -> vector
    counts: dict  # (class, group) -> int


@dataclass
class NCReport:
    nc1_global: float
    nc1_per_group: dict = field(default_factory=dict)
    nc2_equinorm: float = math.nan
    nc2_equiangular: float = math.nan
    nc3_selfdual: float = math.nan
    nc4_mismatch: float = math.nan
    config_divergence: float = math.nan

    def as_dict(self) -> dict:
        out = asdict(self)
        per_group = out.pop("nc1_per_group")
        for g in (0, 1):
            out[f"nc1_group{g}"] = per_group.get(g, math.nan)
        return out


def class_statistics(fb: FeatureBatch, num_classes: Optional[int] = None) -> ClassStatistics:
    k_total = num_classes if num_classes is not None else max(2, int(fb.labels.max()) + 1)
    p = fb.features.shape[1]
    means = np.zeros((k_total, p))
    counts = np.zeros(k_total, dtype=np.int64)
    for k in range(k_total):
        rows = fb.features[fb.labels == k]
        if rows.shape[0] == 0:
            raise MissingClassError(f"class {k} has no samples")
        means[k] = rows.mean(axis=0)
        counts[k] = rows.shape[0]
    global_mean = means.mean(axis=0)
    centered = means - global_mean
    norms = np.linalg.norm(centered, axis=1)
    degenerate = norms == 0
    normalized = np.zeros_like(centered)
    ok = ~degenerate
    normalized[ok] = centered[ok] / norms[ok, None]
    return ClassStatistics(means, counts, global_mean, normalized, degenerate)


def _check_match(fb: FeatureBatch, stats: ClassStatistics) -> None:
    if fb.features.shape[1] != stats.class_means.shape[1]:
        raise ValueError("feature width does not match class statistics")
    if fb.labels.size and (fb.labels.min() < 0 or fb.labels.max() >= stats.num_classes):
        raise ValueError("labels outside the classes covered by the statistics")


def _distances_to_own_mean(fb: FeatureBatch, stats: ClassStatistics) -> np.ndarray:
    _check_match(fb, stats)
    return np.linalg.norm(fb.features - stats.class_means[fb.labels], axis=1)


def nc1_variability(fb: FeatureBatch, stats: ClassStatistics) -> float:
    """Mean Euclidean distance of each feature to its class mean."""
    return float(_distances_to_own_mean(fb, stats).mean())


def nc1_per_group(fb: FeatureBatch, stats: ClassStatistics) -> dict[int, float]:
    if fb.groups is None:
        raise ValueError("feature batch carries no group labels")
    dist = _distances_to_own_mean(fb, stats)
    out = {}
    for g in (0, 1):
        mask = fb.groups == g
        if not mask.any():
            warnings.warn(f"group {g} absent from feature batch; omitted", stacklevel=2)
            continue
        out[g] = float(dist[mask].mean())
    return out


def weighted_group_nc1(per_group: dict[int, float], fb: FeatureBatch) -> float:
    """Recombine per-group values with weights n_a / n."""
    n = len(fb.labels)
    return float(sum(np.sum(fb.groups == g) / n * s for g, s in per_group.items()))


def _require_nondegenerate(stats: ClassStatistics) -> None:
    if stats.degenerate.any():
        bad = np.flatnonzero(stats.degenerate).tolist()
        raise DegenerateGeometryError(f"centered class means vanish for classes {bad}")


def nc2_equinorm(stats: ClassStatistics) -> float:
    """Coefficient of variation of the centred class-mean norms."""
    norms = np.linalg.norm(stats.centered_means, axis=1)
    mean = norms.mean()
    if mean == 0:
        raise DegenerateGeometryError("all centered class means are zero")
    return float(norms.std() / mean)


def nc2_equiangularity(stats: ClassStatistics) -> float:
    """Mean over class pairs of |cos(mu_k, mu_k') + 1/(K-1)|."""
    _require_nondegenerate(stats)
    k_total = stats.num_classes
    gram = stats.normalized_means @ stats.normalized_means.T
    iu = np.triu_indices(k_total, k=1)
    return float(np.mean(np.abs(gram[iu] + 1.0 / (k_total - 1))))


def nc3_self_duality(stats: ClassStatistics, model_or_weights) -> float:
    """Frobenius distance between the normalised centred means and normalised W."""
    w = _weights(model_or_weights)
    m = stats.centered_means
    if w.shape != m.shape:
        raise ValueError(f"classifier weights {w.shape} do not match class means {m.shape}")
    wn = np.linalg.norm(w)
    mn = np.linalg.norm(m)
    if wn == 0 or mn == 0:
        raise DegenerateGeometryError("zero-norm classifier weights or class means")
    return float(np.linalg.norm(m / mn - w / wn))


def nc4_mismatch(fb: FeatureBatch, stats: ClassStatistics, model_or_weights) -> float:
    """Share of samples where the linear head and nearest-class-mean rule disagree."""
    _check_match(fb, stats)
    w = _weights(model_or_weights)
    linear = np.argmax(fb.features @ w.T, axis=1)
    dists = np.linalg.norm(fb.features[:, None, :] - stats.class_means[None, :, :], axis=2)
    nearest = np.argmin(dists, axis=1)
    return float(np.mean(linear != nearest))


def group_class_statistics(fb: FeatureBatch) -> GroupClassStatistics:
    if fb.groups is None:
        raise ValueError("feature batch carries no group labels")
    means, counts = {}, {}
    for k in np.unique(fb.labels).tolist():
        for g in (0, 1):
            mask = (fb.labels == k) & (fb.groups == g)
            if not mask.any():
                warnings.warn(f"cell (class={k}, group={g}) is empty; omitted", stacklevel=2)
                continue
            means[(k, g)] = fb.features[mask].mean(axis=0)
            counts[(k, g)] = int(mask.sum())
    return GroupClassStatistics(means, counts)


def nc_configuration_distance(gstats: GroupClassStatistics) -> float:
    """Mean over classes of the distance between the two groups' class means."""
    classes = sorted({k for k, _ in gstats.means})
    dists = []
    for k in classes:
        if (k, 0) in gstats.means and (k, 1) in gstats.means:
            dists.append(float(np.linalg.norm(gstats.means[(k, 0)] - gstats.means[(k, 1)])))
        else:
            warnings.warn(f"class {k} lacks one group; excluded from configuration distance", stacklevel=2)
    if not dists:
        return math.nan
    return float(np.mean(dists))


def _weights(model_or_weights) -> np.ndarray:
    if isinstance(model_or_weights, ModelState):
        return model_or_weights.classifier_weights
    return np.asarray(model_or_weights, dtype=float)


def _guarded(fn, *args) -> float:
    try:
        return fn(*args)
    except DegenerateGeometryError:
        return math.nan


def nc_report(fb: FeatureBatch, model_or_weights=None, num_classes: Optional[int] = None) -> NCReport:
    """Every collapse metric at once; degenerate geometry yields NaN entries."""
    stats = class_statistics(fb, num_classes)
    report = NCReport(nc1_global=nc1_variability(fb, stats))
    report.nc2_equinorm = _guarded(nc2_equinorm, stats)
    report.nc2_equiangular = _guarded(nc2_equiangularity, stats)
    if model_or_weights is not None:
        report.nc3_selfdual = _guarded(nc3_self_duality, stats, model_or_weights)
        report.nc4_mismatch = nc4_mismatch(fb, stats, model_or_weights)
    if fb.groups is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report.nc1_per_group = nc1_per_group(fb, stats)
            report.config_divergence = nc_configuration_distance(group_class_statistics(fb))
    return report

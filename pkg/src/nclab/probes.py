"""Subgroup-separability probes (SPLIT).

A logistic-regression probe reads the group attribute off penultimate
features; a reference probe of the disease model's own architecture reads it
off the raw inputs. Both report held-out ROC-AUC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional

import numpy as np

from . import nnet
from .datagen import Dataset, SplitAssignment
from .stats import roc_auc


class DegenerateTargetError(ValueError):
    pass


@dataclass
class ProbeModel:
    weight: np.ndarray
    bias: float

    def scores(self, inputs) -> np.ndarray:
        return np.asarray(inputs, dtype=float) @ self.weight + self.bias


@dataclass(frozen=True)
class ProbeHyper:
    max_iter: int = 5000
    grad_tol: float = 1e-6


@dataclass(frozen=True)
class SplitResult:
    feature_auc: float
    raw_auc: float
    stage: str  # "early" | "final"
    arm: str  # "clean" | "biased"


def _log1pexp(z):
    return np.logaddexp(0.0, z)


def probe_loss_and_gradient(weight, bias, inputs, targets):
    """Mean logistic loss and its gradient w.r.t. (weight, bias)."""
    x = np.asarray(inputs, dtype=float)
    t = np.asarray(targets, dtype=float)
    z = x @ weight + bias
    loss = float(np.mean(_log1pexp(z) - t * z))
    r = (1.0 / (1.0 + np.exp(-z)) - t) / len(t)
    return loss, x.T @ r, float(r.sum())


def train_linear_probe(inputs, targets, hyper: ProbeHyper = ProbeHyper(), seed: int = 0) -> ProbeModel:
    """Unregularised logistic regression by full-batch gradient descent.

    Columns are standardised internally (an affine reparametrisation that
    leaves the optimum's scores unchanged) and the step is 1/L for the
    standardised problem. The result is mapped back to raw input units.
    Zero initialisation makes the fit independent of ``seed``.
    """
    x = np.asarray(inputs, dtype=float)
    t = np.asarray(targets).astype(int)
    if x.ndim != 2 or len(t) != x.shape[0]:
        raise ValueError("inputs must be m x q with m targets")
    if np.unique(t).size < 2:
        raise DegenerateTargetError("probe targets take a single value")
    centre = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    z = (x - centre) / scale
    design = np.hstack([z, np.ones((len(z), 1))])
    top = np.linalg.norm(design, ord=2) ** 2 / len(z)
    step = 4.0 / top
    theta = np.zeros(design.shape[1])
    for _ in range(hyper.max_iter):
        _, gw, gb = probe_loss_and_gradient(theta[:-1], theta[-1], z, t)
        grad = np.append(gw, gb)
        if np.linalg.norm(grad) < hyper.grad_tol:
            break
        theta -= step * grad
    weight = theta[:-1] / scale
    bias = float(theta[-1] - weight @ centre)
    return ProbeModel(weight, bias)


def _require_disjoint(train_idx, eval_idx) -> None:
    if np.intersect1d(train_idx, eval_idx).size:
        raise ValueError("probe training and evaluation indices overlap")


def split_test(model: nnet.ModelState, ds: Dataset, splits: SplitAssignment, seed: int = 0,
               hyper: ProbeHyper = ProbeHyper()) -> float:
    """Fit a linear group probe on train-split features, return its test-split AUC."""
    _require_disjoint(splits.train, splits.test)
    train_feats, _ = nnet.forward(model, ds.samples[splits.train])
    test_feats, _ = nnet.forward(model, ds.samples[splits.test])
    probe = train_linear_probe(train_feats, ds.groups[splits.train], hyper, seed)
    test_groups = ds.groups[splits.test]
    if np.unique(test_groups).size < 2:
        raise DegenerateTargetError("test split lacks one of the groups")
    return roc_auc(probe.scores(test_feats), test_groups)


def raw_data_probe(
    ds: Dataset,
    splits: SplitAssignment,
    arch: Optional[nnet.Architecture] = None,
    hyper: Optional[nnet.TrainHyper] = None,
    seed: int = 0,
    linear: bool = False,
) -> float:
    """Group-prediction AUC straight from the inputs.

    By default a fresh network of the disease model's architecture is trained
    on group labels (early-stopped on the validation split); ``linear=True``
    swaps in the logistic probe.
    """
    _require_disjoint(splits.train, splits.test)
    x_tr, g_tr = ds.samples[splits.train], ds.groups[splits.train]
    x_te, g_te = ds.samples[splits.test], ds.groups[splits.test]
    if np.unique(g_tr).size < 2 or np.unique(g_te).size < 2:
        raise DegenerateTargetError("a split lacks one of the groups")
    if linear:
        probe = train_linear_probe(x_tr, g_tr, seed=seed)
        return roc_auc(probe.scores(x_te), g_te)
    arch = arch or nnet.Architecture(ds.d)
    if arch.input_dim != ds.d or arch.num_classes != 2:
        arch = nnet.Architecture(ds.d, arch.hidden_widths, 2)
    hyper = hyper or nnet.TrainHyper(seed=seed)
    val_idx = splits.val if len(splits.val) else splits.train
    model = nnet.init_model(arch, seed)
    result = nnet.train(model, x_tr, g_tr, ds.samples[val_idx], ds.groups[val_idx], hyper)
    _, scores = nnet.predict(result.early_stopped, x_te)
    return roc_auc(scores, g_te)


def bayes_group_auc(group_shift: float, noise_sd: float) -> float:
    """AUC of the optimal group score for the default generator."""
    return 0.5 * math.erfc(-group_shift / (2.0 * noise_sd))


def group_shift_for_auc(target_auc: float, noise_sd: float = 1.0) -> float:
    """Inverse of :func:`bayes_group_auc`."""
    return math.sqrt(2.0) * noise_sd * NormalDist().inv_cdf(target_auc)

"""Pass/fail checks of the qualitative reproduction targets on suite records."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .experiment import ComparisonReport, ExperimentRecord, compare_arms


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _by_arm(records):
    out = {"clean": {}, "biased": {}}
    for rec in records:
        if rec.error is None:
            out[rec.arm][rec.seed] = rec
    return out


def nc1_ratio(rec: ExperimentRecord) -> float:
    return rec.epochs[-1]["nc1"] / rec.epochs[0]["nc1"]


def clean_collapse(records, fraction=0.05, min_seeds=9, equiangular_tol=0.05, nc4_tol=0.01) -> Verdict:
    clean = list(_by_arm(records)["clean"].values())
    ratios = [nc1_ratio(r) for r in clean]
    hits = sum(r < fraction for r in ratios)
    eq = max(r.epochs[-1]["nc2_equiangular"] for r in clean)
    nc4 = max(r.epochs[-1]["nc4_mismatch"] for r in clean)
    ok = hits >= min_seeds and eq < equiangular_tol and nc4 < nc4_tol
    return Verdict("clean-arm collapse", ok,
                   f"NC1(last)/NC1(1) < {fraction} in {hits}/{len(clean)} seeds "
                   f"(median {np.median(ratios):.4f}); max NC2-angle {eq:.2e}; max NC4 {nc4:.4f}")


def biased_two_phase(records, fraction=0.05, min_early=8, min_final=9) -> Verdict:
    arms = _by_arm(records)
    seeds = sorted(set(arms["clean"]) & set(arms["biased"]))
    early_hits = 0
    for s in seeds:
        b = arms["biased"][s]
        epoch = b.early_stop_epoch
        if b.epoch_row(epoch)["nc1"] > arms["clean"][s].epoch_row(epoch)["nc1"]:
            early_hits += 1
    ratios = [nc1_ratio(arms["biased"][s]) for s in seeds]
    final_hits = sum(r < fraction for r in ratios)
    ok = early_hits >= min_early and final_hits >= min_final
    return Verdict("biased-arm two-phase dynamics", ok,
                   f"early-stop NC1 biased > clean in {early_hits}/{len(seeds)}; "
                   f"NC1(last)/NC1(1) < {fraction} in {final_hits}/{len(seeds)} (median {np.median(ratios):.4f})")


def test_degradation(records, report: ComparisonReport = None, min_seeds=8, p_critical=0.05) -> Verdict:
    report = report or compare_arms(records)
    arms = _by_arm(records)
    seeds = sorted(set(arms["clean"]) & set(arms["biased"]))
    both = 0
    for s in seeds:
        c = arms["clean"][s].checkpoints["final"].test_report.nc1_per_group
        b = arms["biased"][s].checkpoints["final"].test_report.nc1_per_group
        if all(b[g] - c[g] > 0 for g in (0, 1)):
            both += 1
    row = report.row("final", 1)
    ok = both >= min_seeds and row.delta_f1_mean < 0 and row.p_value < p_critical
    return Verdict("final-stage test degradation", ok,
                   f"test dNC1 > 0 for both groups in {both}/{len(seeds)}; group-1 dF1 {row.delta_f1_mean:+.4f} "
                   f"(p = {row.p_value:.4g}, {row.method})")


def early_parity(records, report: ComparisonReport = None, p_critical=0.05) -> Verdict:
    report = report or compare_arms(records)
    rows = [report.row("early", g) for g in (0, 1)]
    ok = all(r.p_value >= p_critical for r in rows)
    return Verdict("early-stage F1 parity", ok,
                   "; ".join(f"group {r.group} dF1 {r.delta_f1_mean:+.4f} p = {r.p_value:.4g}" for r in rows))


def weighted_identity(records, tol=1e-12) -> Verdict:
    worst = 0.0
    rows = 0
    for rec in records:
        for row in rec.epochs:
            worst = max(worst, row["nc1_weighted_residual"])
            rows += 1
    return Verdict("per-group NC1 weighted identity", rows > 0 and worst <= tol,
                   f"max |sum_a (n_a/n) S_a - S| = {worst:.2e} over {rows} epoch rows")


def split_association(points, tol=0.1) -> Verdict:
    """``points``: list of (raw_auc, feature_auc) per configuration."""
    from .stats import kendall_tau

    gaps = [abs(f - r) for r, f in points]
    tau = kendall_tau([p[0] for p in points], [p[1] for p in points])
    ok = all(g <= tol for g in gaps) and not math.isnan(tau) and tau > 0
    pairs = ", ".join(f"({r:.3f}, {f:.3f})" for r, f in points)
    return Verdict("SPLIT early-stage association", ok,
                   f"(raw, feature) AUC = {pairs}; max gap {max(gaps):.3f}; Kendall tau {tau:.3f}")


def suite_verdicts(records) -> list[Verdict]:
    report = compare_arms(records)
    return [
        clean_collapse(records),
        biased_two_phase(records),
        test_degradation(records, report),
        early_parity(records, report),
        weighted_identity(records),
    ]

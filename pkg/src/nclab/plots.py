"""Deterministic hand-written SVG charts for suite outputs.

Three kinds are supported: ``nc1-per-epoch`` (mean train NC1 per arm with a
one-standard-deviation band across seeds), ``split-scatter`` (feature vs raw
group AUC with error bars and the y = x line) and ``delta-bars`` (per-group
biased-minus-clean NC1 and F1 with significance markers). Output contains no
timestamps and every number is printed with a fixed format, so identical
inputs give identical bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .experiment import read_csv_rows

KINDS = ("nc1-per-epoch", "split-scatter", "delta-bars")
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=55)
ARM_STYLE = {
    "biased": dict(color="#ff7f0e", dash=None, label="biased"),
    "clean": dict(color="#1f77b4", dash="6,4", label="clean"),
}


class PlotError(ValueError):
    pass


@dataclass(frozen=True)
class PlotSpec:
    kind: str
    input_path: str
    output_path: str
    title: str = ""
    x_label: Optional[str] = None
    y_label: Optional[str] = None
    group_by: str = "arm"
    stage: str = "early"  # split-scatter only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotError(f"unknown plot kind {self.kind!r}; choose from {', '.join(KINDS)}")


def _num(x: float) -> str:
    out = f"{x:.2f}"
    return "0.00" if out == "-0.00" else out


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round tick positions covering [lo, hi] with a 1/2/5 x 10^k step."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise PlotError("non-finite axis range")
    if hi <= lo:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / max(target, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    first = math.floor(lo / step + 1e-9)
    last = math.ceil(hi / step - 1e-9)
    return [round(i * step, 12) for i in range(first, last + 1)]


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.4g}"


class _Canvas:
    def __init__(self, x_range, y_range, title, x_label, y_label):
        self.xt = nice_ticks(*x_range)
        self.yt = nice_ticks(*y_range)
        self.x0, self.x1 = self.xt[0], self.xt[-1]
        self.y0, self.y1 = self.yt[0], self.yt[-1]
        self.pl, self.pr = MARGIN["left"], WIDTH - MARGIN["right"]
        self.pt, self.pb = MARGIN["top"], HEIGHT - MARGIN["bottom"]
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        ]
        self._axes(title, x_label, y_label)

    def sx(self, x):
        return self.pl + (x - self.x0) / (self.x1 - self.x0) * (self.pr - self.pl)

    def sy(self, y):
        return self.pb - (y - self.y0) / (self.y1 - self.y0) * (self.pb - self.pt)

    def _axes(self, title, x_label, y_label):
        p = self.parts
        for t in self.yt:
            y = _num(self.sy(t))
            p.append(f'<line x1="{self.pl}" y1="{y}" x2="{self.pr}" y2="{y}" stroke="#e0e0e0"/>')
            p.append(f'<text x="{self.pl - 6}" y="{y}" text-anchor="end" dominant-baseline="middle">'
                     f'{_tick_label(t)}</text>')
        for t in self.xt:
            x = _num(self.sx(t))
            p.append(f'<line x1="{x}" y1="{self.pb}" x2="{x}" y2="{self.pb + 5}" stroke="#000000"/>')
            p.append(f'<text x="{x}" y="{self.pb + 18}" text-anchor="middle">{_tick_label(t)}</text>')
        p.append(f'<rect x="{self.pl}" y="{self.pt}" width="{self.pr - self.pl}" height="{self.pb - self.pt}" '
                 f'fill="none" stroke="#000000"/>')
        mid_x = (self.pl + self.pr) // 2
        mid_y = (self.pt + self.pb) // 2
        p.append(f'<text x="{mid_x}" y="{HEIGHT - 12}" text-anchor="middle">{_esc(x_label)}</text>')
        p.append(f'<text x="18" y="{mid_y}" text-anchor="middle" transform="rotate(-90 18 {mid_y})">'
                 f'{_esc(y_label)}</text>')
        if title:
            p.append(f'<text x="{mid_x}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>')

    def polyline(self, xs, ys, color, dash=None, width=2):
        pts = " ".join(f"{_num(self.sx(x))},{_num(self.sy(y))}" for x, y in zip(xs, ys))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>')

    def band(self, xs, lo, hi, color):
        upper = [f"{_num(self.sx(x))},{_num(self.sy(y))}" for x, y in zip(xs, hi)]
        lower = [f"{_num(self.sx(x))},{_num(self.sy(y))}" for x, y in zip(reversed(xs), reversed(lo))]
        self.parts.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" '
                          f'stroke="none"/>')

    def legend(self, entries):
        x = self.pr + 15
        for i, (label, color, dash, marker) in enumerate(entries):
            y = self.pt + 10 + 20 * i
            if marker:
                self.parts.append(f'<rect x="{x}" y="{y - 6}" width="20" height="12" fill="{color}"/>')
            else:
                extra = f' stroke-dasharray="{dash}"' if dash else ""
                self.parts.append(f'<line x1="{x}" y1="{y}" x2="{x + 20}" y2="{y}" stroke="{color}" '
                                  f'stroke-width="2"{extra}/>')
            self.parts.append(f'<text x="{x + 26}" y="{y}" dominant-baseline="middle">{_esc(label)}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def nc1_per_epoch_svg(rows: list[dict], title: str = "", x_label=None, y_label=None, metric: str = "nc1") -> str:
    """Mean per-epoch ``metric`` for each arm, with a +-1 std band when there are several seeds."""
    if not rows:
        raise PlotError("no epoch rows to plot")
    series = {}
    for arm in ("biased", "clean"):
        by_seed: dict[int, dict[int, float]] = {}
        for r in rows:
            if r["arm"] == arm:
                by_seed.setdefault(r["seed"], {})[r["epoch"]] = r[metric]
        if not by_seed:
            continue
        epochs = sorted(set().union(*by_seed.values()))
        mat = np.array([[s.get(e, np.nan) for e in epochs] for _, s in sorted(by_seed.items())])
        mean = np.nanmean(mat, axis=0)
        std = np.nanstd(mat, axis=0) if len(by_seed) > 1 else None
        series[arm] = (epochs, mean, std)
    if not series:
        raise PlotError("no rows for the clean or biased arm")
    lo = min(float(np.nanmin(m - (s if s is not None else 0))) for _, m, s in series.values())
    hi = max(float(np.nanmax(m + (s if s is not None else 0))) for _, m, s in series.values())
    all_epochs = [e for ep, _, _ in series.values() for e in ep]
    canvas = _Canvas((min(all_epochs), max(all_epochs)), (min(lo, 0.0), hi), title,
                     x_label or "epoch", y_label or "train NC1")
    entries = []
    for arm, (epochs, mean, std) in series.items():
        style = ARM_STYLE[arm]
        if std is not None:
            canvas.band(epochs, mean - std, mean + std, style["color"])
        canvas.polyline(epochs, mean, style["color"], style["dash"])
        entries.append((style["label"], style["color"], style["dash"], False))
    canvas.legend(entries)
    return canvas.render()


def split_scatter_svg(rows: list[dict], title: str = "", x_label=None, y_label=None, stage: str = "early") -> str:
    """Feature AUC against raw-data AUC per arm: mean over seeds with +-1 std error bars."""
    rows = [r for r in rows if r.get("stage", stage) == stage
            and math.isfinite(r["feature_auc"]) and math.isfinite(r["raw_auc"])]
    if not rows:
        raise PlotError("no checkpoint rows with finite AUCs to plot")
    canvas = _Canvas((0.4, 1.0), (0.4, 1.0), title, x_label or "raw-data group AUC",
                     y_label or "feature group AUC")
    canvas.polyline([canvas.x0, canvas.x1], [canvas.x0, canvas.x1], "#888888", "3,3", 1)
    entries = []
    for arm in ("biased", "clean"):
        pts = [(r["raw_auc"], r["feature_auc"]) for r in rows if r["arm"] == arm]
        if not pts:
            continue
        style = ARM_STYLE[arm]
        arr = np.array(pts)
        mx, my = arr.mean(axis=0)
        sx, sy = arr.std(axis=0)
        c = style["color"]
        cx, cy = _num(canvas.sx(mx)), _num(canvas.sy(my))
        canvas.parts.append(f'<line x1="{_num(canvas.sx(mx - sx))}" y1="{cy}" x2="{_num(canvas.sx(mx + sx))}" '
                            f'y2="{cy}" stroke="{c}"/>')
        canvas.parts.append(f'<line x1="{cx}" y1="{_num(canvas.sy(my - sy))}" x2="{cx}" '
                            f'y2="{_num(canvas.sy(my + sy))}" stroke="{c}"/>')
        for x, y in pts:
            canvas.parts.append(f'<circle cx="{_num(canvas.sx(x))}" cy="{_num(canvas.sy(y))}" r="2.5" '
                                f'fill="{c}" fill-opacity="0.5"/>')
        canvas.parts.append(f'<circle cx="{cx}" cy="{cy}" r="5" fill="{c}" stroke="#000000"/>')
        entries.append((style["label"], c, None, True))
    entries.append(("y = x", "#888888", "3,3", False))
    canvas.legend(entries)
    return canvas.render()


def delta_bars_svg(rows: list[dict], title: str = "", x_label=None, y_label=None) -> str:
    """Biased-minus-clean NC1 and F1 per (stage, group); '*' marks p < 0.05."""
    if not rows:
        raise PlotError("no comparison rows to plot")
    bars = []
    for r in rows:
        label = f"{r['stage']} g{r['group']}"
        bars.append((label, "dNC1", r["delta_nc1_mean"], r["delta_nc1_std"], False))
        bars.append((label, "dF1", r["delta_f1_mean"], r["delta_f1_std"], bool(r["significant"])))
    vals = [v for _, _, m, s, _ in bars for v in (m - s, m + s) if math.isfinite(v)] or [0.0]
    canvas = _Canvas((0.0, 1.0), (min(min(vals), 0.0), max(max(vals), 0.0)), title,
                     x_label or "stage / group", y_label or "biased - clean")
    colors = {"dNC1": "#9467bd", "dF1": "#2ca02c"}
    n_groups = len(rows)
    slot = (canvas.pr - canvas.pl) / n_groups
    bar_w = slot * 0.35
    zero = canvas.sy(0.0)
    canvas.parts.append(f'<line x1="{canvas.pl}" y1="{_num(zero)}" x2="{canvas.pr}" y2="{_num(zero)}" '
                        f'stroke="#000000"/>')
    for i, (label, metric, mean, std, star) in enumerate(bars):
        slot_i, which = divmod(i, 2)
        x = canvas.pl + slot_i * slot + slot * 0.12 + which * bar_w * 1.1
        if which == 0:
            canvas.parts.append(f'<text x="{_num(canvas.pl + (slot_i + 0.5) * slot)}" y="{canvas.pb + 34}" '
                                f'text-anchor="middle">{_esc(label)}</text>')
        if not math.isfinite(mean):
            continue
        top = canvas.sy(max(mean, 0.0))
        h = abs(canvas.sy(mean) - zero)
        canvas.parts.append(f'<rect x="{_num(x)}" y="{_num(top)}" width="{_num(bar_w)}" height="{_num(h)}" '
                            f'fill="{colors[metric]}"/>')
        cx = _num(x + bar_w / 2)
        if math.isfinite(std) and std > 0:
            canvas.parts.append(f'<line x1="{cx}" y1="{_num(canvas.sy(mean - std))}" x2="{cx}" '
                                f'y2="{_num(canvas.sy(mean + std))}" stroke="#000000"/>')
        if star:
            tip = canvas.sy(mean + (std if math.isfinite(std) else 0.0) * (1 if mean >= 0 else -1))
            y = tip - 6 if mean >= 0 else tip + 14
            canvas.parts.append(f'<text x="{cx}" y="{_num(y)}" text-anchor="middle" font-size="16">*</text>')
    canvas.legend([("dNC1 (test)", colors["dNC1"], None, True), ("dF1 (test)", colors["dF1"], None, True),
                   ("* p < 0.05", "#ffffff", None, True)])
    return canvas.render()


def render(spec: PlotSpec) -> str:
    rows = read_csv_rows(spec.input_path)
    if spec.kind == "nc1-per-epoch":
        return nc1_per_epoch_svg(rows, spec.title, spec.x_label, spec.y_label)
    if spec.kind == "split-scatter":
        return split_scatter_svg(rows, spec.title, spec.x_label, spec.y_label, spec.stage)
    return delta_bars_svg(rows, spec.title, spec.x_label, spec.y_label)


def write_plot(spec: PlotSpec) -> Path:
    svg = render(spec)
    out = Path(spec.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    return out

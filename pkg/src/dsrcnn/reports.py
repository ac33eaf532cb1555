"""CSV, JSON and SVG emitters for loss histories and metric reports."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from .metrics import MetricsReport
from .training import LossBreakdown

LOSS_HEADER = ["iteration", "side1", "side2", "side3", "side4", "side5", "fuse", "total"]
METRIC_HEADER = ["name", "mean_f", "adaptive_precision", "adaptive_recall", "adaptive_f",
                 "adaptive_threshold", "mae", "weighted_f"]


def _fmt(x) -> str:
    # repr round-trips doubles exactly
    return "" if x is None else repr(float(x))


def write_loss_csv(path, history: Sequence[LossBreakdown]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_HEADER)
        for i, b in enumerate(history):
            w.writerow([i, *(_fmt(v) for v in b.as_row())])


def read_loss_csv(path) -> list[LossBreakdown]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        LossBreakdown([float(r[f"side{m}"]) for m in range(1, 6)], float(r["fuse"]), float(r["total"]))
        for r in rows
    ]


def write_metrics_csv(path, report: MetricsReport) -> None:
    """One row per image, then a ``__mean__`` summary row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_HEADER)
        for im in report.images:
            w.writerow([im.name, _fmt(im.mean_f), _fmt(im.adaptive_precision), _fmt(im.adaptive_recall),
                        _fmt(im.adaptive_f), _fmt(im.adaptive_threshold), _fmt(im.mae),
                        _fmt(im.weighted_f)])
        w.writerow(["__mean__", _fmt(report.mean_f), _fmt(report.adaptive_precision),
                    _fmt(report.adaptive_recall), _fmt(report.adaptive_f), "", _fmt(report.mae),
                    _fmt(report.weighted_f)])


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "beta_sq": report.beta_sq,
        "summary": {
            "images": len(report.images),
            "mean_f": report.mean_f,
            "adaptive_precision": report.adaptive_precision,
            "adaptive_recall": report.adaptive_recall,
            "adaptive_f": report.adaptive_f,
            "mae": report.mae,
            "weighted_f": report.weighted_f,
        },
        "images": [
            {
                "name": im.name,
                "mean_f": im.mean_f,
                "adaptive_precision": im.adaptive_precision,
                "adaptive_recall": im.adaptive_recall,
                "adaptive_f": im.adaptive_f,
                "adaptive_threshold": im.adaptive_threshold,
                "mae": im.mae,
                "weighted_f": im.weighted_f,
            }
            for im in report.images
        ],
        "weighted_f_skipped": report.wf_skipped,
        "rejected": [{"name": n, "reason": r} for n, r in report.rejected],
        "pr_curve": {
            "threshold": report.thresholds.tolist(),
            "precision": report.precision.tolist(),
            "recall": report.recall.tolist(),
        },
    }


def write_metrics_json(path, report: MetricsReport) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n")


def write_pr_csv(path, report: MetricsReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in zip(report.thresholds, report.precision, report.recall):
            w.writerow([_fmt(t), _fmt(p), _fmt(r)])


def pr_curve_svg(report: MetricsReport, width: int = 480, height: int = 400, title: str = "Precision-recall") -> str:
    """A self-contained SVG plot of precision against recall."""
    left, right, top, bottom = 60, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def x(r):
        return left + r * pw

    def y(p):
        return top + (1 - p) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(11):
        v = k / 10
        parts.append(f'<line x1="{x(v):.2f}" y1="{top + ph}" x2="{x(v):.2f}" y2="{top + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{x(v):.2f}" y="{top + ph + 18}" text-anchor="middle">{v:.1f}</text>')
        parts.append(f'<line x1="{left - 5}" y1="{y(v):.2f}" x2="{left}" y2="{y(v):.2f}" stroke="black"/>')
        parts.append(f'<text x="{left - 8}" y="{y(v) + 4:.2f}" text-anchor="end">{v:.1f}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">Recall</text>')
    parts.append(f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 15 {top + ph / 2:.1f})">Precision</text>')
    points = " ".join(f"{x(r):.2f},{y(p):.2f}" for p, r in zip(report.precision, report.recall))
    parts.append(f'<polyline points="{points}" fill="none" stroke="#c0392b" stroke-width="2"/>')
    parts.append(f'<text x="{left + pw - 5}" y="{top + 16}" text-anchor="end">'
                 f'mean F = {report.mean_f:.4f}, MAE = {report.mae:.4f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_pr_svg(path, report: MetricsReport) -> None:
    Path(path).write_text(pr_curve_svg(report))

"""Confusion-matrix metrics, report tables, scale ablation and PCA overlays."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from decimal import ROUND_DOWN, Decimal
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import PreconditionError

log = logging.getLogger(__name__)

PCA_AXIS_RANGE = (-40.0, 40.0)
SCALE_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)
SCALE_FRACTIONS_EXTENDED = SCALE_FRACTIONS + (2.0,)


# ---------------------------------------------------------------- metrics

def confusion(preds: Sequence[int], truths: Sequence[int], n_classes: int,
              weights: Sequence[float] | None = None) -> np.ndarray:
    """``cm[t, p]`` counts (or sums ``weights`` of) pairs with truth t, prediction p."""
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape:
        raise PreconditionError("predictions and truths differ in length")
    for name, arr in (("prediction", preds), ("truth", truths)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise PreconditionError(f"{name} label outside [0, {n_classes})")
    flat = truths * n_classes + preds
    if weights is None:
        counts = np.bincount(flat, minlength=n_classes * n_classes)
    else:
        counts = np.bincount(flat, weights=np.asarray(weights, dtype=float),
                             minlength=n_classes * n_classes)
    return counts.reshape(n_classes, n_classes)


def per_class_accuracy(cm: np.ndarray, row_totals: np.ndarray | None = None) -> np.ndarray:
    """Recall per class; NaN where the class has no test samples."""
    cm = np.asarray(cm, dtype=float)
    totals = cm.sum(axis=1) if row_totals is None else np.asarray(row_totals, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, np.diag(cm) / totals, np.nan)


def per_class_iou(cm: np.ndarray, row_totals: np.ndarray | None = None,
                  exclude_absent: bool = False) -> np.ndarray:
    """TP / (TP + FP + FN) per class; NaN where the denominator is zero.

    With ``exclude_absent`` classes that have no test samples are NaN too,
    even if something was predicted as them.
    """
    cm = np.asarray(cm, dtype=float)
    tp = np.diag(cm)
    totals = cm.sum(axis=1) if row_totals is None else np.asarray(row_totals, dtype=float)
    fn = totals - tp
    fp = cm.sum(axis=0) - tp
    denom = tp + fp + fn
    keep = denom > 0
    if exclude_absent:
        keep &= totals > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(keep, tp / denom, np.nan)


def mean_accuracy(cm: np.ndarray, row_totals: np.ndarray | None = None) -> float:
    acc = per_class_accuracy(cm, row_totals)
    if np.all(np.isnan(acc)):
        raise PreconditionError("confusion matrix has no non-empty rows")
    return float(np.nanmean(acc))


def mean_iou(cm: np.ndarray, row_totals: np.ndarray | None = None,
             exclude_absent: bool = False) -> float:
    iou = per_class_iou(cm, row_totals, exclude_absent)
    if np.all(np.isnan(iou)):
        raise PreconditionError("every class has a zero IoU denominator")
    return float(np.nanmean(iou))


# ---------------------------------------------------------------- formatting

def truncate(value: float, decimals: int = 2) -> str:
    """Decimal truncation toward zero of the shortest repr: 0.896 -> '0.89'."""
    q = Decimal(1).scaleb(-decimals)
    return str(Decimal(repr(float(value))).quantize(q, rounding=ROUND_DOWN))


def format_miou_macc(miou: float, macc: float, decimals: int = 2) -> str:
    return f"{truncate(miou, decimals)}|{truncate(macc, decimals)}"


def _fmt(v, decimals):
    return "-" if v is None or (isinstance(v, float) and np.isnan(v)) else truncate(v, decimals)


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for j, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append(" | ".join(cells).rstrip())
        if j == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def per_class_table(cm: np.ndarray, class_names: Sequence[str], truncate_decimals: int = 2,
                    header: str = "accuracy") -> str:
    """Plain-text per-class accuracy column plus an ``Average`` row."""
    cm = np.asarray(cm)
    if len(class_names) != cm.shape[0]:
        raise PreconditionError("need one name per confusion-matrix row")
    acc = per_class_accuracy(cm)
    rows = [["Class", header]]
    rows += [[n, _fmt(a, truncate_decimals)] for n, a in zip(class_names, acc)]
    rows.append(["Average", _fmt(mean_accuracy(cm), truncate_decimals)])
    return _align(rows)


# ---------------------------------------------------------------- reports

@dataclasses.dataclass
class EvalReport:
    method: str
    dataset: str
    class_set: str
    classes: list[str]
    confusion: np.ndarray
    per_class_accuracy: list[float | None]
    macc: float
    miou: float | None = None
    per_class_iou: list[float | None] | None = None
    n_evaluated: int = 0
    n_unevaluated: int = 0
    n_abstained: int = 0
    notes: list[str] = dataclasses.field(default_factory=list)

    @classmethod
    def from_predictions(cls, preds: Sequence, truths: Sequence[int], classes: Sequence[str],
                         method: str, dataset: str = "", class_set: str = "",
                         accuracy_only: bool = False, weights: Sequence[float] | None = None,
                         n_unevaluated: int = 0, notes: Sequence[str] = ()) -> "EvalReport":
        """Build a report from integer predictions.

        ``None`` predictions (no class named) count as wrong but are kept
        out of the confusion matrix.
        """
        k = len(classes)
        truths = np.asarray(truths, dtype=np.int64)
        answered = np.array([p is not None for p in preds], dtype=bool)
        w = None if weights is None else np.asarray(weights, dtype=float)
        p_ans = np.array([p for p in preds if p is not None], dtype=np.int64)
        cm = confusion(p_ans, truths[answered], k, None if w is None else w[answered])
        if w is None:
            totals = np.bincount(truths, minlength=k).astype(float)
        else:
            totals = np.bincount(truths, weights=w, minlength=k)
        acc = per_class_accuracy(cm, totals)
        if np.all(np.isnan(acc)):
            raise PreconditionError("no evaluated samples")
        report = cls(
            method=method, dataset=dataset, class_set=class_set, classes=list(classes),
            confusion=cm, per_class_accuracy=[None if np.isnan(a) else float(a) for a in acc],
            macc=float(np.nanmean(acc)), n_evaluated=int(len(truths)),
            n_unevaluated=int(n_unevaluated), n_abstained=int((~answered).sum()),
            notes=list(notes),
        )
        if not accuracy_only:
            iou = per_class_iou(cm, totals, exclude_absent=True)
            report.miou = float(np.nanmean(iou))
            report.per_class_iou = [None if np.isnan(v) else float(v) for v in iou]
        return report

    def pair(self, decimals: int = 2) -> str:
        """``mIoU|mAcc`` (or just mAcc for accuracy-only protocols)."""
        if self.miou is None:
            return truncate(self.macc, decimals)
        return format_miou_macc(self.miou, self.macc, decimals)

    def table(self, decimals: int = 2) -> str:
        return comparison_table({self.method: self}, self.classes, decimals)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["confusion"] = np.asarray(self.confusion).tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        d = dict(d)
        d["confusion"] = np.asarray(d["confusion"])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def _table_rows(reports: Mapping[str, EvalReport], row_order: Sequence[str], decimals: int):
    methods = list(reports)
    rows = [["Class", *methods]]
    for name in row_order:
        row = [name]
        for m in methods:
            r = reports[m]
            v = r.per_class_accuracy[r.classes.index(name)] if name in r.classes else None
            row.append(_fmt(v, decimals))
        rows.append(row)
    rows.append(["Average", *(_fmt(reports[m].macc, decimals) for m in methods)])
    return rows


def comparison_table(reports: Mapping[str, EvalReport], row_order: Sequence[str],
                     decimals: int = 2) -> str:
    """Classes down, methods across, truncated accuracies, ``Average`` last."""
    return _align(_table_rows(reports, row_order, decimals))


def comparison_csv(reports: Mapping[str, EvalReport], row_order: Sequence[str],
                   decimals: int = 2) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(_table_rows(reports, row_order, decimals))
    return buf.getvalue()


def summary_table(cells: Mapping[str, Mapping[str, EvalReport]], decimals: int = 2) -> str:
    """Rows x columns grid of ``mIoU|mAcc`` pairs (train data x test data)."""
    cols = list(dict.fromkeys(c for row in cells.values() for c in row))
    rows = [["", *cols]]
    for name, row in cells.items():
        rows.append([name, *(row[c].pair(decimals) if c in row else "-" for c in cols)])
    return _align(rows)


# ---------------------------------------------------------------- scale ablation

@dataclasses.dataclass
class ScalePoint:
    fraction: float
    n_samples: int
    miou: float | None
    macc: float
    report: EvalReport


def scale_ablation(manifest, fractions: Sequence[float], trainer: Callable, evaluator: Callable,
                   seed: int = 0, baseline_scale: float = 1.0) -> list[ScalePoint]:
    """Train and evaluate once per fraction of the baseline corpus.

    ``baseline_scale`` states how many baseline corpora ``manifest`` holds, so
    fraction 2.0 is feasible on a manifest of twice the baseline size.
    ``trainer(sub_manifest)`` returns a model; ``evaluator(model)`` an
    :class:`EvalReport`.
    """
    from .dataset import sample_subset

    points = []
    for f in fractions:
        rel = f / baseline_scale
        sub = sample_subset(manifest, fraction=rel, seed=seed)
        model = trainer(sub)
        report = evaluator(model)
        points.append(ScalePoint(f, len(sub), report.miou, report.macc, report))
        log.info("fraction %.2f: %d samples, mAcc %.3f", f, len(sub), report.macc)
    return points


def scale_curve_csv(points: Sequence[ScalePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fraction", "n_samples", "miou", "macc"])
    for p in points:
        w.writerow([p.fraction, p.n_samples, "" if p.miou is None else repr(p.miou), repr(p.macc)])
    return buf.getvalue()


# ---------------------------------------------------------------- PCA overlays

@dataclasses.dataclass
class EllipseFit:
    dataset: str
    points: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    semi_axes: np.ndarray  # major, minor; 2 standard deviations
    angle_deg: float
    degenerate: bool


@dataclasses.dataclass
class PcaOverlay:
    class_name: str
    center: np.ndarray
    basis: np.ndarray  # (2, D) rows are principal directions
    explained_variance: np.ndarray
    datasets: dict[str, EllipseFit]
    axis_range: tuple[float, float] = PCA_AXIS_RANGE
    skipped: list[str] = dataclasses.field(default_factory=list)

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.center) @ self.basis.T


def covariance_ellipse(points: np.ndarray, n_std: float = 2.0):
    """Mean, covariance, semi-axes ``n_std * sqrt(eigvals)`` (major first), angle."""
    mean = points.mean(axis=0)
    cov = np.cov(points, rowvar=False)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals[::-1], 0.0, None)
    evecs = evecs[:, ::-1]
    angle = float(np.degrees(np.arctan2(evecs[1, 0], evecs[0, 0])) % 180.0)
    return mean, cov, n_std * np.sqrt(evals), angle


def pca_overlay(feature_sets: Mapping[str, np.ndarray], class_name: str,
                axis_range: tuple[float, float] = PCA_AXIS_RANGE) -> PcaOverlay:
    """Project every dataset's features for one class onto a shared 2-D PCA basis."""
    usable, skipped = {}, []
    for name, feats in feature_sets.items():
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        if feats.shape[0] < 2:
            log.warning("dataset %s has %d points for %s; skipped", name, feats.shape[0], class_name)
            skipped.append(name)
            continue
        usable[name] = feats
    if not usable:
        raise PreconditionError(f"no dataset has two or more points for {class_name}")
    union = np.concatenate(list(usable.values()))
    if union.shape[1] < 2:
        raise PreconditionError("features need at least two dimensions")
    center = union.mean(axis=0)
    _, s, vt = np.linalg.svd(union - center, full_matrices=False)
    basis = vt[:2].copy()
    # deterministic sign: largest-magnitude coordinate of each axis positive
    for i in range(2):
        if basis[i, np.argmax(np.abs(basis[i]))] < 0:
            basis[i] *= -1
    explained = s[:2] ** 2 / max(union.shape[0] - 1, 1)
    fits = {}
    for name, feats in usable.items():
        pts = (feats - center) @ basis.T
        mean, cov, axes, angle = covariance_ellipse(pts)
        degenerate = bool(np.all(axes == 0))
        if degenerate:
            log.info("zero-variance cloud for %s/%s; ellipse is a point", class_name, name)
        fits[name] = EllipseFit(name, pts, mean, cov, axes, angle, degenerate)
    return PcaOverlay(class_name, center, basis, explained, fits, tuple(axis_range), skipped)


def write_pca_csv(overlay: PcaOverlay, out_dir) -> list[Path]:
    """One points CSV per dataset plus one ellipse-parameter CSV per class."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, fit in overlay.datasets.items():
        p = out_dir / f"{overlay.class_name}_{name}_points.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pc1", "pc2"])
            w.writerows([[repr(float(a)), repr(float(b))] for a, b in fit.points])
        paths.append(p)
    p = out_dir / f"{overlay.class_name}_ellipses.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "n", "mean_pc1", "mean_pc2", "semi_major", "semi_minor",
                    "angle_deg", "degenerate", "axis_min", "axis_max"])
        for name, fit in overlay.datasets.items():
            w.writerow([name, len(fit.points), repr(float(fit.mean[0])), repr(float(fit.mean[1])),
                        repr(float(fit.semi_axes[0])), repr(float(fit.semi_axes[1])),
                        repr(fit.angle_deg), int(fit.degenerate), overlay.axis_range[0],
                        overlay.axis_range[1]])
    paths.append(p)
    return paths


DATASET_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd")


def render_pca(overlay: PcaOverlay, path) -> None:
    """Scatter + 2-sigma ellipse per dataset on fixed axes."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Ellipse

    fig, ax = plt.subplots(figsize=(4, 4))
    for i, (name, fit) in enumerate(overlay.datasets.items()):
        color = DATASET_COLORS[i % len(DATASET_COLORS)]
        ax.scatter(fit.points[:, 0], fit.points[:, 1], s=4, alpha=0.4, color=color, label=name)
        ax.add_patch(Ellipse(fit.mean, 2 * fit.semi_axes[0], 2 * fit.semi_axes[1],
                             angle=fit.angle_deg, fill=False, color=color, lw=1.5))
    ax.set_xlim(*overlay.axis_range)
    ax.set_ylim(*overlay.axis_range)
    ax.set_title(overlay.class_name)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_scale_curve(points: Sequence[ScalePoint], path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 3))
    xs = [p.fraction for p in points]
    ax.plot(xs, [p.macc for p in points], "o-", label="mAcc")
    if all(p.miou is not None for p in points):
        ax.plot(xs, [p.miou for p in points], "s-", label="mIoU")
    ax.set_xlabel("dataset scale (x baseline)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

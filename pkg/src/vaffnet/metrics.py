"""Segmentation and junction metrics.

Undefined ratios (zero denominators) are reported as ``None`` rather than 0.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .codec import DEFAULT_CELL_SIZE, DecodeParams, decode
from .data import BIFURCATION, CROSSING, AnnotationSet, Junction
from .errors import GeometryError

DEFAULT_TOLERANCE = 5.0

# column order of the report tables: RV, FAZ, RVJ detection, RVJ classification
COLUMNS = (
    "rv_dice",
    "rv_bacc",
    "faz_dice",
    "faz_bacc",
    "rvj_det_re",
    "rvj_det_f1",
    "rvj_cls_re",
    "rvj_cls_f1",
)
COLUMN_TITLES = (
    "RV DICE",
    "RV BACC",
    "FAZ DICE",
    "FAZ BACC",
    "RVJ det RE",
    "RVJ det F1",
    "RVJ cls RE",
    "RVJ cls F1",
)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int


def confusion(pred, gt) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise GeometryError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, pred.size - tp - fp - fn, fn)


def dice(pred, gt) -> float:
    c = confusion(pred, gt)
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


def bacc_with_flag(pred, gt) -> tuple[float, bool]:
    """Balanced accuracy plus a flag set when one side had to be omitted.

    A class absent from the ground truth scores 1 for that side when the
    prediction is also free of it; otherwise that side is left out and the
    other rate is returned alone.
    """
    c = confusion(pred, gt)
    parts, flagged = [], False
    if c.tp + c.fn > 0:
        parts.append(c.tp / (c.tp + c.fn))
    elif c.fp == 0:
        parts.append(1.0)
    else:
        flagged = True
    if c.tn + c.fp > 0:
        parts.append(c.tn / (c.tn + c.fp))
    elif c.fn == 0:
        parts.append(1.0)
    else:
        flagged = True
    return float(np.mean(parts)), flagged


def bacc(pred, gt) -> float:
    return bacc_with_flag(pred, gt)[0]


# --------------------------------------------------------------------------
# junctions


@dataclass
class Matching:
    pairs: list[tuple[int, int, float]]
    unmatched_pred: list[int]
    unmatched_gt: list[int]
    tolerance: float = DEFAULT_TOLERANCE


def _distance_matrix(pred: Sequence[Junction], gt: Sequence[Junction]) -> np.ndarray:
    if not pred or not gt:
        return np.zeros((len(pred), len(gt)))
    p = np.array([[j.x, j.y] for j in pred], dtype=np.float64)
    g = np.array([[j.x, j.y] for j in gt], dtype=np.float64)
    return np.hypot(p[:, None, 0] - g[None, :, 0], p[:, None, 1] - g[None, :, 1])


def _finish(pairs, n_pred, n_gt, tol) -> Matching:
    pairs = sorted(pairs)
    used_p = {p for p, _, _ in pairs}
    used_g = {g for _, g, _ in pairs}
    return Matching(
        pairs=pairs,
        unmatched_pred=[i for i in range(n_pred) if i not in used_p],
        unmatched_gt=[i for i in range(n_gt) if i not in used_g],
        tolerance=tol,
    )


def match_greedy(pred: Sequence[Junction], gt: Sequence[Junction], tol: float = DEFAULT_TOLERANCE) -> Matching:
    """Nearest-first greedy one-to-one matching, tolerance inclusive."""
    d = _distance_matrix(pred, gt)
    cands = [(d[i, j], i, j) for i in range(len(pred)) for j in range(len(gt)) if d[i, j] <= tol]
    cands.sort()
    used_p, used_g, pairs = set(), set(), []
    for dist, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, float(dist)))
    return _finish(pairs, len(pred), len(gt), tol)


def match_junctions(
    pred: Sequence[Junction], gt: Sequence[Junction], tol: float = DEFAULT_TOLERANCE, method: str = "optimal"
) -> Matching:
    """One-to-one matching of predicted to ground-truth junctions within ``tol``.

    ``optimal`` maximizes the number of pairs and, among maximum matchings,
    minimizes the summed distance; ties go to lower prediction indices.
    ``greedy`` pairs nearest-first. Junction class is ignored.
    """
    if method == "greedy":
        return match_greedy(pred, gt, tol)
    if method != "optimal":
        raise ValueError(f"unknown matching method {method!r}")
    n, m = len(pred), len(gt)
    if n == 0 or m == 0:
        return _finish([], n, m, tol)
    d = _distance_matrix(pred, gt)
    allowed = d <= tol
    # a disallowed pair costs more than any full set of allowed pairs, so the
    # optimum first maximizes cardinality, then minimizes total distance
    big = tol * (min(n, m) + 1) + 1.0
    ii, jj = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    tie = 1e-10 * (ii * m + jj) / (n * m)
    cost = np.where(allowed, d + tie, big)
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(i), int(j), float(d[i, j])) for i, j in zip(rows, cols) if allowed[i, j]]
    return _finish(pairs, n, m, tol)


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def _f1(pr: float | None, re: float | None) -> float | None:
    if pr is None or re is None:
        return None
    return 0.0 if pr + re == 0 else 2 * pr * re / (pr + re)


def detection_metrics(m: Matching) -> dict[str, float | None]:
    tp, fn, fp = len(m.pairs), len(m.unmatched_gt), len(m.unmatched_pred)
    re = _ratio(tp, tp + fn)
    pr = _ratio(tp, tp + fp)
    return {"re": re, "pr": pr, "f1": _f1(pr, re)}


def classification_metrics(m: Matching, pred: Sequence[Junction], gt: Sequence[Junction]) -> dict[str, float | None]:
    """Bifurcation-vs-crossing scores with bifurcation as the positive class.

    Matched pairs are scored one-vs-rest; unmatched ground-truth
    bifurcations count as misses and unmatched predicted bifurcations as
    false alarms.
    """
    tp = fn = fp = 0
    for i, j, _ in m.pairs:
        p_bif = pred[i].kind == BIFURCATION
        g_bif = gt[j].kind == BIFURCATION
        if p_bif and g_bif:
            tp += 1
        elif g_bif:
            fn += 1
        elif p_bif:
            fp += 1
    fn += sum(gt[j].kind == BIFURCATION for j in m.unmatched_gt)
    fp += sum(pred[i].kind == BIFURCATION for i in m.unmatched_pred)
    re = _ratio(tp, tp + fn)
    pr = _ratio(tp, tp + fp)
    return {"re": re, "pr": pr, "f1": _f1(pr, re)}


@dataclass
class MetricsReport:
    rv: dict = field(default_factory=dict)
    faz: dict = field(default_factory=dict)
    rvj_detection: dict = field(default_factory=dict)
    rvj_classification: dict = field(default_factory=dict)
    sample_id: str = ""

    def row(self) -> dict[str, float | None]:
        return {
            "rv_dice": self.rv["dice"],
            "rv_bacc": self.rv["bacc"],
            "faz_dice": self.faz["dice"],
            "faz_bacc": self.faz["bacc"],
            "rvj_det_re": self.rvj_detection["re"],
            "rvj_det_f1": self.rvj_detection["f1"],
            "rvj_cls_re": self.rvj_classification["re"],
            "rvj_cls_f1": self.rvj_classification["f1"],
        }


def evaluate_sample(
    output,
    ann: AnnotationSet,
    decode_params: DecodeParams = DecodeParams(),
    seg_threshold: float = 0.5,
    cell_size: int = DEFAULT_CELL_SIZE,
    tolerance: float = DEFAULT_TOLERANCE,
    sample_id: str = "",
) -> MetricsReport:
    """Score one network output (numpy fields) against its annotations.

    Probabilities ``>= seg_threshold`` count as foreground.
    """
    rv = np.asarray(output.rv_prob) >= seg_threshold
    faz = np.asarray(output.faz_prob) >= seg_threshold
    if rv.shape != ann.vessel_mask.shape or faz.shape != ann.faz_mask.shape:
        raise GeometryError("prediction and annotation sizes differ")
    pred_j = decode(np.asarray(output.rvj_heatmap), np.asarray(output.rvj_grid), decode_params, cell_size)
    m = match_junctions(pred_j, ann.junctions, tolerance)
    return MetricsReport(
        rv={"dice": dice(rv, ann.vessel_mask), "bacc": bacc(rv, ann.vessel_mask)},
        faz={"dice": dice(faz, ann.faz_mask), "bacc": bacc(faz, ann.faz_mask)},
        rvj_detection=detection_metrics(m),
        rvj_classification=classification_metrics(m, pred_j, ann.junctions),
        sample_id=sample_id,
    )


def summarize(reports: Sequence[MetricsReport]) -> dict[str, tuple[float | None, float | None]]:
    """Mean and population standard deviation per column, ignoring undefined entries."""
    out = {}
    for col in COLUMNS:
        vals = [r.row()[col] for r in reports if r.row()[col] is not None]
        out[col] = (float(np.mean(vals)), float(np.std(vals))) if vals else (None, None)
    return out


def format_mean_std(mean: float | None, std: float | None) -> str:
    if mean is None:
        return "null"
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def _fmt(v: float | None) -> str:
    return "null" if v is None else f"{v:.6f}"


def write_report(path: str | Path, reports: Sequence[MetricsReport]) -> Path:
    """Per-sample rows followed by a ``mean ± std`` line (percent), tab separated."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summary = summarize(reports)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("sample",) + COLUMNS)
        for r in reports:
            row = r.row()
            w.writerow((r.sample_id,) + tuple(_fmt(row[c]) for c in COLUMNS))
        w.writerow(("mean ± std (%)",) + tuple(format_mean_std(*summary[c]) for c in COLUMNS))
    return path


def read_report(path: str | Path) -> list[dict[str, float | None]]:
    """Per-sample rows of a report written by :func:`write_report`."""
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh, delimiter="\t")
        header = next(r)
        for rec in r:
            if rec[0].startswith("mean"):
                break
            rows.append(
                {"sample": rec[0], **{k: (None if v == "null" else float(v)) for k, v in zip(header[1:], rec[1:])}}
            )
    return rows


def format_table(rows: dict[str, dict], title: str = "Method") -> str:
    """Render ``{name: summary}`` as a fixed-width table in report column order."""
    widths = [max(len(title), *(len(n) for n in rows))] + [16] * len(COLUMNS)
    lines = [
        " | ".join([title.ljust(widths[0])] + [t.ljust(w) for t, w in zip(COLUMN_TITLES, widths[1:])]),
    ]
    lines.append("-+-".join("-" * w for w in widths))
    for name, summary in rows.items():
        cells = [format_mean_std(*summary[c]) for c in COLUMNS]
        lines.append(" | ".join([name.ljust(widths[0])] + [c.ljust(w) for c, w in zip(cells, widths[1:])]))
    return "\n".join(lines) + "\n"


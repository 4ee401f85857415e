"""Baseline unreliability scores and the accept/reject evaluation harness.

Every method emits one unreliability value per sample, higher = less
reliable. The harness sweeps uniform thresholds across the score range,
rejects samples scoring above the threshold, and integrates two curves
with the trapezoidal rule:

  AUROC  over (false positive rate, true positive rate), reject = positive;
  AUCEA  over (coverage, effective accuracy), where coverage is the accepted
         fraction and effective accuracy the accuracy among accepted samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "ScoredSample",
    "CurvePoint",
    "EvalCurve",
    "SummaryRow",
    "entropy_score",
    "max_response_score",
    "margin_score",
    "sweep",
    "summarize",
    "write_scores_csv",
    "read_scores_csv",
    "write_summary_csv",
]

DEFAULT_N_THRESHOLDS = 1000


class ScoredSample(NamedTuple):
    id: int
    unreliability: float
    ground_truth_reject: bool
    label: int | None = None


class CurvePoint(NamedTuple):
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    coverage: float
    effective_accuracy: float
    fpr: float
    tpr: float


@dataclass(frozen=True)
class EvalCurve:
    points: list[CurvePoint]
    auroc: float
    aucea: float
    degenerate: bool = False  # all scores equal: single-threshold curve


def _check_distribution(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("expected a 1-D probability vector")
    if (p < 0).any() or not np.isfinite(p).all():
        raise ValueError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {p.sum()}, not 1")
    return p


def entropy_score(softmax) -> float:
    """Shannon entropy (natural log) of a softmax distribution."""
    p = _check_distribution(softmax)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def max_response_score(softmax) -> float:
    """1 - max probability, so higher means less reliable."""
    p = _check_distribution(softmax)
    if p.size < 2:
        raise ValueError("need at least 2 classes")
    return float(1.0 - p.max())


def margin_score(softmax) -> float:
    """1 - (top probability - second probability), higher = less reliable."""
    p = _check_distribution(softmax)
    if p.size < 2:
        raise ValueError("need at least 2 classes")
    top2 = np.sort(p)[-2:]
    return float(1.0 - (top2[1] - top2[0]))


def sweep(
    samples: Sequence[ScoredSample], n_thresholds: int = DEFAULT_N_THRESHOLDS
) -> EvalCurve:
    """Threshold sweep over the score range; see module docstring.

    Thresholds are uniform on [min score, max score]; a sample is rejected
    iff its unreliability exceeds the threshold. The stored confusion counts
    treat "accept" as the positive prediction and "not reject-worthy" as the
    positive class (so coverage = (TP+FP)/total and effective accuracy =
    TP/(TP+FP)); fpr/tpr are reported in the reject-is-positive orientation
    used for ROC curves. The ROC integration is anchored with the two ideal
    endpoints (reject none, reject all).
    """
    if len(samples) < 2:
        raise ValueError("need at least 2 samples")
    if n_thresholds < 1:
        raise ValueError("n_thresholds must be >= 1")
    scores = np.array([s.unreliability for s in samples], dtype=np.float64)
    gt_reject = np.array([bool(s.ground_truth_reject) for s in samples])
    if not np.isfinite(scores).all():
        raise ValueError("unreliability scores must be finite")
    n_bad = int(gt_reject.sum())
    n_good = len(samples) - n_bad
    if n_bad == 0 or n_good == 0:
        raise ValueError("both ground-truth classes required (AUROC undefined)")

    smin, smax = float(scores.min()), float(scores.max())
    degenerate = smin == smax
    if degenerate:
        thresholds = np.array([smin])
    else:
        thresholds = np.linspace(smin, smax, n_thresholds)

    # rejected(t) = #(score > t) per class, via sorted score positions
    sorted_good = np.sort(scores[~gt_reject])
    sorted_bad = np.sort(scores[gt_reject])
    rej_good = n_good - np.searchsorted(sorted_good, thresholds, side="right")
    rej_bad = n_bad - np.searchsorted(sorted_bad, thresholds, side="right")

    total = len(samples)
    points = []
    for t, rg, rb in zip(thresholds[::-1], rej_good[::-1], rej_bad[::-1]):
        acc_good = n_good - rg  # accepted, not reject-worthy -> TP
        acc_bad = n_bad - rb  # accepted, reject-worthy      -> FP
        accepted = acc_good + acc_bad
        points.append(
            CurvePoint(
                threshold=float(t),
                tp=int(acc_good),
                fp=int(acc_bad),
                tn=int(rb),
                fn=int(rg),
                coverage=accepted / total,
                effective_accuracy=acc_good / accepted if accepted else math.nan,
                fpr=rg / n_good,
                tpr=rb / n_bad,
            )
        )

    fpr = np.array([p.fpr for p in points])
    tpr = np.array([p.tpr for p in points])
    fpr = np.concatenate([[0.0], fpr, [1.0]])
    tpr = np.concatenate([[0.0], tpr, [1.0]])
    order = np.lexsort((tpr, fpr))
    auroc = float(np.trapezoid(tpr[order], fpr[order]))

    cov = np.array([p.coverage for p in points])
    ea = np.array([p.effective_accuracy for p in points])
    keep = cov > 0  # precision undefined at zero coverage
    order = np.argsort(cov[keep])
    aucea = float(np.trapezoid(ea[keep][order], cov[keep][order]))

    return EvalCurve(points=points, auroc=auroc, aucea=aucea, degenerate=degenerate)


class SummaryRow(NamedTuple):
    method: str
    auroc: float
    aucea: float
    delta_auroc_to_best: float


def summarize(curves: dict[str, EvalCurve]) -> list[SummaryRow]:
    """Per-method metrics with AUROC difference to the best method."""
    if not curves:
        raise ValueError("need at least one method")
    best = max(c.auroc for c in curves.values())
    return [
        SummaryRow(
            method=name,
            auroc=curve.auroc,
            aucea=curve.aucea,
            delta_auroc_to_best=curve.auroc - best,
        )
        for name, curve in curves.items()
    ]


# --- CSV interchange ----------------------------------------------------------


def write_scores_csv(
    path, samples: Iterable[ScoredSample], ranks: Sequence[int] | None = None
) -> None:
    samples = list(samples)
    has_label = any(s.label is not None for s in samples)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["id", "unreliability", "ground_truth_reject"]
        if has_label:
            header.append("label")
        if ranks is not None:
            header.append("rank")
        writer.writerow(header)
        for i, s in enumerate(samples):
            row = [str(s.id), f"{s.unreliability:.17g}", str(int(s.ground_truth_reject))]
            if has_label:
                row.append("" if s.label is None else str(int(s.label)))
            if ranks is not None:
                row.append(str(int(ranks[i])))
            writer.writerow(row)


def read_scores_csv(path) -> list[ScoredSample]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "unreliability", "ground_truth_reject"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(
                f"{path}: scores CSV needs columns id,unreliability,ground_truth_reject"
            )
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                label = row.get("label")
                out.append(
                    ScoredSample(
                        id=int(row["id"]),
                        unreliability=float(row["unreliability"]),
                        ground_truth_reject=bool(int(row["ground_truth_reject"])),
                        label=int(label) if label not in (None, "") else None,
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    if not out:
        raise ValueError(f"{path}: no score rows")
    return out


def write_summary_csv(path, rows: Sequence[SummaryRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "auroc", "aucea", "delta_auroc_to_best"])
        for r in rows:
            writer.writerow(
                [r.method, f"{r.auroc:.17g}", f"{r.aucea:.17g}", f"{r.delta_auroc_to_best:.17g}"]
            )

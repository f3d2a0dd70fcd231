"""Evaluation metrics and reports: AUC, conditional label accuracy (CLA),
threshold selection, per-slice reports, and the offline A/B session metric."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    """Raised when a metric is requested on data that cannot define it."""


def evaluate_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Exact ROC AUC via the rank (Mann-Whitney) statistic.

    Equals P(score_pos > score_neg) + 0.5 P(tie); the satisfied class
    (label 1) is the positive class.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC undefined: only one class present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum_pos = ranks[labels == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate_cla(
    scores: Sequence[float],
    labels: Sequence[int],
    precision_floor: float = 0.85,
) -> tuple[float, Optional[float]]:
    """Max recall of the dissatisfied class (label 0) at precision >= floor.

    The detector flags DISSATISFIED when score <= threshold; candidate
    thresholds are the observed scores. Returns (cla, threshold); among
    thresholds achieving the max recall the lowest wins. If no threshold
    qualifies, returns (0.0, None).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_dis = int((labels == 0).sum())
    if n_dis == 0:
        raise UndefinedMetricError("CLA undefined: no dissatisfied examples")
    best_recall = 0.0
    best_theta: Optional[float] = None
    for theta in np.unique(scores):
        flagged = scores <= theta
        n_flagged = int(flagged.sum())
        tp = int((flagged & (labels == 0)).sum())
        precision = tp / n_flagged if n_flagged else 0.0
        recall = tp / n_dis
        if precision >= precision_floor and (
            recall > best_recall or (recall == best_recall and best_theta is None)
        ):
            best_recall = recall
            best_theta = float(theta)
    return best_recall, best_theta


def select_threshold(
    scores: Sequence[float], labels: Sequence[int], precision_floor: float = 0.85
) -> Optional[float]:
    """Validation-split threshold for the serving gate (None disables gating)."""
    _, theta = evaluate_cla(scores, labels, precision_floor)
    return theta


@dataclass
class SliceRow:
    name: str
    count: int
    n_dissatisfied: int
    auc: Optional[float]
    cla: Optional[float]
    recalled_at_theta: Optional[int] = None
    insufficient: bool = False


@dataclass
class MetricsReport:
    auc: float
    cla: float
    threshold: Optional[float]
    precision_floor: float
    total: int
    slices: list[SliceRow] = field(default_factory=list)
    model_id: str = ""
    corpus_id: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        lines = [
            f"model={self.model_id or '-'} corpus={self.corpus_id or '-'} "
            f"n={self.total} auc={self.auc:.4f} cla={self.cla:.4f} "
            f"theta={'-' if self.threshold is None else f'{self.threshold:.4f}'} "
            f"floor={self.precision_floor:.2f}",
            f"{'slice':<24}{'n':>7}{'n_dis':>7}{'auc':>9}{'cla':>9}{'recall@t':>10}",
        ]
        for row in self.slices:
            auc = "-" if row.auc is None else f"{row.auc:.4f}"
            cla = "-" if row.cla is None else f"{row.cla:.4f}"
            rec = "-" if row.recalled_at_theta is None else str(row.recalled_at_theta)
            lines.append(f"{row.name:<24}{row.count:>7}{row.n_dissatisfied:>7}{auc:>9}{cla:>9}{rec:>10}")
        return "\n".join(lines)


def _slice_metrics(scores, labels, floor) -> tuple[Optional[float], Optional[float], bool]:
    try:
        auc = evaluate_auc(scores, labels)
    except UndefinedMetricError:
        return None, None, True
    try:
        cla, _ = evaluate_cla(scores, labels, floor)
    except UndefinedMetricError:
        return auc, None, True
    return auc, cla, False


def slice_report(
    scores: Sequence[float],
    examples,
    theta: Optional[float],
    precision_floor: float = 0.85,
    model_id: str = "",
    corpus_id: str = "",
) -> MetricsReport:
    """AUC/CLA overall and per domain / error type / rare flag on ground-truth
    labels, plus recall counts at the serving threshold per error type."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray([ex.ground_truth for ex in examples])
    if any(l is None for l in labels.tolist()):
        raise UndefinedMetricError("slice report requires ground-truth labels")
    labels = labels.astype(np.int64)
    auc = evaluate_auc(scores, labels)
    cla, _ = evaluate_cla(scores, labels, precision_floor)
    report = MetricsReport(
        auc=auc, cla=cla, threshold=theta, precision_floor=precision_floor,
        total=len(scores), model_id=model_id, corpus_id=corpus_id,
    )

    def add_rows(kind: str, key_fn, with_recall: bool = False):
        keys = sorted({key_fn(ex) for ex in examples}, key=str)
        for key in keys:
            idx = np.array([key_fn(ex) == key for ex in examples])
            s, l = scores[idx], labels[idx]
            a, c, insufficient = _slice_metrics(s, l, precision_floor)
            n_dis = int((l == 0).sum())
            recalled = None
            if with_recall and theta is not None:
                recalled = int(((s <= theta) & (l == 0)).sum())
            report.slices.append(
                SliceRow(f"{kind}={key}", int(idx.sum()), n_dis, a, c, recalled, insufficient)
            )

    add_rows("domain", lambda ex: ex.slices.domain)
    add_rows("error", lambda ex: ex.slices.error_type, with_recall=True)
    add_rows("rare", lambda ex: ex.slices.rare)
    return report


def hash_group(session_id: str) -> int:
    """Deterministic 50/50 group assignment by session id hash."""
    digest = hashlib.sha256(session_id.encode("utf-8")).digest()
    return digest[0] & 1


def simulate_cus(scores, examples, theta: Optional[float]) -> float:
    """Session-metric analog: a clarification (p <= theta) counts satisfied
    iff it was warranted (the turn's error plan is not NONE); a direct
    response counts satisfied iff the ground truth says so."""
    if len(examples) == 0:
        raise UndefinedMetricError("empty group in CUS simulation")
    satisfied = 0
    for score, ex in zip(scores, examples):
        if ex.ground_truth is None:
            raise UndefinedMetricError("CUS simulation requires ground truth")
        clarify = theta is not None and score <= theta
        if clarify:
            satisfied += ex.slices.error_type != "NONE"
        else:
            satisfied += ex.ground_truth
    return satisfied / len(examples)


def ab_compare_cus(
    scores_a, theta_a: Optional[float],
    scores_b, theta_b: Optional[float],
    examples,
) -> tuple[float, float]:
    """Split sessions 50/50 by id hash; model A gates group 0, model B group 1."""
    idx_a = [i for i, ex in enumerate(examples) if hash_group(ex.session_id) == 0]
    idx_b = [i for i, ex in enumerate(examples) if hash_group(ex.session_id) == 1]
    cus_a = simulate_cus([scores_a[i] for i in idx_a], [examples[i] for i in idx_a], theta_a)
    cus_b = simulate_cus([scores_b[i] for i in idx_b], [examples[i] for i in idx_b], theta_b)
    return cus_a, cus_b

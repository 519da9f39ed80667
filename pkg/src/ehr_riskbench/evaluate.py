"""Ranking metrics, paired bootstrap model comparison, and report emission.

ROC AUC is the tie-aware rank statistic (probability that a random positive
outscores a random negative, ties worth 1/2). PR AUC is non-interpolated
average precision with tied scores treated as a single threshold, which makes
it order-independent; when ties straddle labels the extra [lower, upper]
range over within-tie orderings is available from :func:`pr_auc_tie_range`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import MisalignedSets, NoPositives, ParseError, SingleClass


@dataclass
class PredictionSet:
    """Aligned (patient_id, label, score) triples for one model."""

    patient_ids: list[str]
    labels: np.ndarray
    scores: np.ndarray
    model: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not (len(self.patient_ids) == len(self.labels) == len(self.scores)):
            raise ValueError("patient_ids, labels, scores must have equal length")

    def sorted_by_patient(self) -> "PredictionSet":
        order = np.argsort(np.asarray(self.patient_ids, dtype=object), kind="stable")
        return PredictionSet([self.patient_ids[i] for i in order],
                             self.labels[order], self.scores[order], self.model)


def _check_classes(labels: np.ndarray) -> None:
    if labels.min(initial=1) == 1 or labels.max(initial=0) == 0:
        raise SingleClass("both classes are required")


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, ties averaged."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(p: PredictionSet) -> float:
    """Mann-Whitney rank statistic with half-credit for ties."""
    return _roc_auc_arrays(p.labels, p.scores)


def _roc_auc_arrays(labels: np.ndarray, scores: np.ndarray) -> float:
    _check_classes(labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    ranks = _average_ranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(p: PredictionSet) -> float:
    """Average precision; tied scores collapse into one threshold."""
    return _pr_auc_arrays(p.labels, p.scores)


def _pr_auc_arrays(labels: np.ndarray, scores: np.ndarray) -> float:
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    total = 0.0
    seen = 0
    pos_seen = 0
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        block_pos = int(y[i:j + 1].sum())
        seen = j + 1
        pos_seen += block_pos
        if block_pos:
            total += block_pos * (pos_seen / seen)  # precision at the block boundary
        i = j + 1
    return float(total / n_pos)


def pr_auc_tie_range(p: PredictionSet) -> tuple[float, float]:
    """[lower, upper] band on average precision induced by tied scores.

    The band is the hull of (a) per-rank average precision under the worst
    within-tie ordering (negatives ahead of positives), (b) the best ordering
    (positives first), and (c) the threshold-collapse point estimate of
    :func:`pr_auc`, so the point estimate always lies inside the band. With
    strictly distinct scores the band collapses to the point estimate.
    """
    n_pos = int(p.labels.sum())
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive")

    def ap_with_block_order(neg_first: bool) -> float:
        order = np.argsort(-p.scores, kind="stable")
        s = p.scores[order]
        y = p.labels[order]
        total = 0.0
        seen = 0
        pos_seen = 0
        i = 0
        while i < len(s):
            j = i
            while j + 1 < len(s) and s[j + 1] == s[i]:
                j += 1
            block = list(y[i:j + 1])
            block.sort(reverse=not neg_first)  # neg_first: 0s then 1s
            for label in block:
                seen += 1
                if label == 1:
                    pos_seen += 1
                    total += pos_seen / seen
            i = j + 1
        return total / n_pos

    point = _pr_auc_arrays(p.labels, p.scores)
    lo = min(ap_with_block_order(True), ap_with_block_order(False), point)
    hi = max(ap_with_block_order(True), ap_with_block_order(False), point)
    return (float(lo), float(hi))


# --- paired bootstrap --------------------------------------------------------

@dataclass(frozen=True)
class MetricComparison:
    win_fraction: float
    tie_fraction: float
    loss_fraction: float
    p_value: float


@dataclass(frozen=True)
class BootstrapResult:
    n_iterations: int
    seed: int
    redraws: int
    roc: MetricComparison
    pr: MetricComparison


def bootstrap_compare(
    challenger: PredictionSet,
    incumbent: PredictionSet,
    n: int = 1000,
    seed: int = 0,
) -> BootstrapResult:
    """Resample patients with replacement (same indices for both models) and
    count how often the challenger's metric strictly exceeds the incumbent's.

    Ties count 1/2; p = 1 - (wins + ties/2) / n. Resamples missing a class
    are redrawn so exactly ``n`` iterations contribute.
    """
    a = challenger.sorted_by_patient()
    b = incumbent.sorted_by_patient()
    if a.patient_ids != b.patient_ids:
        raise MisalignedSets("prediction sets cover different patients")
    _check_classes(a.labels)

    rng = np.random.default_rng(seed)
    size = len(a.patient_ids)
    counts = {"roc": [0.0, 0.0, 0.0], "pr": [0.0, 0.0, 0.0]}  # win, tie, loss
    redraws = 0
    done = 0
    while done < n:
        idx = rng.integers(0, size, size=size)
        labels = a.labels[idx]
        if labels.min() == labels.max():
            redraws += 1
            continue
        for name, fn in (("roc", _roc_auc_arrays), ("pr", _pr_auc_arrays)):
            va = fn(labels, a.scores[idx])
            vb = fn(labels, b.scores[idx])
            if va > vb:
                counts[name][0] += 1
            elif va == vb:
                counts[name][1] += 1
            else:
                counts[name][2] += 1
        done += 1

    def comparison(name: str) -> MetricComparison:
        win, tie, loss = counts[name]
        return MetricComparison(win / n, tie / n, loss / n, 1.0 - (win + tie / 2.0) / n)

    return BootstrapResult(n, seed, redraws, comparison("roc"), comparison("pr"))


def p_marker(p: float | None) -> str:
    """Significance stars: *** below 0.01, ** below 0.05, * below 0.1."""
    if p is None:
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


# --- report ------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    outcome: str
    model: str
    roc: float
    pr: float
    base_rate: float
    roc_p: float | None = None
    pr_p: float | None = None


def emit_report(rows: list[ReportRow], out_prefix: str, config_hash: str | None = None) -> tuple[str, str]:
    """Write ``<out_prefix>.csv`` and ``<out_prefix>.md``; returns both paths."""
    csv_path = f"{out_prefix}.csv"
    md_path = f"{out_prefix}.md"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("outcome,model,roc_auc,pr_auc,base_rate,roc_marker,pr_marker\n")
        for r in rows:
            fh.write(f"{r.outcome},{r.model},{r.roc:.6f},{r.pr:.6f},{r.base_rate:.6f},"
                     f"{p_marker(r.roc_p)},{p_marker(r.pr_p)}\n")
    with open(md_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("| Outcome | Model | ROC AUC | PR AUC | Base rate |\n")
        fh.write("|---|---|---|---|---|\n")
        for r in rows:
            fh.write(f"| {r.outcome} | {r.model} | {r.roc:.4f}{p_marker(r.roc_p)} "
                     f"| {r.pr:.4f}{p_marker(r.pr_p)} | {r.base_rate:.4f} |\n")
        fh.write("\nSignificance markers: `*` p<0.1, `**` p<0.05, `***` p<0.01.\n")
        if config_hash:
            fh.write(f"\nconfig_hash: {config_hash}\n")
    return csv_path, md_path


# --- prediction files --------------------------------------------------------

def write_predictions(p: PredictionSet, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("patient_id,label,score\n")
        for pid, label, score in zip(p.patient_ids, p.labels, p.scores):
            fh.write(f"{pid},{int(label)},{score:.10g}\n")


def read_predictions(path: str, model: str = "") -> PredictionSet:
    ids: list[str] = []
    labels: list[int] = []
    scores: list[float] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["patient_id", "label", "score"]:
            raise ParseError("predictions header must be patient_id,label,score", path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ids.append(row[0])
                labels.append(int(row[1]))
                scores.append(float(row[2]))
            except (IndexError, ValueError) as exc:
                raise ParseError(f"bad prediction row: {exc}", path=path, line=lineno) from exc
    return PredictionSet(ids, np.array(labels), np.array(scores), model=model)

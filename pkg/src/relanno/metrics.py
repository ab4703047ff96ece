"""Evaluation mathematics: calibration, ranking, classification, uncertainty,
gain mappings, dimension aggregation, and the F1-threshold sweep."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    pass


@dataclass
class CalibrationInput:
    confidences: Sequence[float]
    correct: Sequence[bool]

    def __post_init__(self):
        if len(self.confidences) != len(self.correct) or not self.confidences:
            raise ValueError("confidences and correct must be equal-length, nonempty")


def ece(data: CalibrationInput, bins: int = 10) -> float:
    """Expected calibration error with equal-width bins over [0,1]."""
    if bins < 1:
        raise ValueError("bins must be at least 1")
    conf = np.asarray(data.confidences, dtype=float)
    correct = np.asarray(data.correct, dtype=float)
    # Bin membership: [b/B, (b+1)/B), with 1.0 falling in the top bin.
    indices = np.minimum((conf * bins).astype(int), bins - 1)
    total = len(conf)
    out = 0.0
    for b in range(bins):
        mask = indices == b
        n_b = int(mask.sum())
        if n_b == 0:
            continue
        acc = correct[mask].mean()
        avg_conf = conf[mask].mean()
        out += (n_b / total) * abs(acc - avg_conf)
    return float(out)


def brier(data: CalibrationInput) -> float:
    conf = np.asarray(data.confidences, dtype=float)
    correct = np.asarray(data.correct, dtype=float)
    return float(np.mean((conf - correct) ** 2))


def auroc(data: CalibrationInput) -> float:
    """Mann-Whitney formulation: P(conf_correct > conf_incorrect), ties 1/2."""
    conf = np.asarray(data.confidences, dtype=float)
    correct = np.asarray(data.correct, dtype=bool)
    pos = conf[correct]
    neg = conf[~correct]
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricError("auroc needs both correct and incorrect items")
    ranks = stats.rankdata(np.concatenate([pos, neg]))
    rank_sum = ranks[:len(pos)].sum()
    u = rank_sum - len(pos) * (len(pos) + 1) / 2
    return float(u / (len(pos) * len(neg)))


def average_precision(scores: Sequence[float], positives: Sequence[bool]) -> float:
    """AP over the score-descending order, stable tie-break by input index."""
    if len(scores) != len(positives):
        raise ValueError("scores and positives must be aligned")
    n_pos = sum(positives)
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if positives[i]:
            hits += 1
            total += hits / rank
    return total / n_pos


def f1_binary(predicted_relevant: Sequence[bool], gold_relevant: Sequence[bool]) -> float:
    """F1 with relevant as the positive class; defined as 0 when P+R = 0."""
    if len(predicted_relevant) != len(gold_relevant):
        raise ValueError("predictions and gold must be aligned")
    tp = sum(1 for p, g in zip(predicted_relevant, gold_relevant) if p and g)
    fp = sum(1 for p, g in zip(predicted_relevant, gold_relevant) if p and not g)
    fn = sum(1 for p, g in zip(predicted_relevant, gold_relevant) if not p and g)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def binarize_gold(binary_label: Optional[str], partial_policy: str = "relevant") -> bool:
    """Map a three-way gold label to the binary relevant class."""
    if binary_label == "relevant":
        return True
    if binary_label == "partial":
        if partial_policy not in ("relevant", "irrelevant"):
            raise ValueError(f"unknown partial_policy: {partial_policy}")
        return partial_policy == "relevant"
    return False


RunAndGold = dict[str, tuple[dict[str, float], dict[str, float]]]
"""query_id -> (predicted doc scores, gold gains in [0,1])."""


def _predicted_order(predicted: dict[str, float]) -> list[str]:
    return sorted(predicted, key=lambda d: (-predicted[d], d))


def _dcg(gains: list[float], k: Optional[int]) -> float:
    top = gains if k is None else gains[:k]
    return sum(g / math.log2(i + 1) for i, g in enumerate(top, start=1))


def ndcg(run: RunAndGold, k: Optional[int] = None) -> float:
    """Macro-averaged nDCG@k; queries without any positive gain are skipped."""
    values = []
    for query_id, (predicted, gold) in run.items():
        if not any(g > 0 for g in gold.values()):
            log.warning("query %s has no positive gold gain; excluded from nDCG",
                        query_id)
            continue
        order = _predicted_order(predicted)
        gains = [gold.get(doc_id, 0.0) for doc_id in order]
        ideal = sorted(gold.values(), reverse=True)
        values.append(_dcg(gains, k) / _dcg(ideal, k))
    if not values:
        raise UndefinedMetricError("no query with positive gold gains")
    return float(np.mean(values))


def mean_average_precision(run: RunAndGold, k: Optional[int] = None,
                           binarize_threshold: float = 0.0) -> float:
    """Macro-averaged AP with gold binarized as gain > threshold."""
    values = []
    for query_id, (predicted, gold) in run.items():
        positives = {d for d, g in gold.items() if g > binarize_threshold}
        if not positives:
            log.warning("query %s has no positive gold gain; excluded from MAP",
                        query_id)
            continue
        order = _predicted_order(predicted)
        if k is not None:
            order = order[:k]
        hits = 0
        total = 0.0
        for rank, doc_id in enumerate(order, start=1):
            if doc_id in positives:
                hits += 1
                total += hits / rank
        denom = len(positives) if k is None else min(len(positives), k)
        values.append(total / denom)
    if not values:
        raise UndefinedMetricError("no query with positive gold gains")
    return float(np.mean(values))


def gain_mapping(label_scheme: str) -> Callable[[object], float]:
    """Label-to-gain mapping for the supported gold label schemes."""
    if label_scheme == "three_way":
        table = {"relevant": 1.0, "partial": 0.5, "irrelevant": 0.0}

        def three_way(label: object) -> float:
            if label not in table:
                raise ValueError(f"unknown three_way label: {label!r}")
            return table[label]
        return three_way
    if label_scheme == "graded_1_3":
        def graded(label: object) -> float:
            if label in (0, "0", None, "unannotated"):
                return 0.0
            if label in (1, 2, 3):
                return label / 3.0
            raise ValueError(f"unknown graded_1_3 label: {label!r}")
        return graded
    if label_scheme == "binary":
        def binary(label: object) -> float:
            return 1.0 if label == "relevant" else 0.0
        return binary
    raise ValueError(f"unknown label scheme: {label_scheme}")


def kendall_tau(rank_a: list, rank_b: list) -> float:
    """Tau-b over the positions implied by two orderings of the same id set."""
    if set(rank_a) != set(rank_b) or len(rank_a) != len(set(rank_a)):
        raise ValueError("rankings must be over the same id set without duplicates")
    if len(rank_a) < 2:
        raise ValueError("kendall_tau needs at least 2 items")
    pos_b = {doc_id: i for i, doc_id in enumerate(rank_b)}
    a_positions = list(range(len(rank_a)))
    b_positions = [pos_b[doc_id] for doc_id in rank_a]
    tau, _ = stats.kendalltau(a_positions, b_positions)
    return float(tau)


@dataclass
class MetricReport:
    unc: float
    bin: float
    cal: float
    info: float
    avg: float
    raw: dict[str, float]

    def as_dict(self) -> dict:
        return {"unc": self.unc, "bin": self.bin, "cal": self.cal,
                "info": self.info, "avg": self.avg, "raw": dict(self.raw)}

    def rounded(self) -> dict:
        out = {k: round(v, 2) for k, v in
               (("unc", self.unc), ("bin", self.bin), ("cal", self.cal),
                ("info", self.info), ("avg", self.avg))}
        out["raw"] = dict(self.raw)
        return out


REQUIRED_SUB_METRICS = ("ece", "brier", "auroc", "ndcg", "map", "f1", "ap")


def aggregate_report(sub_metrics: dict[str, float]) -> MetricReport:
    """Four-dimension score table on a 0-100 scale.

    Calibration averages AUROC with 1-ECE and 1-Brier so that higher is
    uniformly better; the overall average weighs the four dimensions equally.
    """
    missing = [name for name in REQUIRED_SUB_METRICS if name not in sub_metrics]
    if missing:
        raise ValueError(f"missing sub-metrics: {', '.join(missing)}")
    cal = 100.0 * (sub_metrics["auroc"] + (1 - sub_metrics["ece"])
                   + (1 - sub_metrics["brier"])) / 3.0
    info = 100.0 * (sub_metrics["ndcg"] + sub_metrics["map"]) / 2.0
    unc = 100.0 * sub_metrics["ap"]
    binary = 100.0 * sub_metrics["f1"]
    avg = (unc + binary + cal + info) / 4.0
    return MetricReport(unc=unc, bin=binary, cal=cal, info=info, avg=avg,
                        raw=dict(sub_metrics))


@dataclass
class SweepPoint:
    theta: float
    f1: float
    precision: float
    recall: float


def f1_threshold_sweep(
    relevance_scores: Sequence[float],
    gold_relevant: Sequence[bool],
    grid: Sequence[float],
) -> list[SweepPoint]:
    """F1/precision/recall when predicting relevant iff score >= theta."""
    if len(relevance_scores) != len(gold_relevant):
        raise ValueError("scores and gold must be aligned")
    if any(not 0.0 <= t <= 1.0 for t in grid):
        raise ValueError("grid thetas must be in [0,1]")
    points = []
    n_gold = sum(gold_relevant)
    for theta in grid:
        predicted = [s >= theta for s in relevance_scores]
        tp = sum(1 for p, g in zip(predicted, gold_relevant) if p and g)
        n_pred = sum(predicted)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_gold if n_gold else 0.0
        points.append(SweepPoint(
            theta=theta, f1=f1_binary(predicted, gold_relevant),
            precision=precision, recall=recall))
    return points

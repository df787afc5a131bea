"""Attack-success metrics: precision, recall, F1, path compromise."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .adversary import EstimationResult
from .graph import NodeId

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PaymentTruth:
    payment_id: str
    source: NodeId
    dest: NodeId
    path_nodes: tuple[NodeId, ...]
    observed_by: frozenset[NodeId]  # malicious intermediaries on the path
    status: str


GroundTruth = dict[str, PaymentTruth]


@dataclass(frozen=True)
class MetricsReport:
    estimator: str
    target: str  # "source" | "destination" | "both"
    precision: float
    recall: float
    f1: float
    classified: int
    total: int


def _true_endpoint(truth: PaymentTruth, target: str) -> NodeId:
    if target == "source":
        return truth.source
    if target == "destination":
        return truth.dest
    raise ValueError(f"unknown target {target!r}")


def _correct_count(results: list[EstimationResult], truth: GroundTruth) -> int:
    n = 0
    for r in results:
        if r.payment_id not in truth:
            raise KeyError(f"result for unknown payment {r.payment_id}")
        if r.top == _true_endpoint(truth[r.payment_id], r.target):
            n += 1
    return n


def precision(results: list[EstimationResult], truth: GroundTruth) -> float:
    """Share of classified payments whose top guess matches the truth."""
    if not results:
        log.warning("precision over zero classified payments, reporting 0")
        return 0.0
    return _correct_count(results, truth) / len(results)


def recall(results: list[EstimationResult], truth: GroundTruth) -> float:
    """Share of all payments (classified or not) guessed correctly."""
    if not truth:
        raise ValueError("recall undefined without any payments")
    return _correct_count(results, truth) / len(truth)


def f1(precision_value: float, recall_value: float) -> float:
    """Harmonic mean, 0 when both inputs are 0."""
    if precision_value + recall_value == 0:
        return 0.0
    return 2.0 * precision_value * recall_value / (precision_value + recall_value)


def report(
    estimator: str, target: str, results: list[EstimationResult], truth: GroundTruth
) -> MetricsReport:
    d = precision(results, truth)
    r = recall(results, truth)
    return MetricsReport(
        estimator=estimator,
        target=target,
        precision=d,
        recall=r,
        f1=f1(d, r),
        classified=len(results),
        total=len(truth),
    )


def compromised_share(truth: GroundTruth) -> float:
    """Fraction of routed payments with a malicious intermediary on the path."""
    if not truth:
        return 0.0
    hit = sum(1 for t in truth.values() if t.observed_by)
    return hit / len(truth)


def full_deanonymization(
    estimator: str,
    results_src: list[EstimationResult],
    results_dst: list[EstimationResult],
    truth: GroundTruth,
) -> MetricsReport:
    """Both-endpoint metrics: classified iff both legs were observed,
    correct iff both guesses match the truth."""
    if not truth:
        raise ValueError("full deanonymization undefined without payments")
    src_by_pid = {r.payment_id: r for r in results_src}
    dst_by_pid = {r.payment_id: r for r in results_dst}
    both = sorted(set(src_by_pid) & set(dst_by_pid))
    correct = 0
    for pid in both:
        t = truth[pid]
        if src_by_pid[pid].top == t.source and dst_by_pid[pid].top == t.dest:
            correct += 1
    d = correct / len(both) if both else 0.0
    if not both:
        log.warning("full deanonymization over zero classified payments")
    r = correct / len(truth)
    return MetricsReport(
        estimator=estimator,
        target="both",
        precision=d,
        recall=r,
        f1=f1(d, r),
        classified=len(both),
        total=len(truth),
    )

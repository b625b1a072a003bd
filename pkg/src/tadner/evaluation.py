"""Micro P/R/F1 over exact-match spans, run aggregation, and the error taxonomy."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class MetricsSummary:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class ErrorBreakdown:
    fp_span: int
    fp_type: int
    fn_span: int
    fn_type: int
    total_false: int


@dataclass(frozen=True)
class AggregateStats:
    mean: float
    std: float
    n: int


def _check_paired(pred_spans, gold_spans):
    if len(pred_spans) != len(gold_spans):
        raise ValueError(
            f"{len(pred_spans)} prediction sentences vs {len(gold_spans)} gold sentences"
        )


def micro_f1(pred_spans, gold_spans) -> MetricsSummary:
    """Pool TP/FP/FN over all sentences first; a TP needs start, end and type to all match.

    pred_spans and gold_spans are per-sentence span collections. With no
    predictions, precision is defined as 0.
    """
    _check_paired(pred_spans, gold_spans)
    tp = fp = fn = 0
    for pred, gold in zip(pred_spans, gold_spans):
        pred_set = {(s.start, s.end, s.entity_type) for s in pred}
        gold_set = {(s.start, s.end, s.entity_type) for s in gold}
        tp += len(pred_set & gold_set)
        fp += len(pred_set - gold_set)
        fn += len(gold_set - pred_set)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsSummary(precision, recall, f1, tp, fp, fn)


def error_breakdown(pred_spans, gold_spans) -> ErrorBreakdown:
    """Split FP/FN into boundary errors and type errors.

    A false positive whose (start, end) matches a gold span is a type error,
    and its gold counterpart is the matching false negative, so fp_type always
    equals fn_type; everything else is a span error.
    """
    _check_paired(pred_spans, gold_spans)
    fp_span = fp_type = fn_span = fn_type = 0
    for pred, gold in zip(pred_spans, gold_spans):
        pred_set = {(s.start, s.end, s.entity_type) for s in pred}
        gold_set = {(s.start, s.end, s.entity_type) for s in gold}
        gold_bounds = {(s, e) for s, e, _ in gold_set}
        pred_bounds = {(s, e) for s, e, _ in pred_set}
        for s, e, _t in pred_set - gold_set:
            if (s, e) in gold_bounds:
                fp_type += 1
            else:
                fp_span += 1
        for s, e, _t in gold_set - pred_set:
            if (s, e) in pred_bounds:
                fn_type += 1
            else:
                fn_span += 1
    total = fp_span + fp_type + fn_span + fn_type
    return ErrorBreakdown(fp_span, fp_type, fn_span, fn_type, total)


def aggregate(values) -> AggregateStats:
    """Mean and unbiased sample standard deviation (0 for a single run)."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("nothing to aggregate")
    n = len(values)
    mean = math.fsum(values) / n
    if n == 1:
        return AggregateStats(mean, 0.0, 1)
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return AggregateStats(mean, math.sqrt(var), n)

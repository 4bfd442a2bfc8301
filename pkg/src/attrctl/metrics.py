"""Automatic evaluation metrics: distinct-n, perplexity proxy, drift, bias."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import UndefinedMetricError
from .ngram import NGramModel
from .scoring import AttributeSpec, ScoreVector
from .text import tokenize


def distinct_n(tokens: Sequence[str], n: int) -> float:
    if n < 1:
        raise UndefinedMetricError("n must be >= 1")
    total = len(tokens) - n + 1
    if total < 1:
        raise UndefinedMetricError(f"{len(tokens)} tokens is too short for distinct-{n}")
    grams = {tuple(tokens[i:i + n]) for i in range(total)}
    return len(grams) / total


def ngram_perplexity(tokens: Sequence[str], model: NGramModel) -> float:
    return model.perplexity(tokens)


def drift(scores: ScoreVector, baseline: ScoreVector, target_dims: Iterable[str]) -> float:
    """Mean |change| over the non-target dimensions."""
    targets = set(target_dims)
    others = sorted(d for d in baseline.scores if d not in targets)
    if not others:
        raise UndefinedMetricError("drift needs at least one non-target dimension")
    return math.fsum(abs(scores[d] - baseline[d]) for d in others) / len(others)


def average_abs_bias(scores: ScoreVector, specs: Sequence[AttributeSpec], target_dims: Iterable[str]) -> float:
    targets = sorted(set(target_dims))
    if not targets:
        raise UndefinedMetricError("average bias needs at least one target dimension")
    by_id = {s.id: s for s in specs}
    missing = [d for d in targets if d not in by_id]
    if missing:
        raise UndefinedMetricError(f"no target value for {missing}")
    return math.fsum(abs(scores[d] - by_id[d].target) for d in targets) / len(targets)


@dataclass(frozen=True)
class MetricReport:
    distinct: Mapping[int, float]
    ppl_proxy: float | None
    drift: float | None
    avg_abs_bias: float | None

    def to_dict(self) -> dict:
        return {
            "distinct": {str(k): v for k, v in sorted(self.distinct.items())},
            "ppl_proxy": self.ppl_proxy,
            "drift": self.drift,
            "avg_abs_bias": self.avg_abs_bias,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        return cls(
            {int(k): v for k, v in d["distinct"].items()},
            d["ppl_proxy"], d["drift"], d["avg_abs_bias"],
        )


def metric_report(
    text: str,
    scores: ScoreVector,
    baseline: ScoreVector,
    specs: Sequence[AttributeSpec],
    target_dims: Iterable[str],
    distinct_ns: Sequence[int] = (1, 2, 3),
    ppl_model: NGramModel | None = None,
) -> MetricReport:
    """Compute what is defined for ``text``; undefined metrics come back as None."""
    tokens = tokenize(text)
    targets = list(target_dims)
    distinct = {}
    for n in distinct_ns:
        try:
            distinct[n] = distinct_n(tokens, n)
        except UndefinedMetricError:
            pass

    def guarded(fn, *args):
        try:
            return fn(*args)
        except UndefinedMetricError:
            return None

    ppl = guarded(ngram_perplexity, tokens, ppl_model) if ppl_model is not None else None
    return MetricReport(
        distinct,
        ppl,
        guarded(drift, scores, baseline, targets),
        guarded(average_abs_bias, scores, specs, targets),
    )

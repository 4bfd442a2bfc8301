"""Composite energy: weighted target deviations plus stability penalties.

    E(x) = sum_{i primary} alpha_i |C_i(x) - T_i|
         + sum_{j constrained} beta_j |C_j(x) - C_j(x_prev)|
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .correlation import PenaltyConfig
from .errors import ConfigurationError, ContractViolation
from .scoring import AttributeSpec, Role, ScoreVector


@dataclass(frozen=True)
class EnergyBreakdown:
    classify_term: float
    overlap_term: float
    total: float
    deviations: Mapping[str, float]
    shifts: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "classify_term": self.classify_term,
            "overlap_term": self.overlap_term,
            "total": self.total,
            "deviations": dict(self.deviations),
            "shifts": dict(self.shifts),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EnergyBreakdown":
        return cls(
            d["classify_term"], d["overlap_term"], d["total"],
            dict(d["deviations"]), dict(d.get("shifts", {})),
        )


def _score(scores: ScoreVector, dim: str) -> float:
    try:
        return scores[dim]
    except KeyError:
        raise ContractViolation(f"no score for attribute {dim!r}") from None


def classify_term(scores: ScoreVector, specs: Sequence[AttributeSpec]) -> tuple[float, dict[str, float]]:
    """Weighted |C - T| summed over primary dims; deviations kept for every active dim."""
    deviations = {}
    terms = []
    for spec in specs:
        if not spec.active:
            continue
        dev = abs(_score(scores, spec.id) - spec.target)
        deviations[spec.id] = dev
        if spec.role is Role.PRIMARY:
            terms.append(spec.alpha * dev)
    return math.fsum(terms), deviations


def overlap_penalty(
    scores: ScoreVector,
    prev_scores: ScoreVector,
    penalty: PenaltyConfig,
    constrained: Iterable[str],
) -> tuple[float, dict[str, float]]:
    shifts = {}
    terms = []
    for dim in constrained:
        if dim not in penalty.betas:
            raise ConfigurationError(f"no penalty coefficient for constrained dimension {dim!r}")
        shift = abs(_score(scores, dim) - _score(prev_scores, dim))
        shifts[dim] = shift
        terms.append(penalty.betas[dim] * shift)
    return math.fsum(terms), shifts


def total_energy(
    scores: ScoreVector,
    prev_scores: ScoreVector | None,
    specs: Sequence[AttributeSpec],
    penalty: PenaltyConfig | None,
    constrained: Iterable[str] = (),
) -> EnergyBreakdown:
    """Full energy. Without a predecessor text the overlap term is 0."""
    cls_term, deviations = classify_term(scores, specs)
    constrained = list(constrained)
    if prev_scores is None or not constrained:
        ov_term, shifts = 0.0, {}
    else:
        if penalty is None:
            raise ConfigurationError("constrained dimensions given without a penalty config")
        ov_term, shifts = overlap_penalty(scores, prev_scores, penalty, constrained)
    return EnergyBreakdown(cls_term, ov_term, cls_term + ov_term, deviations, shifts)

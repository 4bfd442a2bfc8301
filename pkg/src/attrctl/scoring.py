"""Attribute specs, score vectors and the deterministic lexicon scorers."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, runtime_checkable

from .errors import ConfigurationError, ContractViolation
from .text import tokenize


class Role(str, enum.Enum):
    PRIMARY = "primary_optimization"
    STABILITY = "stability_constrained"
    INACTIVE = "inactive"


@dataclass(frozen=True)
class AttributeSpec:
    """One control dimension.

    ``target`` is the desired classifier score, ``alpha`` its weight in the
    energy's deviation term and ``lam`` its weight in prior fusion. ``label``
    is the human-readable name used in prompts ("Joy" for ``emotion.joy``).
    """

    id: str
    target: float
    alpha: float = 1.0
    lam: float = 1.0
    role: Role = Role.PRIMARY
    label: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ContractViolation("attribute id must be non-empty")
        if not 0.0 <= self.target <= 1.0:
            raise ContractViolation(f"{self.id}: target {self.target} outside [0, 1]")
        if self.alpha < 0 or self.lam < 0:
            raise ContractViolation(f"{self.id}: alpha and lambda must be non-negative")
        object.__setattr__(self, "role", Role(self.role))

    @property
    def display(self) -> str:
        if self.label:
            return self.label
        return self.id.rsplit(".", 1)[-1].replace("_", " ").title()

    @property
    def active(self) -> bool:
        return self.role is not Role.INACTIVE


def check_unique_ids(specs) -> None:
    seen = set()
    for s in specs:
        if s.id in seen:
            raise ConfigurationError(f"duplicate attribute id {s.id!r}")
        seen.add(s.id)


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ScoreVector:
    scores: Mapping[str, float]
    text_hash: str

    def __post_init__(self):
        scores = dict(self.scores)
        for k, v in scores.items():
            if not 0.0 <= v <= 1.0:
                raise ContractViolation(f"score for {k!r} is {v}, outside [0, 1]")
        object.__setattr__(self, "scores", scores)

    def __getitem__(self, dim: str) -> float:
        return self.scores[dim]

    def __contains__(self, dim: str) -> bool:
        return dim in self.scores

    def to_dict(self) -> dict:
        return {"scores": dict(self.scores), "text_hash": self.text_hash}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreVector":
        return cls(d["scores"], d["text_hash"])


@runtime_checkable
class Scorer(Protocol):
    def __call__(self, text: str) -> float: ...


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def lexicon_score(
    text: str,
    lexicon: Mapping[str, float],
    squash_gain: float = 4.0,
    base_rate: float = 0.5,
) -> float:
    """sigmoid(logit(base_rate) + gain * matched_weight / token_count)."""
    if not lexicon:
        raise ConfigurationError("empty lexicon")
    if squash_gain <= 0:
        raise ContractViolation("squash_gain must be positive")
    tokens = tokenize(text)
    density = sum(lexicon.get(t, 0.0) for t in tokens) / len(tokens) if tokens else 0.0
    return sigmoid(logit(base_rate) + squash_gain * density)


class LexiconScorer:
    """Deterministic stand-in for a trained attribute classifier.

    Zero lexicon evidence gives ``base_rate``; positive weights push the
    score up, negative weights down. Exposes the pre-sigmoid logit so a
    fitted temperature can be applied.
    """

    def __init__(self, lexicon: Mapping[str, float], gain: float = 4.0, base_rate: float = 0.5):
        if not lexicon:
            raise ConfigurationError("empty lexicon")
        if gain <= 0:
            raise ContractViolation("gain must be positive")
        if not 0.0 < base_rate < 1.0:
            raise ContractViolation("base_rate must lie in (0, 1)")
        self.lexicon = {k.lower(): float(v) for k, v in lexicon.items()}
        self.gain = float(gain)
        self.base_rate = float(base_rate)

    def logit(self, text: str) -> float:
        tokens = tokenize(text)
        density = sum(self.lexicon.get(t, 0.0) for t in tokens) / len(tokens) if tokens else 0.0
        return logit(self.base_rate) + self.gain * density

    def __call__(self, text: str) -> float:
        return lexicon_score(text, self.lexicon, self.gain, self.base_rate)

    def matches(self, text: str) -> int:
        return sum(1 for t in tokenize(text) if t in self.lexicon)


class CalibratedScorer:
    """Applies a fitted temperature to a scorer's logit."""

    def __init__(self, scorer, temperature: float):
        if not hasattr(scorer, "logit"):
            raise ConfigurationError("calibration needs a scorer that exposes logits")
        if temperature <= 0:
            raise ContractViolation("temperature must be positive")
        self.scorer = scorer
        self.temperature = temperature

    def logit(self, text: str) -> float:
        return self.scorer.logit(text) / self.temperature

    def __call__(self, text: str) -> float:
        return sigmoid(self.logit(text))


def load_lexicon(path: str | Path) -> dict[str, float]:
    """Read a ``term<TAB>weight`` file. Blank lines and ``#`` comments are skipped."""
    lexicon: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigurationError(f"{path}:{lineno}: expected 'term<TAB>weight'")
            try:
                lexicon[parts[0].strip().lower()] = float(parts[1])
            except ValueError:
                raise ConfigurationError(f"{path}:{lineno}: bad weight {parts[1]!r}") from None
    if not lexicon:
        raise ConfigurationError(f"{path}: empty lexicon")
    return lexicon


def score_all(text: str, scorers: Mapping[str, Scorer], dims=None) -> ScoreVector:
    """Score ``text`` on every dimension in ``dims`` (default: all scorers)."""
    dims = list(scorers) if dims is None else list(dims)
    scores = {}
    for dim in dims:
        scorer = scorers.get(dim)
        if scorer is None:
            raise ConfigurationError(f"no scorer registered for attribute {dim!r}")
        value = float(scorer(text))
        if not 0.0 <= value <= 1.0:
            raise ContractViolation(f"scorer for {dim!r} returned {value}")
        scores[dim] = value
    return ScoreVector(scores, text_digest(text))

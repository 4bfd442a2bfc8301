"""Post-hoc temperature scaling, expected calibration error, anchor selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation, IllPosedError

T_MIN, T_MAX = 0.05, 20.0
DEFAULT_BINS = 10
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class CalibrationParams:
    temperature: float
    fitted_on: int
    ece_before: float
    ece_after: float

    def __post_init__(self):
        if not self.temperature > 0:
            raise ContractViolation("temperature must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def expected_calibration_error(probs, labels, bins: int = DEFAULT_BINS) -> float:
    """Equal-width binned ECE on [0, 1]; empty bins contribute nothing."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ContractViolation(f"{probs.size} probabilities but {labels.size} labels")
    if bins < 1:
        raise ContractViolation("bins must be >= 1")
    if probs.size == 0:
        raise ContractViolation("empty input")
    if np.any((probs < 0) | (probs > 1)):
        raise ContractViolation("probabilities must lie in [0, 1]")
    n = probs.size
    idx = np.minimum((probs * bins).astype(np.int64), bins - 1)
    terms = []
    for b in range(bins):
        mask = idx == b
        nb = int(mask.sum())
        if nb == 0:
            continue
        acc = math.fsum(labels[mask]) / nb
        conf = math.fsum(probs[mask]) / nb
        terms.append((nb / n) * abs(acc - conf))
    return math.fsum(terms)


def _nll(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    z = logits / temperature
    # -log sigmoid(z) for y=1, -log(1 - sigmoid(z)) for y=0
    per = np.logaddexp(0.0, z) - labels * z
    return math.fsum(per)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def fit_temperature(
    logits: Sequence[float],
    labels: Sequence[int],
    bins: int = DEFAULT_BINS,
    tol: float = 1e-10,
) -> CalibrationParams:
    """Golden-section search for the NLL-minimizing temperature on [0.05, 20].

    The NLL is summed with ``math.fsum`` so the result does not depend on
    sample order.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape or z.ndim != 1:
        raise ContractViolation("logits and labels must be equal-length 1-d sequences")
    if z.size < 10:
        raise ContractViolation("need at least 10 samples to fit a temperature")
    if not np.all((y == 0) | (y == 1)):
        raise ContractViolation("labels must be 0 or 1")
    if y.min() == y.max():
        raise IllPosedError("temperature fitting needs both label classes")

    lo, hi = T_MIN, T_MAX
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = _nll(z, y, c), _nll(z, y, d)
    while hi - lo > tol * max(1.0, lo):
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = _nll(z, y, c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = _nll(z, y, d)
    temperature = (lo + hi) / 2.0

    return CalibrationParams(
        temperature=temperature,
        fitted_on=int(z.size),
        ece_before=expected_calibration_error(_sigmoid(z), y, bins),
        ece_after=expected_calibration_error(_sigmoid(z / temperature), y, bins),
    )


@dataclass(frozen=True)
class AttributeDescriptor:
    id: str
    embedding: tuple[float, ...]

    def __post_init__(self):
        emb = tuple(float(x) for x in self.embedding)
        norm = math.sqrt(math.fsum(x * x for x in emb))
        if abs(norm - 1.0) > 1e-6:
            raise ContractViolation(f"{self.id}: embedding norm {norm} is not 1")
        object.__setattr__(self, "embedding", emb)


def select_anchor(new_attr: AttributeDescriptor, stock: Sequence[AttributeDescriptor]) -> str:
    """Id of the stock descriptor with the highest cosine similarity.

    Ties go to the lexicographically smallest id.
    """
    if not stock:
        raise ConfigurationError("anchor selection needs a non-empty stock")
    query = np.asarray(new_attr.embedding)
    best_id, best_sim = None, -math.inf
    for desc in stock:
        if len(desc.embedding) != query.size:
            raise ContractViolation(f"{desc.id}: embedding dimension mismatch")
        sim = float(np.dot(query, desc.embedding))
        if sim > best_sim or (sim == best_sim and desc.id < best_id):
            best_id, best_sim = desc.id, sim
    return best_id

"""Pearson correlations between attribute dimensions and stability-penalty weights."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation, InsufficientDataError

DEFAULT_C = 0.3
C_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))


@dataclass(frozen=True)
class ScoreSampleMatrix:
    dims: tuple[str, ...]
    rows: np.ndarray  # shape (n_texts, n_dims)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        dims = tuple(self.dims)
        if rows.ndim != 2 or rows.shape[1] != len(dims):
            raise ContractViolation(f"rows must have shape (n, {len(dims)})")
        if len(set(dims)) != len(dims):
            raise ContractViolation("duplicate dimension ids")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def from_score_vectors(cls, vectors, dims: Sequence[str]) -> "ScoreSampleMatrix":
        rows = []
        for v in vectors:
            if set(v.scores) != set(dims):
                raise ContractViolation("score vector does not cover exactly the configured dims")
            rows.append([v.scores[d] for d in dims])
        return cls(tuple(dims), np.array(rows, dtype=np.float64).reshape(len(rows), len(dims)))


@dataclass(frozen=True)
class CorrelationMatrix:
    dims: tuple[str, ...]
    rho: np.ndarray
    degenerate: tuple[str, ...] = ()

    def __post_init__(self):
        rho = np.array(self.rho, dtype=np.float64)
        n = len(self.dims)
        if rho.shape != (n, n):
            raise ContractViolation(f"rho must be {n}x{n}")
        if not np.array_equal(rho, rho.T):
            raise ContractViolation("correlation matrix must be symmetric")
        if np.any(np.abs(rho) > 1.0):
            raise ContractViolation("correlations must lie in [-1, 1]")
        rho.setflags(write=False)
        object.__setattr__(self, "dims", tuple(self.dims))
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "degenerate", tuple(self.degenerate))

    def index(self, dim: str) -> int:
        try:
            return self.dims.index(dim)
        except ValueError:
            raise ConfigurationError(f"dimension {dim!r} not in correlation matrix") from None

    def get(self, a: str, b: str) -> float:
        return float(self.rho[self.index(a), self.index(b)])

    @classmethod
    def identity(cls, dims: Sequence[str]) -> "CorrelationMatrix":
        return cls(tuple(dims), np.eye(len(dims)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dim", *self.dims])
        for d, row in zip(self.dims, self.rho):
            w.writerow([d, *(repr(float(x)) for x in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CorrelationMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ConfigurationError("empty correlation CSV")
        dims = tuple(rows[0][1:])
        body = rows[1:]
        if [r[0] for r in body] != list(dims):
            raise ConfigurationError("correlation CSV row labels must match the header")
        rho = np.array([[float(x) for x in r[1:]] for r in body])
        return cls(dims, rho)

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "rho": self.rho.tolist(), "degenerate": list(self.degenerate)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorrelationMatrix":
        return cls(tuple(d["dims"]), np.array(d["rho"], dtype=np.float64), tuple(d.get("degenerate", ())))


def pearson_matrix(samples: ScoreSampleMatrix) -> CorrelationMatrix:
    """Pairwise Pearson correlations.

    Zero-variance columns get rho = 0 against every other column (1 on the
    diagonal) and are listed in ``degenerate``.
    """
    x = samples.rows
    n, d = x.shape
    if n < 3:
        raise InsufficientDataError(f"need at least 3 score rows, got {n}")
    centered = x - x.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", centered, centered))
    degenerate = norms == 0.0
    rho = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            if degenerate[i] or degenerate[j]:
                r = 0.0
            else:
                r = float(np.dot(centered[:, i], centered[:, j]) / (norms[i] * norms[j]))
                r = min(1.0, max(-1.0, r))
            rho[i, j] = rho[j, i] = r
    flagged = tuple(dim for dim, bad in zip(samples.dims, degenerate) if bad)
    return CorrelationMatrix(samples.dims, rho, flagged)


@dataclass(frozen=True)
class PenaltyConfig:
    """Stability-penalty weights for one optimization focus.

    ``target_dims`` are the dimensions being optimized; ``betas`` cover the
    others. ``fallback`` marks a focus whose correlation row was all zero.
    """

    c: float
    betas: Mapping[str, float]
    target_dims: tuple[str, ...]
    fallback: bool = False

    def __post_init__(self):
        if not self.c > 0:
            raise ContractViolation("c must be positive")
        betas = dict(self.betas)
        for dim in self.target_dims:
            if dim in betas:
                raise ContractViolation(f"betas must exclude target dimension {dim!r}")
        for dim, b in betas.items():
            if not 0.0 <= b <= self.c + 1e-15:
                raise ContractViolation(f"beta for {dim!r} = {b} outside [0, c]")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "target_dims", tuple(self.target_dims))

    @property
    def target_dim(self) -> str:
        return self.target_dims[0]

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "betas": dict(self.betas),
            "target_dims": list(self.target_dims),
            "fallback": self.fallback,
        }


def _normalized_row(matrix: CorrelationMatrix, target: str) -> dict[str, float] | None:
    i = matrix.index(target)
    row = {d: abs(float(matrix.rho[i, j])) for j, d in enumerate(matrix.dims) if j != i}
    peak = max(row.values(), default=0.0)
    if peak == 0.0:
        return None
    return {d: v / peak for d, v in row.items()}


def derive_betas(matrix: CorrelationMatrix, target_dim: str, c: float = DEFAULT_C) -> PenaltyConfig:
    """beta_j = c * |rho_ij| / max_{u != i} |rho_iu| for every j != target.

    If the target's off-diagonal row is all zero the formula is undefined;
    every beta is then c/2 and the result is flagged as a fallback.
    """
    if not c > 0:
        raise ContractViolation("c must be positive")
    norm = _normalized_row(matrix, target_dim)
    if norm is None:
        others = [d for d in matrix.dims if d != target_dim]
        return PenaltyConfig(c, {d: c / 2.0 for d in others}, (target_dim,), fallback=True)
    return PenaltyConfig(c, {d: c * v for d, v in norm.items()}, (target_dim,))


def derive_stage_betas(
    matrix: CorrelationMatrix,
    primaries: Sequence[str],
    c: float = DEFAULT_C,
    constrained: Iterable[str] | None = None,
) -> PenaltyConfig:
    """Betas when several dimensions are optimized together.

    Each constrained dimension takes the strongest normalized coupling over
    the primaries: beta_j = c * max_i |rho_ij| / max_u |rho_iu|.
    """
    if not primaries:
        raise ContractViolation("at least one primary dimension required")
    primary_set = set(primaries)
    targets = [d for d in (constrained if constrained is not None else matrix.dims) if d not in primary_set]
    for d in targets:
        matrix.index(d)
    betas = {d: 0.0 for d in targets}
    fallback = False
    for p in primaries:
        norm = _normalized_row(matrix, p)
        if norm is None:
            fallback = True
        for d in targets:
            v = c / 2.0 if norm is None else c * norm[d]
            betas[d] = max(betas[d], v)
    return PenaltyConfig(c, betas, tuple(primaries), fallback)


def read_score_csv(path: str | Path) -> ScoreSampleMatrix:
    """Header row of attribute ids, one row of scores per corpus text."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigurationError(f"{path}: empty score CSV")
    dims = tuple(h.strip() for h in rows[0])
    try:
        data = [[float(x) for x in r] for r in rows[1:] if r]
    except ValueError as exc:
        raise ConfigurationError(f"{path}: non-numeric score ({exc})") from None
    if any(len(r) != len(dims) for r in data):
        raise ConfigurationError(f"{path}: ragged rows")
    return ScoreSampleMatrix(dims, np.array(data, dtype=np.float64).reshape(len(data), len(dims)))

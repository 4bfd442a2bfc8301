"""Run report: the persisted record of one optimization run."""

from __future__ import annotations

import enum
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .energy import EnergyBreakdown
from .metrics import MetricReport
from .scoring import ScoreVector

SCHEMA_VERSION = 1


class Status(str, enum.Enum):
    CONVERGED = "converged"
    EARLY_STOPPED = "early_stopped"
    EXHAUSTED = "exhausted"
    BACKEND_FAILURE = "backend_failure"

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self]


EXIT_CODES = {
    Status.CONVERGED: 0,
    Status.EARLY_STOPPED: 0,
    Status.EXHAUSTED: 2,
    Status.BACKEND_FAILURE: 3,
}
EXIT_CONFIG_ERROR = 1


@dataclass(frozen=True)
class PromptRecord:
    stage: str
    iteration: int
    directives: tuple[dict, ...]
    rendered: str

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "iteration": self.iteration,
            "directives": [dict(d) for d in self.directives],
            "rendered": self.rendered,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PromptRecord":
        return cls(d["stage"], d["iteration"], tuple(dict(x) for x in d["directives"]), d["rendered"])


@dataclass(frozen=True)
class AttemptRecord:
    stage: str
    iteration: int
    attempt: int
    seed: int
    accepted: bool
    energy: float | None
    cause: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttemptRecord":
        return cls(**d)


@dataclass(frozen=True)
class RunReport:
    status: Status
    initial_text: str
    final_text: str
    energy_trajectory: tuple[EnergyBreakdown, ...]
    accepted_scores: tuple[ScoreVector, ...]
    prompts: tuple[PromptRecord, ...]
    decisions: tuple[AttemptRecord, ...]
    final_scores: ScoreVector
    seed: int
    flags: Mapping[str, Any] = field(default_factory=dict)
    metric_report: MetricReport | None = None
    config: Mapping[str, Any] | None = None
    schema_version: int = SCHEMA_VERSION

    @property
    def accepted_rewrites(self) -> int:
        return len(self.energy_trajectory) - 1

    @property
    def attempts(self) -> int:
        return len(self.decisions)

    @property
    def final_energy(self) -> float:
        return self.energy_trajectory[-1].total

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "status": self.status.value,
            "seed": self.seed,
            "initial_text": self.initial_text,
            "final_text": self.final_text,
            "energy_trajectory": [b.to_dict() for b in self.energy_trajectory],
            "accepted_scores": [s.to_dict() for s in self.accepted_scores],
            "prompts": [p.to_dict() for p in self.prompts],
            "decisions": [d.to_dict() for d in self.decisions],
            "final_scores": self.final_scores.to_dict(),
            "flags": json.loads(json.dumps(self.flags)),
            "metric_report": self.metric_report.to_dict() if self.metric_report else None,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema_version {d.get('schema_version')!r}")
        return cls(
            status=Status(d["status"]),
            initial_text=d["initial_text"],
            final_text=d["final_text"],
            energy_trajectory=tuple(EnergyBreakdown.from_dict(b) for b in d["energy_trajectory"]),
            accepted_scores=tuple(ScoreVector.from_dict(s) for s in d["accepted_scores"]),
            prompts=tuple(PromptRecord.from_dict(p) for p in d["prompts"]),
            decisions=tuple(AttemptRecord.from_dict(x) for x in d["decisions"]),
            final_scores=ScoreVector.from_dict(d["final_scores"]),
            seed=d["seed"],
            flags=d.get("flags", {}),
            metric_report=MetricReport.from_dict(d["metric_report"]) if d.get("metric_report") else None,
            config=d.get("config"),
            schema_version=d["schema_version"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))


def write_atomic(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

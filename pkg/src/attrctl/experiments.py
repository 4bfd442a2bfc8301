"""Experiment harness: single runs, the tau sweep, the c grid and the
conflict/overlap comparison against a one-shot rewrite."""

from __future__ import annotations

import csv
import io
import logging
import math
import statistics
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .config import RunConfig, read_corpus
from .correlation import C_GRID
from .energy import total_energy
from .errors import BackendError, UndefinedMetricError, ValidationError
from .metrics import MetricReport, average_abs_bias, drift, metric_report
from .optimizer import (
    OptimizationState,
    build_prompt,
    attempt_seed,
    default_stage,
    deviation_queue,
    primary_dims,
    run_optimization,
)
from .prompts import Stage
from .report import RunReport
from .scoring import score_all

log = logging.getLogger(__name__)

TAU_GRID = (0.10, 0.08, 0.06, 0.05, 0.04, 0.035, 0.030, 0.028, 0.026, 0.025, 0.024, 0.022, 0.020)
DEFAULT_TAU = 0.025
SCENARIOS = ("conflict", "overlap")


def load_corpus(path: str | Path) -> list[str]:
    """Read one text per line, warning about skipped blank lines."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    blanks = sum(1 for line in lines if not line.strip())
    if blanks:
        log.warning("%s: skipped %d blank line(s)", path, blanks)
    texts = read_corpus(path)
    if not texts:
        raise ValidationError(f"corpus {path} contains no texts")
    return texts


def text_seed(base: int, index: int) -> int:
    return base + index


def _with_seed(cfg: RunConfig, seed: int):
    return replace(cfg.optimization, seed=seed)


def target_dims(cfg: RunConfig) -> list[str]:
    return list(cfg.target_dims) or primary_dims(cfg.attributes)


def run_one(text: str, cfg: RunConfig, seed: int | None = None, rewriter=None) -> RunReport:
    """One full optimization run with metrics and the config echo attached."""
    opt = cfg.optimization if seed is None else _with_seed(cfg, seed)
    rewriter = rewriter or cfg.rewriter()
    report = run_optimization(
        text, opt, rewriter, cfg.scorers, cfg.attributes,
        matrix=cfg.matrix, c=cfg.c, templates=cfg.templates,
    )
    metrics = metric_report(
        report.final_text, report.final_scores, report.accepted_scores[0], cfg.attributes,
        target_dims(cfg), cfg.distinct_ns, cfg.ppl_model,
    )
    echo = cfg.echo()
    echo.setdefault("optimization", {})["seed"] = opt.seed
    return replace(report, metric_report=metrics, config=echo)


# -- one-shot baseline -------------------------------------------------------

@dataclass(frozen=True)
class OneShotResult:
    text: str
    scores: object
    directives: tuple
    failed: bool = False


def one_shot(text: str, cfg: RunConfig, seed: int, rewriter=None) -> OneShotResult:
    """A single core-calibration prompt and one rewrite, taken as-is.

    Uses the same seed derivation as the loop's first attempt, so the two
    arms start from the identical first candidate.
    """
    rewriter = rewriter or cfg.rewriter()
    dims = cfg.dims
    scores0 = score_all(text, cfg.scorers, dims)
    b0 = total_energy(scores0, None, cfg.attributes, None)
    state = OptimizationState(text, scores0, None, [b0], text, b0.total)
    opt = _with_seed(cfg, seed)
    stage = default_stage(Stage.CORE_CALIBRATION, state, cfg.attributes, opt, [])
    if stage is None:
        return OneShotResult(text, scores0, ())
    queue = deviation_queue(b0, cfg.attributes)
    prompt = build_prompt(state, stage, queue, cfg.attributes, cfg.templates, opt.thresholds)
    try:
        out = rewriter.rewrite(prompt, attempt_seed(seed, 0, 1, 1))
    except BackendError as exc:
        log.warning("one-shot rewrite failed: %s", exc)
        return OneShotResult(text, scores0, prompt.directives, failed=True)
    if not out.strip():
        return OneShotResult(text, scores0, prompt.directives, failed=True)
    return OneShotResult(out, score_all(out, cfg.scorers, dims), prompt.directives)


# -- conflict / overlap ------------------------------------------------------

@dataclass(frozen=True)
class ArmMetrics:
    avg_abs_bias: float
    drift: float
    ppl_proxy: float | None

    def to_dict(self) -> dict:
        return {"avg_abs_bias": self.avg_abs_bias, "drift": self.drift, "ppl_proxy": self.ppl_proxy}


def _arm_metrics(text, scores, baseline, cfg: RunConfig, targets) -> ArmMetrics:
    report: MetricReport = metric_report(text, scores, baseline, cfg.attributes, targets, (), cfg.ppl_model)
    return ArmMetrics(
        average_abs_bias(scores, cfg.attributes, targets),
        drift(scores, baseline, targets),
        report.ppl_proxy,
    )


@dataclass(frozen=True)
class ConflictRow:
    index: int
    loop: ArmMetrics
    one_shot: ArmMetrics
    loop_status: str
    loop_rewrites: int

    @property
    def loop_wins(self) -> bool:
        return (self.loop.avg_abs_bias < self.one_shot.avg_abs_bias
                and self.loop.drift < self.one_shot.drift)


@dataclass(frozen=True)
class ConflictSummary:
    scenario: str
    rows: tuple[ConflictRow, ...]

    @property
    def win_rate(self) -> float:
        return sum(r.loop_wins for r in self.rows) / len(self.rows)

    def means(self, arm: str) -> dict:
        out = {}
        for key in ("avg_abs_bias", "drift", "ppl_proxy"):
            values = [getattr(getattr(r, arm), key) for r in self.rows]
            values = [v for v in values if v is not None]
            out[key] = math.fsum(values) / len(values) if values else None
        return out

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "texts": len(self.rows),
            "loop": self.means("loop"),
            "one_shot": self.means("one_shot"),
            "loop_strictly_better_fraction": self.win_rate,
            "per_text": [
                {
                    "index": r.index,
                    "loop": r.loop.to_dict(),
                    "one_shot": r.one_shot.to_dict(),
                    "loop_status": r.loop_status,
                    "loop_rewrites": r.loop_rewrites,
                }
                for r in self.rows
            ],
        }


def conflict_experiment(cfg: RunConfig, texts: Sequence[str], scenario: str) -> ConflictSummary:
    """Compare the full loop against the one-shot arm on every text.

    Bias is measured on the scenario's target pair; drift on every other
    active dimension, relative to the draft's scores.
    """
    if scenario not in SCENARIOS:
        raise ValidationError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if not texts:
        raise ValidationError("empty corpus")
    if not cfg.target_dims:
        raise ValidationError("the conflict experiment needs metrics.target_dims")
    targets = list(cfg.target_dims)
    rewriter = cfg.rewriter()
    rows = []
    for i, text in enumerate(texts):
        seed = text_seed(cfg.optimization.seed, i)
        report = run_optimization(
            text, _with_seed(cfg, seed), rewriter, cfg.scorers, cfg.attributes,
            matrix=cfg.matrix, c=cfg.c, templates=cfg.templates,
        )
        baseline = report.accepted_scores[0]
        shot = one_shot(text, cfg, seed, rewriter)
        rows.append(ConflictRow(
            i,
            _arm_metrics(report.final_text, report.final_scores, baseline, cfg, targets),
            _arm_metrics(shot.text, shot.scores, baseline, cfg, targets),
            report.status.value,
            report.accepted_rewrites,
        ))
    return ConflictSummary(scenario, tuple(rows))


# -- sweeps ------------------------------------------------------------------

SWEEP_FIELDS = ("tau", "mean_final_bias", "mean_accepted_iterations", "mean_attempts", "is_default")


def sweep_tau(cfg: RunConfig, texts: Sequence[str], taus: Sequence[float] = TAU_GRID) -> list[dict]:
    """Mean final bias, accepted rewrites and attempts per tau value."""
    taus = list(taus)
    if len(taus) < 2:
        raise ValidationError("a tau sweep needs at least two values")
    if not texts:
        raise ValidationError("empty corpus")
    targets = target_dims(cfg)
    rewriter = cfg.rewriter()
    rows = []
    for tau in taus:
        bias, iters, attempts = [], [], []
        for i, text in enumerate(texts):
            opt = replace(cfg.optimization, tau=tau, seed=text_seed(cfg.optimization.seed, i))
            report = run_optimization(
                text, opt, rewriter, cfg.scorers, cfg.attributes,
                matrix=cfg.matrix, c=cfg.c, templates=cfg.templates,
            )
            bias.append(average_abs_bias(report.final_scores, cfg.attributes, targets))
            iters.append(report.accepted_rewrites)
            attempts.append(report.attempts)
        rows.append({
            "tau": tau,
            "mean_final_bias": math.fsum(bias) / len(bias),
            "mean_accepted_iterations": statistics.fmean(iters),
            "mean_attempts": statistics.fmean(attempts),
            "is_default": math.isclose(tau, DEFAULT_TAU),
        })
    return rows


C_SWEEP_FIELDS = ("c", "mean_final_energy", "mean_final_bias", "mean_drift", "is_best")


def sweep_c(cfg: RunConfig, texts: Sequence[str], grid: Sequence[float] = C_GRID) -> list[dict]:
    """Grid search over the penalty scale; the best row minimizes mean bias + drift."""
    if not texts:
        raise ValidationError("empty corpus")
    targets = target_dims(cfg)
    rewriter = cfg.rewriter()
    rows = []
    for c in grid:
        energy, bias, drifts = [], [], []
        for i, text in enumerate(texts):
            report = run_optimization(
                text, _with_seed(cfg, text_seed(cfg.optimization.seed, i)), rewriter,
                cfg.scorers, cfg.attributes, matrix=cfg.matrix, c=c, templates=cfg.templates,
            )
            energy.append(report.final_energy)
            bias.append(average_abs_bias(report.final_scores, cfg.attributes, targets))
            try:
                drifts.append(drift(report.final_scores, report.accepted_scores[0], targets))
            except UndefinedMetricError:
                pass
        rows.append({
            "c": c,
            "mean_final_energy": math.fsum(energy) / len(energy),
            "mean_final_bias": math.fsum(bias) / len(bias),
            "mean_drift": math.fsum(drifts) / len(drifts) if drifts else None,
            "is_best": False,
        })
    best = min(rows, key=lambda r: (r["mean_final_bias"] + (r["mean_drift"] or 0.0), r["c"]))
    best["is_best"] = True
    return rows


def rows_to_csv(rows: Sequence[dict], fields: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()

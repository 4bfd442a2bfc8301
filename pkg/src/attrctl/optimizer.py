"""Three-stage, feedback-driven refinement loop.

Each stage repeatedly asks the rewriter for a candidate and keeps it only if
it strictly lowers the energy, so the accepted energies form a strictly
decreasing sequence bounded below by zero.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .correlation import DEFAULT_C, CorrelationMatrix, PenaltyConfig, derive_stage_betas
from .energy import EnergyBreakdown, total_energy
from .errors import BackendError, ConfigurationError, ContractViolation
from .prompts import (
    STAGE_ORDER,
    Direction,
    Intensity,
    PromptThresholds,
    RewriteDirective,
    RewritePrompt,
    Stage,
    load_templates,
    render_attributes,
    render_directives,
    render_template,
)
from .report import AttemptRecord, PromptRecord, RunReport, Status
from .scoring import AttributeSpec, Role, ScoreVector, check_unique_ids, score_all

log = logging.getLogger(__name__)

CONTINUE = "continue"


@dataclass(frozen=True)
class StageSpec:
    stage: Stage
    primary_dims: tuple[str, ...]
    constrained_dims: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "primary_dims", tuple(self.primary_dims))
        object.__setattr__(self, "constrained_dims", tuple(self.constrained_dims))
        if set(self.primary_dims) & set(self.constrained_dims):
            raise ContractViolation(f"{self.stage.value}: primary and constrained dims overlap")

    def to_dict(self) -> dict:
        return {
            "stage": self.stage.value,
            "primary_dims": list(self.primary_dims),
            "constrained_dims": list(self.constrained_dims),
        }


@dataclass(frozen=True)
class OptimizationConfig:
    tau: float = 0.025
    max_iterations: int = 3
    attempts_per_iteration: int = 4
    early_stop_consecutive: int = 2
    early_stop_tau: float | None = None
    stage_plan: tuple[StageSpec, ...] | None = None
    seed: int = 0
    thresholds: PromptThresholds = PromptThresholds()
    core_width: int = 2

    def __post_init__(self):
        if not self.tau > 0:
            raise ContractViolation("tau must be positive")
        if self.max_iterations < 1 or self.attempts_per_iteration < 1:
            raise ContractViolation("max_iterations and attempts_per_iteration must be >= 1")
        if self.early_stop_consecutive < 1:
            raise ContractViolation("early_stop_consecutive must be >= 1")
        if self.stage_plan is not None:
            object.__setattr__(self, "stage_plan", tuple(self.stage_plan))

    @property
    def stop_tau(self) -> float:
        return self.tau if self.early_stop_tau is None else self.early_stop_tau


@dataclass
class OptimizationState:
    current_text: str
    current_scores: ScoreVector
    prev_scores: ScoreVector | None
    energy_trajectory: list[EnergyBreakdown]
    best_text: str
    best_energy: float
    iteration: int = 0
    stage_index: int = 0
    attempt_counter: int = 0
    early_stop_streak: int = 0
    plan_finished: bool = False

    @property
    def current_energy(self) -> float:
        return self.energy_trajectory[-1].total


@dataclass(frozen=True)
class EnergyContext:
    """Everything needed to score a candidate within one stage."""

    specs: tuple[AttributeSpec, ...]
    penalty: PenaltyConfig | None
    constrained: tuple[str, ...]

    def evaluate(self, scores: ScoreVector, prev: ScoreVector | None) -> EnergyBreakdown:
        return total_energy(scores, prev, self.specs, self.penalty, self.constrained)


def active_dims(specs: Sequence[AttributeSpec]) -> list[str]:
    return [s.id for s in specs if s.active]


def primary_dims(specs: Sequence[AttributeSpec]) -> list[str]:
    return [s.id for s in specs if s.role is Role.PRIMARY]


def deviation_queue(breakdown: EnergyBreakdown, specs: Sequence[AttributeSpec]) -> list[str]:
    """Primary dims by alpha * deviation, largest first.

    Equal nonzero weighted deviations are ordered by id; dims with zero
    weighted deviation need no correction and keep their config order at the
    back of the queue.
    """
    weighted = []
    idle = []
    for spec in specs:
        if spec.role is not Role.PRIMARY:
            continue
        w = spec.alpha * breakdown.deviations.get(spec.id, 0.0)
        (weighted if w > 0 else idle).append((w, spec.id))
    weighted.sort(key=lambda item: (-item[0], item[1]))
    return [d for _, d in weighted] + [d for _, d in idle]


def directive_for(spec: AttributeSpec, score: float, thresholds: PromptThresholds) -> RewriteDirective:
    dev = abs(score - spec.target)
    if score == spec.target:
        return RewriteDirective(spec.id, Direction.MAINTAIN, label=spec.display)
    direction = Direction.INCREASE if score < spec.target else Direction.DECREASE
    intensity = Intensity.SIGNIFICANT if dev >= thresholds.significant else Intensity.SLIGHT
    return RewriteDirective(spec.id, direction, intensity, label=spec.display)


def build_prompt(
    state: OptimizationState,
    stage: StageSpec,
    queue: Sequence[str],
    specs: Sequence[AttributeSpec],
    templates: Mapping[Stage, str] | None = None,
    thresholds: PromptThresholds = PromptThresholds(),
) -> RewritePrompt:
    if not queue and stage.stage is not Stage.GLOBAL_FINETUNE:
        raise ContractViolation("empty correction queue outside the global stage")
    templates = templates or load_templates()
    by_id = {s.id: s for s in specs}
    scores = state.current_scores
    focus = [d for d in queue if d in stage.primary_dims]

    settled: list[str] = []
    if stage.stage is Stage.GLOBAL_FINETUNE:
        settled = [d for d in focus if abs(scores[d] - by_id[d].target) <= thresholds.residual]
        focus = [d for d in focus if d not in settled]
    directives = [directive_for(by_id[d], scores[d], thresholds) for d in focus]
    # dims already within the residual band are named as ones to keep
    directives += [RewriteDirective(d, Direction.MAINTAIN, label=by_id[d].display) for d in settled]

    if stage.stage is Stage.BALANCING:
        shifts = state.energy_trajectory[-1].shifts
        for d in stage.constrained_dims:
            if shifts.get(d, 0.0) > thresholds.maintain_shift:
                directives.append(RewriteDirective(d, Direction.MAINTAIN, label=by_id[d].display))

    rendered = render_template(
        templates[stage.stage],
        source_text=state.current_text,
        directives=render_directives(directives),
        attributes=render_attributes(specs),
    )
    return RewritePrompt(stage.stage, tuple(directives), state.current_text, rendered)


def attempt_seed(base: int, stage_index: int, iteration: int, attempt: int) -> int:
    digest = hashlib.sha256(f"{base}:{stage_index}:{iteration}:{attempt}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def propose_and_evaluate(
    state: OptimizationState,
    prompt: RewritePrompt,
    rewriter,
    scorers,
    ctx: EnergyContext,
    seed: int,
) -> tuple[AttemptRecord, EnergyBreakdown | None]:
    """One rewrite attempt; the candidate replaces the current text iff its energy is lower."""
    stage = prompt.template_id.value

    def rejected(cause, energy=None):
        state.attempt_counter += 1
        return AttemptRecord(stage, state.iteration, state.attempt_counter, seed, False, energy, cause), None

    try:
        candidate = rewriter.rewrite(prompt, seed)
    except BackendError as exc:
        log.info("rewrite failed: %s", exc)
        return rejected(f"backend_error: {exc.__class__.__name__}: {exc}")
    if not candidate or not candidate.strip():
        return rejected("empty_output")
    if candidate == state.current_text:
        return rejected("unchanged")

    scores = score_all(candidate, scorers, state.current_scores.scores.keys())
    breakdown = ctx.evaluate(scores, state.current_scores)
    if breakdown.total < state.best_energy:
        state.best_text, state.best_energy = candidate, breakdown.total
    if not breakdown.total < state.current_energy:
        return rejected("energy_not_lower", breakdown.total)

    state.attempt_counter += 1
    record = AttemptRecord(stage, state.iteration, state.attempt_counter, seed, True, breakdown.total, "accepted")
    state.prev_scores = state.current_scores
    state.current_text, state.current_scores = candidate, scores
    state.energy_trajectory.append(breakdown)
    return record, breakdown


def check_termination(state: OptimizationState, config: OptimizationConfig) -> str:
    """converged > early_stopped > exhausted > continue."""
    traj = state.energy_trajectory
    if len(traj) >= 2:
        latest, before = traj[-1].total, traj[-2].total
        if latest - before < 0 and latest <= config.tau:
            return Status.CONVERGED.value
        if state.early_stop_streak >= config.early_stop_consecutive:
            return Status.EARLY_STOPPED.value
    if state.plan_finished:
        return Status.EXHAUSTED.value
    return CONTINUE


def _update_streak(state: OptimizationState, config: OptimizationConfig) -> None:
    before, latest = state.energy_trajectory[-2].total, state.energy_trajectory[-1].total
    rel = (before - latest) / before
    state.early_stop_streak = state.early_stop_streak + 1 if rel < config.stop_tau else 0


def validate_plan(plan: Sequence[StageSpec], specs: Sequence[AttributeSpec]) -> None:
    active = set(active_dims(specs))
    primaries = set(primary_dims(specs))
    for st in plan:
        if not set(st.primary_dims) <= primaries:
            raise ConfigurationError(
                f"{st.stage.value}: stage primaries {sorted(set(st.primary_dims) - primaries)} "
                "are not primary_optimization attributes"
            )
        if set(st.primary_dims) | set(st.constrained_dims) != active:
            raise ConfigurationError(f"{st.stage.value}: primary + constrained dims must cover every active dim")
    for dim in active:
        if not any(dim in st.primary_dims for st in plan) and not all(dim in st.constrained_dims for st in plan):
            raise ConfigurationError(f"attribute {dim!r} is neither optimized nor constrained throughout")


def _stage(stage: Stage, primaries: Sequence[str], specs) -> StageSpec:
    prim = set(primaries)
    return StageSpec(stage, tuple(primaries), tuple(d for d in active_dims(specs) if d not in prim))


def default_stage(
    stage: Stage,
    state: OptimizationState,
    specs: Sequence[AttributeSpec],
    config: OptimizationConfig,
    earlier: Sequence[StageSpec],
) -> StageSpec | None:
    """Stage primaries chosen from the current deviations at stage entry.

    core: top ``core_width`` off-target dims; balancing: the remaining dims
    still off by more than the residual threshold; global: every primary dim.
    """
    by_id = {s.id: s for s in specs}
    queue = deviation_queue(state.energy_trajectory[-1], specs)
    off_target = [d for d in queue if abs(state.current_scores[d] - by_id[d].target) > 0]
    if stage is Stage.CORE_CALIBRATION:
        chosen = off_target[: config.core_width]
    elif stage is Stage.BALANCING:
        used = {d for st in earlier for d in st.primary_dims}
        residual = config.thresholds.residual
        chosen = [
            d for d in off_target
            if d not in used and abs(state.current_scores[d] - by_id[d].target) > residual
        ]
    else:
        chosen = primary_dims(specs)
    if not chosen:
        return None
    return _stage(stage, chosen, specs)


def _penalty_for(stage: StageSpec, matrix: CorrelationMatrix | None, c: float) -> PenaltyConfig | None:
    if not stage.constrained_dims:
        return None
    if matrix is None:
        matrix = CorrelationMatrix.identity(list(stage.primary_dims) + list(stage.constrained_dims))
    return derive_stage_betas(matrix, stage.primary_dims, c, stage.constrained_dims)


def run_optimization(
    initial_text: str,
    config: OptimizationConfig,
    rewriter,
    scorers,
    specs: Sequence[AttributeSpec],
    matrix: CorrelationMatrix | None = None,
    c: float = DEFAULT_C,
    templates: Mapping[Stage, str] | None = None,
) -> RunReport:
    """Run the staged refinement and return the full report.

    Returns the converged text on convergence or early stop, otherwise the
    lowest-energy text seen.
    """
    specs = tuple(specs)
    check_unique_ids(specs)
    if not primary_dims(specs):
        raise ConfigurationError("at least one primary_optimization attribute is required")
    dims = active_dims(specs)
    for d in dims:
        if d not in scorers:
            raise ConfigurationError(f"no scorer registered for attribute {d!r}")
    if config.stage_plan is not None:
        validate_plan(config.stage_plan, specs)
    templates = templates or load_templates()

    scores0 = score_all(initial_text, scorers, dims)
    b0 = total_energy(scores0, None, specs, None)
    state = OptimizationState(
        current_text=initial_text,
        current_scores=scores0,
        prev_scores=None,
        energy_trajectory=[b0],
        best_text=initial_text,
        best_energy=b0.total,
    )
    prompts: list[PromptRecord] = []
    decisions: list[AttemptRecord] = []
    flags: dict = {"stalled_stages": [], "skipped_stages": [], "penalty_fallback_stages": [], "stages": []}
    accepted_scores: list[ScoreVector] = []

    def finish(status: Status) -> RunReport:
        final = state.current_text if status in (Status.CONVERGED, Status.EARLY_STOPPED) else state.best_text
        final_scores = state.current_scores if final == state.current_text else score_all(final, scorers, dims)
        return RunReport(
            status=status,
            initial_text=initial_text,
            final_text=final,
            energy_trajectory=tuple(state.energy_trajectory),
            accepted_scores=(scores0, *accepted_scores),
            prompts=tuple(prompts),
            decisions=tuple(decisions),
            final_scores=final_scores,
            seed=config.seed,
            flags=flags,
        )

    if b0.total <= config.tau:
        return finish(Status.CONVERGED)

    plan = list(config.stage_plan) if config.stage_plan is not None else None
    n_stages = len(plan) if plan is not None else len(STAGE_ORDER)
    done_stages: list[StageSpec] = []

    for stage_index in range(n_stages):
        state.stage_index = stage_index
        if plan is not None:
            stage = plan[stage_index]
        else:
            stage = default_stage(STAGE_ORDER[stage_index], state, specs, config, done_stages)
            if stage is None:
                flags["skipped_stages"].append(STAGE_ORDER[stage_index].value)
                continue
        done_stages.append(stage)
        flags["stages"].append(stage.to_dict())
        penalty = _penalty_for(stage, matrix, c)
        if penalty is not None and penalty.fallback:
            flags["penalty_fallback_stages"].append(stage.stage.value)
        ctx = EnergyContext(specs, penalty, stage.constrained_dims)

        for iteration in range(1, config.max_iterations + 1):
            state.iteration = iteration
            state.attempt_counter = 0
            queue = deviation_queue(state.energy_trajectory[-1], specs)
            prompt = build_prompt(state, stage, queue, specs, templates, config.thresholds)
            prompts.append(
                PromptRecord(stage.stage.value, iteration, tuple(d.to_dict() for d in prompt.directives), prompt.rendered)
            )
            accepted = False
            backend_failures = 0
            for attempt in range(1, config.attempts_per_iteration + 1):
                seed = attempt_seed(config.seed, stage_index, iteration, attempt)
                record, _ = propose_and_evaluate(state, prompt, rewriter, scorers, ctx, seed)
                decisions.append(record)
                if record.accepted:
                    accepted = True
                    accepted_scores.append(state.current_scores)
                    _update_streak(state, config)
                    status = check_termination(state, config)
                    if status != CONTINUE:
                        return finish(Status(status))
                    break
                if record.cause.startswith("backend_error") or record.cause == "empty_output":
                    backend_failures += 1
            if not accepted:
                if backend_failures == config.attempts_per_iteration:
                    flags["backend_failure_stage"] = stage.stage.value
                    return finish(Status.BACKEND_FAILURE)
                flags["stalled_stages"].append(stage.stage.value)
                log.info("stage %s stalled at iteration %d", stage.stage.value, iteration)
                break

    state.plan_finished = True
    return finish(Status(check_termination(state, config)))

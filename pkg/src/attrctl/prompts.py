"""Rewrite directives and prompt templates for the refinement stages."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ConfigurationError, ContractViolation


class Stage(str, enum.Enum):
    CORE_CALIBRATION = "core_calibration"
    BALANCING = "balancing"
    GLOBAL_FINETUNE = "global_finetune"


STAGE_ORDER = (Stage.CORE_CALIBRATION, Stage.BALANCING, Stage.GLOBAL_FINETUNE)


class Direction(str, enum.Enum):
    INCREASE = "increase"
    DECREASE = "decrease"
    MAINTAIN = "maintain"


class Intensity(str, enum.Enum):
    SLIGHT = "slight"
    SIGNIFICANT = "significant"


@dataclass(frozen=True)
class RewriteDirective:
    dim: str
    direction: Direction
    intensity: Intensity | None = None
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if self.intensity is not None:
            object.__setattr__(self, "intensity", Intensity(self.intensity))
        if self.direction is Direction.MAINTAIN and self.intensity is not None:
            raise ContractViolation("maintain directives carry no intensity")
        if self.direction is not Direction.MAINTAIN and self.intensity is None:
            raise ContractViolation(f"{self.direction.value} directive needs an intensity")

    @property
    def steps(self) -> int:
        """Number of lexical edits a rewrite should make for this directive."""
        if self.direction is Direction.MAINTAIN:
            return 0
        return 3 if self.intensity is Intensity.SIGNIFICANT else 1

    def render(self) -> str:
        name = self.label or self.dim
        if self.direction is Direction.MAINTAIN:
            return f"maintain {name}"
        adverb = "significantly" if self.intensity is Intensity.SIGNIFICANT else "slightly"
        verb = "increase" if self.direction is Direction.INCREASE else "reduce"
        return f"{adverb} {verb} {name}"

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "direction": self.direction.value,
            "intensity": self.intensity.value if self.intensity else None,
        }


@dataclass(frozen=True)
class RewritePrompt:
    template_id: Stage
    directives: tuple[RewriteDirective, ...]
    source_text: str
    rendered: str

    @property
    def directive_text(self) -> str:
        return render_directives(self.directives)


@dataclass(frozen=True)
class PromptThresholds:
    """Cut-offs that turn numeric deviations into directive wording."""

    significant: float = 0.25
    maintain_shift: float = 0.1
    residual: float = 0.05


def render_directives(directives: Sequence[RewriteDirective]) -> str:
    if not directives:
        return "keep every attribute as it is"
    return "; ".join(d.render() for d in directives)


def format_strength(value: float) -> str:
    return f"{value:.1f}" if round(value, 1) == value else f"{value:g}"


def render_attributes(specs) -> str:
    return ", ".join(f"{s.display} {format_strength(s.target)}" for s in specs if s.active)


_PLACEHOLDER = re.compile(r"\{(source_text|directives|attributes)\}")


def render_template(template: str, *, source_text: str, directives: str, attributes: str) -> str:
    values = {"source_text": source_text, "directives": directives, "attributes": attributes}
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def _default_template(name: str) -> str:
    return resources.files("attrctl").joinpath("data", "templates", f"{name}.txt").read_text("utf-8")


def load_templates(overrides: Mapping[str, str | Path] | None = None) -> dict[Stage, str]:
    templates = {stage: _default_template(stage.value) for stage in Stage}
    for key, path in (overrides or {}).items():
        try:
            stage = Stage(key)
        except ValueError:
            raise ConfigurationError(f"unknown template id {key!r}") from None
        text = Path(path).read_text(encoding="utf-8")
        for name in ("source_text", "directives"):
            if text.count(f"{{{name}}}") != 1:
                raise ConfigurationError(f"template {path} needs exactly one {{{name}}} placeholder")
        templates[stage] = text
    return templates

"""JSON run configuration: parsing and validation into a RunConfig.

File paths inside a config are resolved relative to the config file's
directory; a ``pkg:`` prefix points into the package's bundled data
(``pkg:lexicons/joy.tsv``).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .backends import BackendConfig, EchoRewriter, HttpRewriter, SubstitutionTable, SyntheticRewriter
from .correlation import DEFAULT_C, CorrelationMatrix, ScoreSampleMatrix, pearson_matrix
from .errors import ConfigurationError, ContractViolation, ValidationError
from .ngram import NGramModel
from .optimizer import OptimizationConfig, StageSpec, active_dims, validate_plan
from .prompts import PromptThresholds, Stage, load_templates
from .scoring import AttributeSpec, CalibratedScorer, LexiconScorer, Role, check_unique_ids, load_lexicon, score_all

PKG_PREFIX = "pkg:"
BACKEND_KINDS = ("synthetic", "echo", "http")
_TOP_LEVEL = {
    "schema_version", "attributes", "optimization", "penalty", "backend",
    "metrics", "templates", "generation", "experiment",
}


def resolve_path(value: str, base_dir: Path) -> Path:
    if value.startswith(PKG_PREFIX):
        return Path(str(resources.files("attrctl").joinpath("data", value[len(PKG_PREFIX):])))
    path = Path(value)
    return path if path.is_absolute() else base_dir / path


def _existing(value: str, base_dir: Path, what: str) -> Path:
    path = resolve_path(value, base_dir)
    if not path.is_file():
        raise ConfigurationError(f"{what} {value!r} not found (resolved to {path})")
    return path


def read_corpus(path: str | Path) -> list[str]:
    """One text per line; blank lines are dropped (the caller may warn)."""
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def _get(block: Mapping, key: str, kind, default=None, *, where: str):
    value = block.get(key, default)
    if value is None:
        return None
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ValidationError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


@dataclass
class RunConfig:
    attributes: tuple[AttributeSpec, ...]
    scorers: dict
    lexicons: dict[str, dict[str, float]]
    optimization: OptimizationConfig
    c: float = DEFAULT_C
    matrix: CorrelationMatrix | None = None
    backend_kind: str = "synthetic"
    backend: BackendConfig | None = None
    distinct_ns: tuple[int, ...] = (1, 2, 3)
    ppl_model: NGramModel | None = None
    target_dims: tuple[str, ...] = ()
    templates: dict = field(default_factory=dict)
    generation: dict | None = None
    experiment: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def dims(self) -> list[str]:
        return active_dims(self.attributes)

    def rewriter(self, kind: str | None = None, session=None):
        kind = kind or self.backend_kind
        if kind == "synthetic":
            return SyntheticRewriter(SubstitutionTable.from_lexicons(self.lexicons))
        if kind == "echo":
            return EchoRewriter()
        if kind == "http":
            if self.backend is None:
                raise ConfigurationError("backend.endpoint_url is required for the http backend")
            return HttpRewriter(self.backend, session=session)
        raise ConfigurationError(f"unknown backend kind {kind!r}")

    def echo(self) -> dict:
        """The config as loaded, with command-line overrides applied."""
        return copy.deepcopy(self.raw)


def _parse_attribute(entry: Any, index: int, base_dir: Path):
    where = f"attributes[{index}]"
    if not isinstance(entry, Mapping):
        raise ValidationError(f"{where}: expected an object")
    for key in ("id", "target"):
        if key not in entry:
            raise ValidationError(f"{where}: missing {key!r}")
    try:
        spec = AttributeSpec(
            id=_get(entry, "id", str, where=where),
            target=_get(entry, "target", float, where=where),
            alpha=_get(entry, "alpha", float, 1.0, where=where),
            lam=_get(entry, "lambda", float, 1.0, where=where),
            role=entry.get("role", Role.PRIMARY.value),
            label=_get(entry, "label", str, where=where),
        )
    except (ContractViolation, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from None

    lexicon_src = entry.get("lexicon")
    if lexicon_src is None:
        return spec, None, None
    if isinstance(lexicon_src, str):
        lexicon = load_lexicon(_existing(lexicon_src, base_dir, f"{where}.lexicon"))
    elif isinstance(lexicon_src, Mapping):
        lexicon = {str(k).lower(): float(v) for k, v in lexicon_src.items()}
    else:
        raise ValidationError(f"{where}.lexicon: expected a path or a term->weight object")
    scorer = LexiconScorer(
        lexicon,
        gain=_get(entry, "gain", float, 4.0, where=where),
        base_rate=_get(entry, "base_rate", float, 0.5, where=where),
    )
    temperature = _get(entry, "temperature", float, where=where)
    if temperature is not None:
        scorer = CalibratedScorer(scorer, temperature)
    return spec, scorer, lexicon


def _parse_optimization(block: Mapping) -> OptimizationConfig:
    where = "optimization"
    th = block.get("thresholds", {})
    thresholds = PromptThresholds(
        significant=_get(th, "significant", float, 0.25, where=f"{where}.thresholds"),
        maintain_shift=_get(th, "maintain_shift", float, 0.1, where=f"{where}.thresholds"),
        residual=_get(th, "residual", float, 0.05, where=f"{where}.thresholds"),
    )
    plan = block.get("stage_plan")
    if plan is not None:
        try:
            plan = tuple(
                StageSpec(Stage(s["stage"]), tuple(s["primary_dims"]), tuple(s.get("constrained_dims", ())))
                for s in plan
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{where}.stage_plan: {exc}") from None
    try:
        return OptimizationConfig(
            tau=_get(block, "tau", float, 0.025, where=where),
            max_iterations=_get(block, "max_iterations", int, 3, where=where),
            attempts_per_iteration=_get(block, "attempts_per_iteration", int, 4, where=where),
            early_stop_consecutive=_get(block, "early_stop_consecutive", int, 2, where=where),
            early_stop_tau=_get(block, "early_stop_tau", float, where=where),
            stage_plan=plan,
            seed=_get(block, "seed", int, 0, where=where),
            thresholds=thresholds,
            core_width=_get(block, "core_width", int, 2, where=where),
        )
    except ContractViolation as exc:
        raise ValidationError(f"{where}: {exc}") from None


def _parse_penalty(block: Mapping, base_dir: Path, scorers, dims) -> tuple[float, CorrelationMatrix | None]:
    c = _get(block, "c", float, DEFAULT_C, where="penalty")
    if not c > 0:
        raise ValidationError("penalty.c must be positive")
    sources = [k for k in ("matrix_path", "matrix", "samples_corpus") if k in block]
    if len(sources) > 1:
        raise ValidationError(f"penalty: give at most one of {sources}")
    if not sources:
        return c, None
    source = sources[0]
    try:
        if source == "matrix_path":
            path = _existing(block["matrix_path"], base_dir, "penalty.matrix_path")
            return c, CorrelationMatrix.from_csv(path.read_text(encoding="utf-8"))
        if source == "matrix":
            return c, CorrelationMatrix.from_dict(block["matrix"])
    except ContractViolation as exc:
        raise ValidationError(f"penalty.{source}: {exc}") from None
    texts = read_corpus(_existing(block["samples_corpus"], base_dir, "penalty.samples_corpus"))
    vectors = [score_all(t, scorers, dims) for t in texts]
    return c, pearson_matrix(ScoreSampleMatrix.from_score_vectors(vectors, dims))


def _parse_backend(block: Mapping) -> tuple[str, BackendConfig | None]:
    kind = block.get("kind", "synthetic")
    if kind not in BACKEND_KINDS:
        raise ValidationError(f"backend.kind must be one of {BACKEND_KINDS}, got {kind!r}")
    if "endpoint_url" not in block:
        return kind, None
    try:
        return kind, BackendConfig(
            endpoint_url=_get(block, "endpoint_url", str, where="backend"),
            timeout_ms=_get(block, "timeout_ms", int, 30_000, where="backend"),
            max_retries=_get(block, "max_retries", int, 3, where="backend"),
            auth_token=_get(block, "auth_token", str, where="backend"),
            max_tokens=_get(block, "max_tokens", int, 512, where="backend"),
            temperature=_get(block, "temperature", float, 0.7, where="backend"),
        )
    except ContractViolation as exc:
        raise ValidationError(f"backend: {exc}") from None


def build_config(raw: Mapping, base_dir: str | Path = ".") -> RunConfig:
    base_dir = Path(base_dir)
    if not isinstance(raw, Mapping):
        raise ValidationError("config must be a JSON object")
    unknown = set(raw) - _TOP_LEVEL
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if raw.get("schema_version", 1) != 1:
        raise ValidationError(f"unsupported config schema_version {raw['schema_version']!r}")
    entries = raw.get("attributes")
    if not isinstance(entries, list) or not entries:
        raise ValidationError("attributes: expected a non-empty list")

    specs, scorers, lexicons = [], {}, {}
    for i, entry in enumerate(entries):
        spec, scorer, lexicon = _parse_attribute(entry, i, base_dir)
        specs.append(spec)
        if scorer is not None:
            scorers[spec.id] = scorer
            lexicons[spec.id] = lexicon
    try:
        check_unique_ids(specs)
    except ContractViolation as exc:
        raise ValidationError(str(exc)) from None
    dims = active_dims(specs)
    for d in dims:
        if d not in scorers:
            raise ConfigurationError(f"no scorer configured for attribute {d!r}")

    optimization = _parse_optimization(raw.get("optimization", {}))
    if optimization.stage_plan is not None:
        validate_plan(optimization.stage_plan, specs)
    c, matrix = _parse_penalty(raw.get("penalty", {}), base_dir, scorers, dims)
    backend_kind, backend = _parse_backend(raw.get("backend", {}))

    metrics = raw.get("metrics", {})
    distinct_ns = tuple(metrics.get("distinct_ns", (1, 2, 3)))
    if not all(isinstance(n, int) and n >= 1 for n in distinct_ns):
        raise ValidationError("metrics.distinct_ns must be positive integers")
    ppl_model = None
    if metrics.get("ppl_corpus"):
        corpus = read_corpus(_existing(metrics["ppl_corpus"], base_dir, "metrics.ppl_corpus"))
        ppl_model = NGramModel.from_corpus(corpus, k=float(metrics.get("ppl_k", 0.5)))
    target_dims = tuple(metrics.get("target_dims", ()))
    for d in target_dims:
        if d not in dims:
            raise ValidationError(f"metrics.target_dims: {d!r} is not an active attribute")

    overrides = {}
    for stage, path in raw.get("templates", {}).items():
        overrides[stage] = _existing(path, base_dir, f"templates.{stage}")
    templates = load_templates(overrides)

    generation = raw.get("generation")
    if generation is not None:
        generation = dict(generation)
        generation["base_corpus"] = _existing(generation.get("base_corpus", ""), base_dir, "generation.base_corpus")

    return RunConfig(
        attributes=tuple(specs),
        scorers=scorers,
        lexicons=lexicons,
        optimization=optimization,
        c=c,
        matrix=matrix,
        backend_kind=backend_kind,
        backend=backend,
        distinct_ns=distinct_ns,
        ppl_model=ppl_model,
        target_dims=target_dims,
        templates=templates,
        generation=generation,
        experiment=dict(raw.get("experiment", {})),
        raw=copy.deepcopy(dict(raw)),
        base_dir=base_dir,
    )


def apply_overrides(raw: Mapping, **overrides) -> dict:
    """Return a copy of ``raw`` with optimization/backend values replaced.

    Keys: ``seed``, ``tau``, ``max_iterations``, ``attempts_per_iteration``,
    ``backend``. ``None`` values are ignored.
    """
    out = copy.deepcopy(dict(raw))
    opt = dict(out.get("optimization", {}))
    for key in ("seed", "tau", "max_iterations", "attempts_per_iteration"):
        if overrides.get(key) is not None:
            opt[key] = overrides[key]
    if opt:
        out["optimization"] = opt
    if overrides.get("backend") is not None:
        out["backend"] = {**out.get("backend", {}), "kind": overrides["backend"]}
    return out


def load_config(path: str | Path, **overrides) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return build_config(apply_overrides(raw, **overrides), path.parent)


def bundled_config(name: str, **overrides) -> RunConfig:
    """Load one of the configs shipped under ``attrctl/data/configs``."""
    return load_config(resolve_path(f"{PKG_PREFIX}configs/{name}", Path(".")), **overrides)

"""Command-line entry point: ``attrctl <command> ...``.

Exit codes: 0 converged / early-stopped, 1 configuration or input error,
2 budget exhausted, 3 backend failure. Every error is also written to
stderr as one JSON line.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .backends import TOKEN_ENV_VAR
from .calibration import DEFAULT_BINS, fit_temperature
from .config import load_config
from .correlation import DEFAULT_C, derive_betas, derive_stage_betas, pearson_matrix, read_score_csv
from .errors import AttrCtlError, ConfigurationError, ValidationError
from .experiments import (
    C_SWEEP_FIELDS,
    SCENARIOS,
    SWEEP_FIELDS,
    TAU_GRID,
    conflict_experiment,
    load_corpus,
    rows_to_csv,
    run_one,
    sweep_c,
    sweep_tau,
)
from .generation import generate_draft
from .report import EXIT_CONFIG_ERROR, write_atomic

log = logging.getLogger("attrctl")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _emit(path: str | None, text: str) -> None:
    if path:
        write_atomic(path, text)
    else:
        sys.stdout.write(text)


def _config(args):
    return load_config(
        args.config,
        seed=args.seed,
        tau=getattr(args, "tau", None),
        max_iterations=args.max_iters,
        attempts_per_iteration=args.attempts,
        backend=args.backend,
    )


def _read_text(path: str) -> str:
    try:
        text = Path(path).read_text(encoding="utf-8").strip()
    except FileNotFoundError:
        raise ConfigurationError(f"input file {path} not found") from None
    if not text:
        raise ValidationError(f"input file {path} is empty")
    return text


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.input:
        text = _read_text(args.input)
    elif cfg.generation:
        g = cfg.generation
        corpus = load_corpus(g["base_corpus"])
        text = generate_draft(
            corpus, cfg.attributes, cfg.lexicons,
            context=g.get("context", ""), length=int(g.get("length", 40)),
            seed=cfg.optimization.seed, lambda_base=float(g.get("lambda_base", 1.0)),
            strength=float(g.get("strength", 3.0)), k=float(g.get("k", 0.5)),
            bigram_weight=float(g.get("bigram_weight", 0.8)),
        )
    else:
        raise ConfigurationError("give --input or a 'generation' block in the config")
    report = run_one(text, cfg)
    _emit(args.out, report.to_json())
    log.info("status %s after %d accepted rewrites, E=%.4f",
             report.status.value, report.accepted_rewrites, report.final_energy)
    return report.status.exit_code


def cmd_sweep_tau(args) -> int:
    cfg = _config(args)
    taus = [float(t) for t in args.taus.split(",")] if args.taus else list(TAU_GRID)
    rows = sweep_tau(cfg, load_corpus(args.input), taus)
    _emit(args.out, rows_to_csv(rows, SWEEP_FIELDS))
    return 0


def cmd_sweep_c(args) -> int:
    cfg = _config(args)
    kwargs = {"grid": [float(c) for c in args.grid.split(",")]} if args.grid else {}
    rows = sweep_c(cfg, load_corpus(args.input), **kwargs)
    _emit(args.out, rows_to_csv(rows, C_SWEEP_FIELDS))
    return 0


def cmd_conflict(args) -> int:
    cfg = _config(args)
    summary = conflict_experiment(cfg, load_corpus(args.input), args.scenario)
    _emit(args.out, _json(summary.to_dict()))
    return 0


def cmd_correlate(args) -> int:
    samples = read_score_csv(args.scores)
    matrix = pearson_matrix(samples)
    targets = [t for t in (args.target or "").split(",") if t]
    if not targets:
        raise ValidationError("--target needs at least one attribute id")
    if len(targets) == 1:
        penalty = derive_betas(matrix, targets[0], args.c)
    else:
        penalty = derive_stage_betas(matrix, targets, args.c)
    if args.matrix_out:
        write_atomic(args.matrix_out, matrix.to_csv())
    payload = {"schema_version": 1, **penalty.to_dict(), "degenerate_dims": list(matrix.degenerate)}
    _emit(args.out, _json(payload))
    return 0


def _read_calibration_csv(path: str):
    logits, labels = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"logit", "label"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: expected 'logit' and 'label' columns")
        for lineno, row in enumerate(reader, 2):
            try:
                logits.append(float(row["logit"]))
                labels.append(int(row["label"]))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: bad logit/label") from None
    return logits, labels


def cmd_calibrate(args) -> int:
    logits, labels = _read_calibration_csv(args.input)
    params = fit_temperature(logits, labels, bins=args.bins)
    _emit(args.out, _json({"schema_version": 1, **params.to_dict(), "bins": args.bins}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attrctl",
        description="Multi-attribute text control: energy-guided rewriting and experiment harness.",
        epilog=(
            "Command-line flags override the matching values in the config file. "
            f"The http backend reads its bearer token from ${TOKEN_ENV_VAR} when set. "
            "Exit codes: 0 converged or early-stopped, 1 configuration/input error, "
            "2 budget exhausted, 3 backend failure."
        ),
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p, tau=True):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output path (default: stdout); written atomically")
        p.add_argument("--seed", type=int, help="base seed (overrides optimization.seed)")
        if tau:
            p.add_argument("--tau", type=float, help="convergence threshold")
        p.add_argument("--max-iters", type=int, help="iterations per stage")
        p.add_argument("--attempts", type=int, help="rewrite attempts per iteration")
        p.add_argument("--backend", choices=("synthetic", "http"), help="rewriter backend")
        p.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    p = sub.add_parser("run", help="optimize one text and write a run report")
    run_flags(p)
    p.add_argument("--input", help="text file to refine (default: generate a draft from the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-tau", help="sweep the convergence threshold over a corpus")
    run_flags(p, tau=False)
    p.add_argument("--input", required=True, help="corpus, one text per line")
    p.add_argument("--taus", help="comma-separated tau values (default: the 13-value grid)")
    p.set_defaults(func=cmd_sweep_tau)

    p = sub.add_parser("sweep-c", help="grid-search the penalty scale c over a corpus")
    run_flags(p)
    p.add_argument("--input", required=True, help="corpus, one text per line")
    p.add_argument("--grid", help="comma-separated c values (default: 0.1..1.0)")
    p.set_defaults(func=cmd_sweep_c)

    p = sub.add_parser("conflict", help="loop vs one-shot rewrite on a conflict/overlap scenario")
    run_flags(p)
    p.add_argument("--scenario", required=True, help=f"one of {', '.join(SCENARIOS)}")
    p.add_argument("--input", required=True, help="corpus, one text per line")
    p.set_defaults(func=cmd_conflict)

    p = sub.add_parser("correlate", help="Pearson matrix and penalty weights from a score CSV")
    p.add_argument("--scores", required=True, help="CSV: header of attribute ids, one row per text")
    p.add_argument("--target", required=True, help="optimized attribute id(s), comma-separated")
    p.add_argument("--c", type=float, default=DEFAULT_C, help="penalty scale (default 0.3)")
    p.add_argument("--matrix-out", help="write the correlation matrix CSV here")
    p.add_argument("--out", help="penalty JSON path (default: stdout)")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("calibrate", help="fit a temperature to logit,label data")
    p.add_argument("--input", required=True, help="CSV with 'logit' and 'label' columns")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS, help="ECE bins (default 10)")
    p.add_argument("--out", help="output JSON path (default: stdout)")
    p.set_defaults(func=cmd_calibrate)
    return parser


def _error_line(exc: BaseException, code: int) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (AttrCtlError, OSError, ValueError) as exc:
        print(_error_line(exc, EXIT_CONFIG_ERROR), file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())

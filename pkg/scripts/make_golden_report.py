"""Regenerate tests/data/golden_report.json (conflict config, first draft, seed 7)."""

from pathlib import Path

from attrctl.config import bundled_config, resolve_path
from attrctl.experiments import load_corpus, run_one

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "data" / "golden_report.json"


def main():
    cfg = bundled_config("conflict.json")
    text = load_corpus(resolve_path("pkg:corpora/drafts.txt", Path(".")))[0]
    GOLDEN.write_text(run_one(text, cfg, seed=7).to_json(), encoding="utf-8")
    print(f"wrote {GOLDEN}")


if __name__ == "__main__":
    main()

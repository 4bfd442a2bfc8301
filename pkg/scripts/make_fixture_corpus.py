"""Regenerate the fixture corpora shipped in attrctl/data/corpora.

drafts.txt: stories assembled from neutral sentence pools with a fixed seed
and a light sprinkling of emotion words, so every draft starts near the base
rate of the style/tone/topic scorers.

reference.txt: the same kind of stories with 0-6 words overwritten by terms
drawn from every bundled lexicon; scoring it exposes how the attribute
vocabularies co-occur, which is what the correlation-derived penalties need.
"""

import random
import sys
from pathlib import Path

OPENERS = [
    "Mara walked to the old market on the edge of town",
    "The train to the coast left an hour late that morning",
    "Leo found a wooden box under the stairs of the house",
    "Every Sunday the neighbours met by the river to fish",
    "The village bakery opened its doors before the sun came up",
    "Sam carried the letter in his coat for three days",
    "A small boat drifted toward the harbour in the fog",
    "The museum was quiet when Ada arrived with her notebook",
    "Grandpa kept a map of the valley pinned above his desk",
    "The storm had knocked down the fence behind the barn",
    "Nina moved into the flat above the corner shop in May",
    "The bus stopped at the last station near the hills",
]
MIDDLES = [
    "She counted the coins twice and put them back in the jar",
    "He opened the window and listened to the street below",
    "They followed the path past the mill and the stone bridge",
    "The clock in the hall struck nine as the lights went out",
    "A dog barked somewhere across the field",
    "The kettle whistled while the rain tapped on the roof",
    "She wrote the address on the back of an envelope",
    "He asked the driver where the road would lead",
    "The old key fit the lock on the second try",
    "They packed bread and cheese for the long walk",
    "The radio played a song from many years ago",
    "Someone had left a lamp burning in the shed",
    "The tide pulled the sand from under their feet",
    "She pinned the photograph to the board by the door",
]
CLOSERS = [
    "By evening the whole street knew what had happened",
    "In the end they walked home together under the stars",
    "The next morning the box was gone",
    "Nobody mentioned the letter again until winter",
    "She smiled and closed the book",
    "The boat reached the shore just before dark",
    "He kept the map for the rest of his life",
    "They promised to meet at the same place next year",
]
SPRINKLE = ["happy", "glad", "afraid", "shadows", "love", "heart", "roses", "moonlight", "scared", "bright"]


def story(rng: random.Random) -> str:
    parts = [rng.choice(OPENERS), *rng.sample(MIDDLES, 2), rng.choice(CLOSERS)]
    words = " . ".join(parts).split()
    for _ in range(rng.randint(0, 2)):
        words.insert(rng.randrange(1, len(words)), rng.choice(SPRINKLE))
    text = " ".join(words).replace(" . ", ". ")
    return text + "."


def lexicon_terms(lexicon_dir: Path) -> list[str]:
    terms = set()
    for path in sorted(lexicon_dir.glob("*.tsv")):
        for line in path.read_text(encoding="utf-8").splitlines():
            if line and not line.startswith("#"):
                term, weight = line.split("\t")
                if float(weight) > 0:
                    terms.add(term)
    return sorted(terms)


def reference_story(rng: random.Random, terms: list[str]) -> str:
    words = story(rng).split()
    for _ in range(rng.randint(0, 6)):
        i = rng.randrange(len(words))
        end = "." if words[i].endswith(".") else ""
        words[i] = rng.choice(terms) + end
    return " ".join(words)


def main(data_dir: Path, n: int = 50, n_reference: int = 300, seed: int = 7) -> None:
    rng = random.Random(seed)
    corpora = data_dir / "corpora"
    (corpora / "drafts.txt").write_text("\n".join(story(rng) for _ in range(n)) + "\n", encoding="utf-8")
    terms = lexicon_terms(data_dir / "lexicons")
    rng = random.Random(seed + 1)
    lines = [reference_story(rng, terms) for _ in range(n_reference)]
    (corpora / "reference.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("src/attrctl/data"))

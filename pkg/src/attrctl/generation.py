"""Draft generation by fusing a base bigram model with attribute-tilted priors."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .fusion import TokenDistribution, Vocabulary, generate_sequence
from .ngram import NGramModel
from .scoring import AttributeSpec, Role
from .text import tokenize


class LexiconTilt:
    """Attribute prior: the base model's next-token distribution reweighted
    by ``exp(strength * weight(token))`` for the attribute's lexicon terms."""

    def __init__(self, base: NGramModel, lexicon: Mapping[str, float], strength: float = 3.0):
        self.base = base
        vocab = base.vocab.tokens
        self.log_tilt = np.array([strength * lexicon.get(tok, 0.0) for tok in vocab])

    def __call__(self, context: Sequence[str]) -> TokenDistribution:
        base = self.base.next_distribution(context)
        logits = np.log(base.probs) + self.log_tilt
        weights = np.exp(logits - logits.max())
        return TokenDistribution.from_weights(base.vocab, weights)


def build_providers(
    corpus: Sequence[str],
    specs: Sequence[AttributeSpec],
    lexicons: Mapping[str, Mapping[str, float]],
    lambda_base: float = 1.0,
    strength: float = 3.0,
    k: float = 0.5,
    bigram_weight: float = 0.8,
):
    """Base model first, then one tilted prior per primary attribute with lambda > 0."""
    tokens = {t for line in corpus for t in tokenize(line)}
    chosen = [s for s in specs if s.role is Role.PRIMARY and s.lam > 0 and s.id in lexicons]
    for s in chosen:
        tokens |= {t for t, w in lexicons[s.id].items() if w > 0}
    vocab = Vocabulary(tuple(sorted(tokens)))
    base = NGramModel.from_corpus(corpus, vocab=vocab, k=k, bigram_weight=bigram_weight)
    providers = [base] + [LexiconTilt(base, lexicons[s.id], strength) for s in chosen]
    lambdas = [lambda_base] + [s.lam for s in chosen]
    return providers, lambdas


def generate_draft(
    corpus: Sequence[str],
    specs: Sequence[AttributeSpec],
    lexicons: Mapping[str, Mapping[str, float]],
    *,
    context: str = "",
    length: int = 40,
    seed: int = 0,
    lambda_base: float = 1.0,
    strength: float = 3.0,
    k: float = 0.5,
    bigram_weight: float = 0.8,
) -> str:
    providers, lambdas = build_providers(corpus, specs, lexicons, lambda_base, strength, k, bigram_weight)
    ctx = tokenize(context)
    rng = np.random.default_rng(seed)
    out = generate_sequence(providers, lambdas, ctx, length, rng)
    return " ".join(out)

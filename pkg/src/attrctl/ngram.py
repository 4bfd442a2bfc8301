"""Add-k smoothed unigram/bigram language models.

Used as desk-scale attribute prior providers for fusion and as the
perplexity proxy in the metrics.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation, UndefinedMetricError
from .fusion import TokenDistribution, Vocabulary
from .text import tokenize

BOS = "<s>"
UNK = "<unk>"


class NGramModel:
    """Add-k unigram or bigram model over a closed vocabulary.

    For ``order=2`` the conditional is the interpolation
    ``bigram_weight * P_addk(w | prev) + (1 - bigram_weight) * P_addk(w)``;
    ``bigram_weight=1`` gives the plain add-k bigram. Sentence starts are
    conditioned on ``<s>``, which is never itself predicted. Out-of-vocabulary
    tokens map to ``<unk>`` when the vocabulary has it, otherwise they raise.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        order: int = 2,
        k: float = 0.5,
        bigram_weight: float = 1.0,
    ):
        if order not in (1, 2):
            raise ContractViolation("only unigram and bigram models are supported")
        if k <= 0:
            raise ContractViolation("add-k constant must be positive")
        if not 0.0 <= bigram_weight <= 1.0:
            raise ContractViolation("bigram_weight must lie in [0, 1]")
        self.vocab = vocab
        self.order = order
        self.k = float(k)
        self.bigram_weight = float(bigram_weight)
        self.unigram_counts: Counter[str] = Counter()
        self.bigram_counts: Counter[tuple[str, str]] = Counter()
        self.context_counts: Counter[str] = Counter()

    @classmethod
    def uniform(cls, vocab: Vocabulary) -> "NGramModel":
        """An untrained unigram model: every token has probability 1/|V|."""
        return cls(vocab, order=1, k=1.0)

    @classmethod
    def from_corpus(
        cls,
        sentences: Iterable[str | Sequence[str]],
        vocab: Vocabulary | None = None,
        **kwargs,
    ) -> "NGramModel":
        tokenized = [tokenize(s) if isinstance(s, str) else list(s) for s in sentences]
        if vocab is None:
            types = sorted({t for sent in tokenized for t in sent} | {UNK})
            vocab = Vocabulary(tuple(types))
        model = cls(vocab, **kwargs)
        model.fit(tokenized)
        return model

    def _map(self, token: str) -> str:
        if token in self.vocab:
            return token
        if UNK in self.vocab:
            return UNK
        raise ContractViolation(f"token {token!r} outside the model vocabulary")

    def fit(self, sentences: Iterable[Sequence[str]]) -> "NGramModel":
        for sent in sentences:
            toks = [self._map(t) for t in sent]
            self.unigram_counts.update(toks)
            prev = BOS
            for tok in toks:
                self.bigram_counts[(prev, tok)] += 1
                self.context_counts[prev] += 1
                prev = tok
        return self

    @property
    def total(self) -> int:
        return sum(self.unigram_counts.values())

    def _unigram(self, token: str) -> float:
        v = self.vocab.size
        return (self.unigram_counts[token] + self.k) / (self.total + self.k * v)

    def prob(self, token: str, prev: str = BOS) -> float:
        token = self._map(token)
        uni = self._unigram(token)
        if self.order == 1:
            return uni
        prev = prev if prev == BOS else self._map(prev)
        v = self.vocab.size
        bi = (self.bigram_counts[(prev, token)] + self.k) / (
            self.context_counts[prev] + self.k * v
        )
        return self.bigram_weight * bi + (1.0 - self.bigram_weight) * uni

    def next_distribution(self, context: Sequence[str]) -> TokenDistribution:
        prev = context[-1] if context else BOS
        probs = np.array([self.prob(tok, prev) for tok in self.vocab.tokens])
        return TokenDistribution.from_weights(self.vocab, probs)

    __call__ = next_distribution

    def log_prob(self, tokens: Sequence[str]) -> float:
        total = 0.0
        prev = BOS
        for tok in tokens:
            total += math.log(self.prob(tok, prev))
            prev = tok
        return total

    def perplexity(self, tokens: Sequence[str]) -> float:
        if not tokens:
            raise UndefinedMetricError("perplexity of an empty sequence is undefined")
        return math.exp(-self.log_prob(tokens) / len(tokens))

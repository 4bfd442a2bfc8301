"""Generation-phase fusion of attribute-conditioned token distributions.

The fused next-token distribution minimizes ``sum_i lambda_i * KL(P || Q_i)``
over the simplex; its closed form is the normalized weighted geometric mean
of the priors with exponents ``lambda_i / sum(lambda)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, DegenerateFusionError

SMOOTHING_EPS = 1e-12
NORM_TOL = 1e-9


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if not tokens:
            raise ContractViolation("vocabulary must contain at least one token")
        index = {tok: i for i, tok in enumerate(tokens)}
        if len(index) != len(tokens):
            raise ContractViolation("vocabulary contains duplicate tokens")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise ContractViolation(f"token {token!r} not in vocabulary") from None

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True, eq=False)
class TokenDistribution:
    """A normalized probability vector over a vocabulary. Read-only."""

    vocab: Vocabulary
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.shape[0] != self.vocab.size:
            raise ContractViolation(
                f"expected {self.vocab.size} probabilities, got shape {probs.shape}"
            )
        if not np.all(np.isfinite(probs)):
            raise ContractViolation("probabilities must be finite")
        if np.any(probs < 0):
            raise ContractViolation("negative probability")
        total = probs.sum()
        if abs(total - 1.0) > NORM_TOL:
            raise ContractViolation(f"probabilities sum to {total!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_weights(cls, vocab: Vocabulary, weights) -> "TokenDistribution":
        w = np.asarray(weights, dtype=np.float64)
        if np.any(w < 0):
            raise ContractViolation("negative weight")
        total = w.sum()
        if not total > 0:
            raise ContractViolation("weights sum to zero")
        return cls(vocab, w / total)

    def prob(self, token: str) -> float:
        return float(self.probs[self.vocab.index(token)])

    def __eq__(self, other):
        if not isinstance(other, TokenDistribution):
            return NotImplemented
        return self.vocab == other.vocab and np.array_equal(self.probs, other.probs)

    __hash__ = None


def smooth(dist: TokenDistribution, eps: float = SMOOTHING_EPS) -> TokenDistribution:
    """Add ``eps`` to every entry and renormalize, removing exact zeros."""
    return TokenDistribution.from_weights(dist.vocab, dist.probs + eps)


@dataclass(frozen=True)
class AttributePriorSet:
    priors: tuple[TokenDistribution, ...]
    lambdas: tuple[float, ...]

    def __post_init__(self):
        priors = tuple(self.priors)
        lambdas = tuple(float(x) for x in self.lambdas)
        if not priors:
            raise ContractViolation("prior set is empty")
        if len(priors) != len(lambdas):
            raise ContractViolation(
                f"{len(priors)} priors but {len(lambdas)} lambdas"
            )
        if any(not np.isfinite(x) or x < 0 for x in lambdas):
            raise ContractViolation("lambdas must be finite and non-negative")
        if not any(x > 0 for x in lambdas):
            raise ContractViolation("at least one lambda must be positive")
        vocab = priors[0].vocab
        for q in priors[1:]:
            if q.vocab != vocab:
                raise ContractViolation("priors do not share one vocabulary")
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "lambdas", lambdas)

    @property
    def vocab(self) -> Vocabulary:
        return self.priors[0].vocab

    @property
    def total_weight(self) -> float:
        return float(sum(self.lambdas))


def _check_same_vocab(p: TokenDistribution, q: TokenDistribution) -> None:
    if p.vocab != q.vocab:
        raise ContractViolation("distributions are over different vocabularies")


def kl_divergence(p: TokenDistribution, q: TokenDistribution) -> float:
    """KL(p || q) with ``q`` smoothed; zero-mass entries of ``p`` contribute 0."""
    _check_same_vocab(p, q)
    qs = smooth(q).probs
    mask = p.probs > 0
    pm = p.probs[mask]
    value = float(np.sum(pm * (np.log(pm) - np.log(qs[mask]))))
    # rounding can leave a -1e-17 residue at p == q
    return max(value, 0.0)


def weighted_kl_objective(p: TokenDistribution, priors: AttributePriorSet) -> float:
    if not isinstance(priors, AttributePriorSet) or not priors.priors:
        raise ContractViolation("empty prior set")
    total = 0.0
    for q, lam in zip(priors.priors, priors.lambdas):
        _check_same_vocab(p, q)
        if lam:
            total += lam * kl_divergence(p, q)
    return total


def fuse_distributions(priors: AttributePriorSet) -> TokenDistribution:
    """Weighted geometric mean of the (smoothed) priors, computed in log space."""
    weights = np.asarray(priors.lambdas) / priors.total_weight
    smoothed = np.stack([smooth(q).probs for q in priors.priors])
    log_mix = weights @ np.log(smoothed)
    log_mix -= log_mix.max()
    unnorm = np.exp(log_mix)
    total = unnorm.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateFusionError(
            f"fused weights vanished (vocabulary size {priors.vocab.size}, "
            f"min prior mass {float(smoothed.min()):.3e})"
        )
    return TokenDistribution(priors.vocab, unnorm / total)


def sample_token(dist: TokenDistribution, rng: np.random.Generator) -> str:
    """Inverse-CDF draw with cumulative sums in vocabulary index order."""
    cdf = np.cumsum(dist.probs)
    u = rng.random()
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= dist.vocab.size:
        # u fell above a cdf that rounded to just under 1
        idx = int(np.flatnonzero(dist.probs > 0)[-1])
    return dist.vocab.tokens[idx]


PriorProvider = Callable[[Sequence[str]], TokenDistribution]


def generate_sequence(
    providers: Sequence[PriorProvider],
    lambdas: Sequence[float],
    context: Sequence[str],
    length: int,
    rng: np.random.Generator,
) -> list[str]:
    """Autoregressively extend ``context`` by ``length`` fused-sampled tokens."""
    if length < 0:
        raise ContractViolation("length must be non-negative")
    if len(providers) != len(lambdas):
        raise ContractViolation("one lambda per provider required")
    out = list(context)
    vocab = None
    for _ in range(length):
        priors = [provider(out) for provider in providers]
        vocab = vocab or priors[0].vocab
        for q in priors:
            if q.vocab != vocab:
                raise ContractViolation("provider returned a distribution on the wrong vocabulary")
        fused = fuse_distributions(AttributePriorSet(tuple(priors), tuple(lambdas)))
        out.append(sample_token(fused, rng))
    return out

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from attrctl.errors import ContractViolation, DegenerateFusionError
from attrctl.fusion import (
    AttributePriorSet,
    TokenDistribution,
    Vocabulary,
    fuse_distributions,
    generate_sequence,
    kl_divergence,
    sample_token,
    weighted_kl_objective,
)
from attrctl.ngram import NGramModel

V2 = Vocabulary(("a", "b"))
V3 = Vocabulary(("a", "b", "c"))


def dist(vocab, probs):
    return TokenDistribution(vocab, probs)


# -- types ---------------------------------------------------------------------

def test_vocabulary_rejects_duplicates_and_empty():
    with pytest.raises(ContractViolation):
        Vocabulary(("a", "a"))
    with pytest.raises(ContractViolation):
        Vocabulary(())
    assert V3.index("c") == 2 and V3.size == 3


def test_distribution_invariants():
    with pytest.raises(ContractViolation):
        dist(V2, [0.7, 0.7])
    with pytest.raises(ContractViolation):
        dist(V2, [1.1, -0.1])
    with pytest.raises(ContractViolation):
        dist(V3, [0.5, 0.5])
    d = dist(V2, [0.25, 0.75])
    assert d.prob("b") == 0.75
    with pytest.raises(ValueError):
        d.probs[0] = 1.0


def test_prior_set_needs_positive_weight_and_shared_vocab():
    q = dist(V2, [0.5, 0.5])
    with pytest.raises(ContractViolation):
        AttributePriorSet((q,), (0.0,))
    with pytest.raises(ContractViolation):
        AttributePriorSet((q, dist(V3, [1 / 3] * 3)), (1.0, 1.0))
    with pytest.raises(ContractViolation):
        AttributePriorSet((), ())
    assert AttributePriorSet((q, q), (1.0, 2.5)).total_weight == 3.5


# -- KL --------------------------------------------------------------------------

def test_kl_identity_is_zero():
    p = dist(V3, [0.2, 0.3, 0.5])
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-15)


def test_kl_point_mass_against_uniform():
    assert kl_divergence(dist(V2, [1.0, 0.0]), dist(V2, [0.5, 0.5])) == pytest.approx(math.log(2), abs=1e-12)


def test_kl_direct_sum():
    expected = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
    got = kl_divergence(dist(V2, [0.5, 0.5]), dist(V2, [0.9, 0.1]))
    assert got == pytest.approx(expected, abs=1e-11)


def test_kl_vocab_mismatch():
    with pytest.raises(ContractViolation):
        kl_divergence(dist(V2, [0.5, 0.5]), dist(V3, [1 / 3] * 3))


def test_kl_zero_in_q_is_finite():
    # smoothing keeps the divergence finite where q has no mass
    assert math.isfinite(kl_divergence(dist(V2, [0.5, 0.5]), dist(V2, [1.0, 0.0])))


def test_weighted_objective_examples():
    p = dist(V2, [0.5, 0.5])
    q1 = dist(V2, [0.9, 0.1])
    assert weighted_kl_objective(p, AttributePriorSet((p,), (1.0,))) == pytest.approx(0.0, abs=1e-15)
    assert weighted_kl_objective(p, AttributePriorSet((q1, p), (2.0, 1.0))) == pytest.approx(
        2 * kl_divergence(p, q1), abs=1e-12
    )
    assert weighted_kl_objective(p, AttributePriorSet((q1, p), (0.0, 1.0))) == pytest.approx(0.0, abs=1e-15)
    assert weighted_kl_objective(p, AttributePriorSet((p, q1), (0.0, 1.0))) == kl_divergence(p, q1)


# -- fusion ----------------------------------------------------------------------

def test_fuse_single_prior_is_identity():
    q = dist(V3, [0.5, 0.3, 0.2])
    assert_allclose(fuse_distributions(AttributePriorSet((q,), (1.0,))).probs, q.probs, atol=1e-12)


def test_fuse_identical_priors():
    q = dist(V3, [0.1, 0.6, 0.3])
    fused = fuse_distributions(AttributePriorSet((q, q, q), (0.3, 2.0, 7.0)))
    assert_allclose(fused.probs, q.probs, atol=1e-12)


def test_fuse_two_priors_worked_example():
    q1 = dist(V3, [0.5, 0.3, 0.2])
    q2 = dist(V3, [0.2, 0.3, 0.5])
    raw = np.array([math.sqrt(0.5 * 0.2), math.sqrt(0.3 * 0.3), math.sqrt(0.2 * 0.5)])
    fused = fuse_distributions(AttributePriorSet((q1, q2), (1.0, 1.0)))
    assert_allclose(fused.probs, raw / raw.sum(), atol=1e-12)
    assert_allclose(fused.probs, [0.339, 0.322, 0.339], atol=5e-4)


def test_fuse_large_vocabulary_does_not_underflow():
    v = Vocabulary(tuple(f"w{i}" for i in range(5000)))
    rng = np.random.default_rng(0)
    priors = tuple(dist(v, rng.dirichlet(np.full(5000, 0.05))) for _ in range(4))
    fused = fuse_distributions(AttributePriorSet(priors, (1.0, 1.0, 1.0, 1.0)))
    assert fused.probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_degenerate_fusion_error_is_reported(monkeypatch):
    import attrctl.fusion as fusion

    monkeypatch.setattr(fusion.np, "exp", lambda x: np.zeros_like(x))
    with pytest.raises(DegenerateFusionError, match="vocabulary size 2"):
        fuse_distributions(AttributePriorSet((dist(V2, [0.5, 0.5]),), (1.0,)))


# -- sampling --------------------------------------------------------------------

def test_sample_point_masses():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        assert sample_token(dist(V3, [1.0, 0.0, 0.0]), rng) == "a"
        assert sample_token(dist(V2, [0.0, 1.0]), rng) == "b"


def test_sample_same_state_same_token():
    d = dist(V3, [0.2, 0.5, 0.3])
    a = [sample_token(d, np.random.default_rng(7)) for _ in range(5)]
    assert len(set(a)) == 1


def test_sample_uniform_frequencies():
    v = Vocabulary(("w", "x", "y", "z"))
    d = dist(v, [0.25] * 4)
    rng = np.random.default_rng(123)
    counts = {t: 0 for t in v.tokens}
    for _ in range(100_000):
        counts[sample_token(d, rng)] += 1
    for t in v.tokens:
        assert abs(counts[t] / 100_000 - 0.25) < 0.02


# -- generation ------------------------------------------------------------------

def test_generate_zero_length_keeps_context():
    model = NGramModel.uniform(V3)
    assert generate_sequence([model], [1.0], ["a", "b"], 0, np.random.default_rng(0)) == ["a", "b"]


def test_generate_single_provider_matches_direct_sampling():
    model = NGramModel.from_corpus(["a b c a b", "c c a"], vocab=V3)
    fused = generate_sequence([model], [1.0], ["a"], 12, np.random.default_rng(5))
    rng = np.random.default_rng(5)
    direct = ["a"]
    for _ in range(12):
        direct.append(sample_token(model.next_distribution(direct), rng))
    assert fused == direct


def test_generate_two_bigram_providers_match_oracle_every_step():
    vocab = Vocabulary(("a", "b", "c", "d"))
    left = NGramModel.from_corpus(["a b a b a b", "b a b a"], vocab=vocab)
    right = NGramModel.from_corpus(["c d c d c", "d c d c d"], vocab=vocab)
    seen = []

    def recording(model):
        def provider(context):
            d = model.next_distribution(context)
            seen.append((tuple(context), d.probs))
            return d
        return provider

    out = generate_sequence([recording(left), recording(right)], [1.0, 1.0], [], 15, np.random.default_rng(3))
    assert len(out) == 15
    for step in range(15):
        (ctx_l, p_l), (ctx_r, p_r) = seen[2 * step], seen[2 * step + 1]
        assert ctx_l == ctx_r == tuple(out[:step])
        oracle = np.sqrt((p_l + 1e-12) / (1 + 4e-12) * (p_r + 1e-12) / (1 + 4e-12))
        oracle /= oracle.sum()
        fused = fuse_distributions(
            AttributePriorSet((TokenDistribution(vocab, p_l), TokenDistribution(vocab, p_r)), (1.0, 1.0))
        )
        assert_allclose(fused.probs, oracle, atol=1e-12)


def test_generate_rejects_wrong_vocabulary():
    other = NGramModel.uniform(V2)
    with pytest.raises(ContractViolation):
        generate_sequence([NGramModel.uniform(V3), other], [1.0, 1.0], [], 1, np.random.default_rng(0))


# -- properties ------------------------------------------------------------------

@st.composite
def prior_sets(draw, max_vocab=10, max_priors=4, min_mass=0.0):
    v = draw(st.integers(1, max_vocab))
    n = draw(st.integers(1, max_priors))
    vocab = Vocabulary(tuple(f"t{i}" for i in range(v)))
    priors = []
    for _ in range(n):
        w = draw(st.lists(st.floats(0.01, 1.0), min_size=v, max_size=v))
        p = np.array(w) / sum(w)
        if min_mass:
            p = (p + min_mass) / (1 + v * min_mass)
        priors.append(TokenDistribution(vocab, p))
    lam = draw(st.lists(st.floats(0.0, 5.0), min_size=n, max_size=n))
    lam[0] += 0.5
    return AttributePriorSet(tuple(priors), tuple(lam))


@given(prior_sets(), st.floats(1e-3, 1e3))
def test_scale_invariance(priors, c):
    scaled = AttributePriorSet(priors.priors, tuple(c * l for l in priors.lambdas))
    assert_allclose(fuse_distributions(priors).probs, fuse_distributions(scaled).probs, atol=1e-12, rtol=0)


@given(prior_sets())
def test_fused_is_normalized(priors):
    assert abs(fuse_distributions(priors).probs.sum() - 1.0) <= 1e-9


@given(prior_sets(max_vocab=8, min_mass=1e-3))
def test_log_space_matches_naive_product(priors):
    w = np.asarray(priors.lambdas) / priors.total_weight
    naive = np.ones(priors.vocab.size)
    for q, wi in zip(priors.priors, w):
        naive *= q.probs ** wi
    naive /= naive.sum()
    assert_allclose(fuse_distributions(priors).probs, naive, atol=1e-10, rtol=0)


@given(prior_sets(max_vocab=6), st.data())
@settings(max_examples=60)
def test_kl_non_negative_and_zero_on_identity(priors, data):
    p = priors.priors[0]
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-9)
    for q in priors.priors:
        assert kl_divergence(p, q) >= 0.0

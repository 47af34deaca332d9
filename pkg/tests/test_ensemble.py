import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsner.corpus import build_vocab, generate_corpus, random_language_spec, related_language_spec
from tsner.distill import TrainConfig, train_teacher
from tsner.ensemble import (
    LangIdConfig,
    LangIdParams,
    average_embeddings,
    bilinear_similarity,
    combine,
    combine_many,
    init_language_embeddings,
    is_simplex,
    langid_accuracy,
    langid_loss_and_grad,
    langid_loss_and_grad_embedded,
    sentence_embedding,
    similarity_table,
    similarity_weights,
    train_langid,
    uniform_weights,
    weights_from_similarities,
)
from tsner.errors import ConfigError, InvalidInputError
from tsner.numerics import finite_diff_grad, max_relative_error, ortho_penalty, softmax
from tsner.tagger import TaggerConfig


def simplex(k):
    return st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k).map(lambda a: np.array(a) / sum(a))


# weights and combination


def test_uniform_weights():
    assert list(uniform_weights(1)) == [1.0]
    np.testing.assert_array_equal(uniform_weights(3), [1 / 3] * 3)
    assert abs(uniform_weights(7).sum() - 1.0) <= 1e-15
    with pytest.raises(InvalidInputError):
        uniform_weights(0)


def test_combine_examples(rng):
    d = rng.dirichlet(np.ones(9))
    assert np.max(np.abs(combine(d[None], [1.0]) - d)) <= 1e-15
    a = np.eye(9)[0]
    b = np.eye(9)[1]
    np.testing.assert_array_equal(combine(np.stack([a, b]), [0.5, 0.5]), [0.5, 0.5] + [0.0] * 7)
    with pytest.raises(InvalidInputError):
        combine(np.stack([a, b]), [1.0])


def test_combine_loop_oracle(rng):
    for _ in range(20):
        alpha = rng.dirichlet(np.ones(3))
        dists = rng.dirichlet(np.ones(9), size=3)
        ref = [sum(alpha[k] * dists[k, c] for k in range(3)) for c in range(9)]
        np.testing.assert_allclose(combine(dists, alpha), ref, rtol=0, atol=1e-15)


@given(st.integers(1, 5).flatmap(lambda k: st.tuples(simplex(k), st.integers(0, 2**31))))
def test_combine_preserves_distributions(args):
    alpha, seed = args
    dists = np.random.default_rng(seed).dirichlet(np.ones(9), size=(alpha.size, 4))
    out = combine_many(dists, alpha)
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


# sentence embeddings and similarity


def test_sentence_embedding(rng):
    Eg = rng.normal(size=(6, 4))
    np.testing.assert_array_equal(sentence_embedding(Eg, [3]), Eg[3])
    np.testing.assert_allclose(sentence_embedding(Eg, [1, 2, 5]), sentence_embedding(Eg, [5, 1, 2]), atol=1e-15)
    ref = [(Eg[1, j] + Eg[2, j] + Eg[5, j]) / 3 for j in range(4)]
    np.testing.assert_allclose(sentence_embedding(Eg, [1, 2, 5]), ref, rtol=0, atol=1e-15)
    with pytest.raises(InvalidInputError):
        sentence_embedding(Eg, [])


def test_bilinear_examples(rng):
    m, d = 8, 4
    g, mu = rng.normal(size=m), rng.normal(size=m)
    U, V = rng.normal(size=(d, m)), rng.normal(size=(d, m))
    assert bilinear_similarity(g, np.zeros((d, m)), V, mu) == 0.0
    assert bilinear_similarity(g, np.eye(m), np.eye(m), mu) == pytest.approx(g @ mu, abs=1e-12)
    assert bilinear_similarity(g, U, V, mu) == pytest.approx(g @ (U.T @ V) @ mu, abs=1e-12)
    with pytest.raises(InvalidInputError):
        bilinear_similarity(g, U, V[:, :3], mu)


@given(st.integers(0, 2**31), st.floats(-5, 5), st.floats(-5, 5))
def test_bilinear_linear_in_each_argument(seed, a, b):
    r = np.random.default_rng(seed)
    U, V = r.normal(size=(3, 5)), r.normal(size=(3, 5))
    g1, g2, mu, mu2 = r.normal(size=(4, 5))
    lhs = bilinear_similarity(a * g1 + b * g2, U, V, mu)
    rhs = a * bilinear_similarity(g1, U, V, mu) + b * bilinear_similarity(g2, U, V, mu)
    assert lhs == pytest.approx(rhs, abs=1e-9)
    lhs = bilinear_similarity(g1, U, V, a * mu + b * mu2)
    rhs = a * bilinear_similarity(g1, U, V, mu) + b * bilinear_similarity(g1, U, V, mu2)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_langid_params_freeze_encoder(rng):
    p = LangIdParams(rng.normal(size=(5, 3)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), rng.normal(size=(3, 2)))
    with pytest.raises(ValueError):
        p.Eg[0, 0] = 1.0
    with pytest.raises(InvalidInputError):
        LangIdParams(np.zeros((5, 3)), np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((3, 2)))


# language-ID loss


def test_langid_loss_optimum():
    G = np.array([[1.0, 0.0], [0.0, 1.0]])
    U = V = 100.0 * np.eye(2)
    P = 10.0 * np.eye(2)
    loss, _ = langid_loss_and_grad_embedded(G, [0, 1], U, V, P, gamma=0.0)
    assert loss == 0.0


def test_langid_uniform_ce(rng):
    Eg = rng.normal(size=(5, 4))
    p = LangIdParams(Eg, np.zeros((2, 4)), rng.normal(size=(2, 4)), rng.normal(size=(4, 2)))
    loss, _ = langid_loss_and_grad(p, [([1, 2], 0), ([3], 1), ([4, 4], 1)], gamma=0.0)
    assert loss == pytest.approx(np.log(2.0), abs=1e-15)


@pytest.mark.parametrize("gram", ["outer", "inner"])
def test_langid_gradients(rng, gram):
    for _ in range(5):
        G = rng.normal(size=(4, 6))
        ks = rng.integers(0, 3, size=4)
        U, V, P = rng.normal(size=(3, 6)), rng.normal(size=(3, 6)), rng.normal(size=(6, 3))
        _, g = langid_loss_and_grad_embedded(G, ks, U, V, P, 0.05, gram)
        num = finite_diff_grad(lambda a: langid_loss_and_grad_embedded(G, ks, *a, 0.05, gram)[0], [U, V, P])
        assert max_relative_error(g, num) < 1e-4


def test_langid_errors(rng):
    p = LangIdParams(rng.normal(size=(5, 4)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4)), rng.normal(size=(4, 2)))
    with pytest.raises(InvalidInputError):
        langid_loss_and_grad(p, [], 0.01)
    with pytest.raises(InvalidInputError):
        langid_loss_and_grad(p, [([1], 2)], 0.01)


def test_langid_config_validation():
    with pytest.raises(ConfigError) as exc:
        LangIdConfig(rank=0).validate()
    assert exc.value.path == "ensemble.langid.rank"
    with pytest.raises(ConfigError):
        LangIdConfig(gamma=-1).validate()
    with pytest.raises(ConfigError):
        LangIdConfig(gram="diag").validate()


# language embeddings


def test_init_language_embeddings(rng):
    Eg = rng.normal(size=(10, 3))
    P = init_language_embeddings(Eg, [[[1, 2]], [[4]]])
    np.testing.assert_allclose(P[:, 0], Eg[[1, 2]].mean(axis=0), atol=1e-15)
    np.testing.assert_array_equal(P[:, 1], Eg[4])
    dup = init_language_embeddings(Eg, [[[1], [1], [2]], [[3]]])
    np.testing.assert_allclose(dup[:, 0], (2 * Eg[1] + Eg[2]) / 3, atol=1e-15)
    sents = [rng.integers(0, 10, size=int(rng.integers(1, 8))) for _ in range(50)]
    ref = np.zeros(3)
    for s in sents:
        ref += np.array([sum(Eg[t, j] for t in s) / len(s) for j in range(3)])
    np.testing.assert_allclose(init_language_embeddings(Eg, [sents, sents[:1]])[:, 0], ref / 50, rtol=0, atol=1e-12)
    with pytest.raises(InvalidInputError):
        init_language_embeddings(Eg, [sents, []])


# training


@pytest.fixture(scope="module")
def two_languages():
    tgt = random_language_spec("tgt", 8)
    a = related_language_spec(tgt, "aa", 0.0, 1)
    b = related_language_spec(tgt, "bb", 0.0, 2)
    train = [generate_corpus(s, 300, 1) for s in (a, b)]
    held = [generate_corpus(s, 200, 2) for s in (a, b)]
    vocab = build_vocab(train + held)
    teachers = [train_teacher(d, vocab, TaggerConfig(len(vocab)), TrainConfig(epochs=1, seed=i)) for i, d in enumerate(train)]
    Eg = average_embeddings([t.E for t in teachers])
    return [vocab.encode_dataset(d) for d in train], [vocab.encode_dataset(d) for d in held], Eg


def test_langid_separates_distinct_languages(two_languages):
    train, held, Eg = two_languages
    p = train_langid(train, Eg, LangIdConfig(seed=0))
    assert langid_accuracy(p, held) >= 0.95


def test_langid_deterministic_and_errors(two_languages):
    train, _, Eg = two_languages
    cfg = LangIdConfig(epochs=1, seed=3)
    a, b = train_langid(train, Eg, cfg), train_langid(train, Eg, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.trainable(), b.trainable()))
    with pytest.raises(InvalidInputError):
        train_langid(train[:1], Eg, cfg)


def test_large_gamma_reduces_penalty(two_languages):
    train, _, Eg = two_languages
    P0 = init_language_embeddings(Eg, train)
    p = train_langid(train, Eg, LangIdConfig(gamma=1e3, epochs=1, seed=0))
    assert ortho_penalty(p.P) < ortho_penalty(P0)


# similarity weights


def test_weights_forced_algebra():
    r = weights_from_similarities([[1.0, 0.0]], temperature=1.0)
    np.testing.assert_allclose(r.alpha, [np.e / (np.e + 1), 1 / (np.e + 1)], atol=1e-15)
    assert r.alpha[0] == pytest.approx(0.7311, abs=1e-4)


def test_weights_loop_oracle(rng):
    S = rng.normal(size=(20, 3))
    flat = S.reshape(-1)
    mean = sum(flat) / flat.size
    tau = sum((x - mean) ** 2 for x in flat) / flat.size
    ref = [0.0, 0.0, 0.0]
    for row in S:
        e = [np.exp(x / tau) for x in row]
        for k in range(3):
            ref[k] += e[k] / sum(e) / len(S)
    r = weights_from_similarities(S)
    assert r.tau == pytest.approx(tau, rel=1e-12)
    np.testing.assert_allclose(r.alpha, ref, rtol=0, atol=1e-12)
    assert is_simplex(r.alpha)


def test_degenerate_variance_falls_back(caplog):
    with caplog.at_level(logging.WARNING, logger="tsner.ensemble"):
        r = weights_from_similarities(np.full((4, 3), 0.7))
    np.testing.assert_array_equal(r.alpha, [1 / 3] * 3)
    assert r.degenerate and "uniform" in caplog.text


@given(st.integers(0, 2**31), st.integers(2, 5), st.integers(1, 12))
def test_similarity_weights_on_simplex(seed, K, n):
    r = np.random.default_rng(seed)
    m = 4
    p = LangIdParams(r.normal(size=(9, m)), r.normal(size=(2, m)), r.normal(size=(2, m)), r.normal(size=(m, K)))
    target = [r.integers(0, 9, size=int(r.integers(1, 6))) for _ in range(n)]
    alpha = similarity_weights(p, target)
    assert alpha.shape == (K,)
    assert np.all(alpha >= 0) and abs(alpha.sum() - 1.0) <= 1e-12


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=5), st.floats(0.01, 100))
def test_rank_order_invariance(s, c):
    s = np.array(s)
    a = softmax(s / 2.0)
    b = softmax(c * s / 2.0)
    assert np.argmax(a) == np.argmax(b)


def test_similarity_table_rejects_empty(rng):
    p = LangIdParams(rng.normal(size=(5, 4)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4)), rng.normal(size=(4, 2)))
    with pytest.raises(InvalidInputError):
        similarity_table(p, [])


def test_gram_variants_differ_by_a_constant(rng):
    P = rng.normal(size=(6, 3))
    G = rng.normal(size=(4, 6))
    U, V = rng.normal(size=(2, 6)), rng.normal(size=(2, 6))
    outer = langid_loss_and_grad_embedded(G, [0, 1, 2, 0], U, V, P, 0.5, "outer")
    inner = langid_loss_and_grad_embedded(G, [0, 1, 2, 0], U, V, P, 0.5, "inner")
    assert outer[0] - inner[0] == pytest.approx(0.5 * (6 - 3), abs=1e-12)
    for a, b in zip(outer[1], inner[1]):
        np.testing.assert_allclose(a, b, atol=1e-12)


@given(st.integers(0, 2**31), st.integers(2, 5))
def test_weights_permute_with_sources(seed, K):
    r = np.random.default_rng(seed)
    p = LangIdParams(r.normal(size=(9, 4)), r.normal(size=(2, 4)), r.normal(size=(2, 4)), r.normal(size=(4, K)))
    target = [r.integers(0, 9, size=4) for _ in range(6)]
    perm = r.permutation(K)
    swapped = LangIdParams(p.Eg, p.U, p.V, p.P[:, perm])
    np.testing.assert_allclose(similarity_weights(swapped, target), similarity_weights(p, target)[perm], atol=1e-12)


def test_exactly_mirrored_sources_split_evenly(rng):
    # reflecting the embedding space swaps the two language vectors and fixes the target
    m = 4
    R = np.diag([1.0, 1.0, 1.0, -1.0])
    mu = rng.normal(size=m)
    P = np.stack([mu, R @ mu], axis=1)
    # block-diagonal factors make U^T V commute with the reflection
    U, V = np.zeros((m, m)), np.zeros((m, m))
    U[:3, :3], V[:3, :3] = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    U[3, 3], V[3, 3] = rng.normal(size=2)
    Eg = rng.normal(size=(6, m))
    Eg[:, 3] = 0.0  # target text lies on the mirror plane
    target = [rng.integers(0, 6, size=5) for _ in range(10)]
    alpha = similarity_weights(LangIdParams(Eg, U, V, P), target)
    np.testing.assert_allclose(alpha, [0.5, 0.5], atol=1e-12)


def _mirrored_pair_alpha(seed):
    # two sources built from the same draw, differing only in their private word forms
    tgt = random_language_spec("tgt", seed)
    srcs = [related_language_spec(tgt, n, 0.5, 11) for n in ("aa", "bb")]
    train = [generate_corpus(s, 1000, 3) for s in srcs]
    target = generate_corpus(tgt, 1000, 4).unlabeled()
    vocab = build_vocab(train + [target])
    teachers = [train_teacher(d, vocab, TaggerConfig(len(vocab)), TrainConfig(seed=5)) for d in train]
    Eg = average_embeddings([t.E for t in teachers])
    p = train_langid([vocab.encode_dataset(d) for d in train], Eg, LangIdConfig(seed=0))
    return similarity_weights(p, vocab.encode_dataset(target))


@pytest.mark.slow
def test_symmetric_sources_get_equal_weight():
    alphas = np.array([_mirrored_pair_alpha(seed) for seed in range(5)])
    assert np.all(np.abs(alphas - 0.5) <= 0.05), f"alpha per seed: {alphas[:, 0].round(3).tolist()}"

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetwalk.embed import (
    EmbeddingTable, NegativeSampler, TrainConfig, context_pairs, log_softmax_grad, negative_sample,
    ns_loss_and_grad, pairs_per_walk, read_embeddings, softmax_check, train, write_embeddings,
)
from hetwalk.hetgraph import HetGraph
from hetwalk.rtud import init_rtud
from hetwalk.synthetic import SyntheticSpec, generate_synthetic
from hetwalk.walks import WalkConfig, WalkCorpus, generate_corpus

from conftest import TOY_SCHEMA, build

SMALL = TrainConfig(dim=16, window=3, negatives=3, epochs=3, lr=0.025)


def _central_diff(f, x, h):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _close(a, b, rel=1e-5):
    return np.all(np.abs(a - b) <= rel * np.maximum(1.0, np.abs(b)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12), st.integers(1, 6))
def test_ns_gradient_matches_finite_differences(seed, d, k):
    r = np.random.default_rng(seed)
    x, hp, hn = r.normal(0, 1, d), r.normal(0, 1, d), r.normal(0, 1, (k, d))
    _, dx, dhp, dhn = ns_loss_and_grad(x, hp, hn)
    h = 1e-6
    assert _close(dx, _central_diff(lambda v: ns_loss_and_grad(v, hp, hn)[0], x, h))
    assert _close(dhp, _central_diff(lambda v: ns_loss_and_grad(x, v, hn)[0], hp, h))
    assert _close(dhn, _central_diff(lambda v: ns_loss_and_grad(x, hp, v)[0], hn, h))


def test_ns_loss_is_stable_for_large_scores():
    x = np.full(4, 50.0)
    loss, dx, _, _ = ns_loss_and_grad(x, -x, x[None, :])
    assert np.isfinite(loss) and np.all(np.isfinite(dx))


def _fixture_graph(n=30, seed=0):
    r = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        rows.append((f"p{i % (n // 2)}", "cites", f"p{(i + 1 + r.integers(3)) % (n // 2)}", 1.0))
        rows.append((f"a{i % 5}", "writes", f"p{i % (n // 2)}", 1.0))
        rows.append((f"p{i % (n // 2)}", "has_kw", f"k{i % 10}", 1.0))
    return build(TOY_SCHEMA, rows)


def _random_table(g, d, r, scale=1.0):
    n = g.n_vertices
    return EmbeddingTable(r.normal(0, scale, (n, d)), r.normal(0, scale, (n, d)), list(g.keys))


def test_softmax_sums_to_one_everywhere():
    g = _fixture_graph()
    assert g.n_vertices == 30
    table = _random_table(g, 8, np.random.default_rng(1), scale=2.0)
    for v in range(g.n_vertices):
        for t in range(g.schema.n_vertex_types):
            members, p = softmax_check(table, g, v, t)
            assert np.all(g.vtype[members] == t)
            assert abs(p.sum() - 1) <= 1e-9


def test_softmax_uniform_for_zero_vectors():
    g = _fixture_graph()
    table = EmbeddingTable(np.zeros((g.n_vertices, 4)), np.zeros((g.n_vertices, 4)), list(g.keys))
    members, p = softmax_check(table, g, 0, 2)
    assert np.allclose(p, 1 / len(members))


def test_softmax_empty_type():
    g = build(TOY_SCHEMA, [("p1", "cites", "p2", 1.0)])
    table = EmbeddingTable(np.zeros((2, 3)), np.zeros((2, 3)), list(g.keys))
    with pytest.raises(ValueError):
        softmax_check(table, g, 0, 1)


@pytest.mark.parametrize("vectors", ["context", "input"])
def test_log_softmax_gradient(vectors):
    r = np.random.default_rng(2)
    rows = [(f"p{i}", "cites", f"p{(i + 1) % 6}", 1.0) for i in range(6)]
    rows += [(f"p{i}", "has_kw", f"k{i % 4}", 1.0) for i in range(6)]
    g = build(TOY_SCHEMA, rows)
    assert g.n_vertices == 10
    for _ in range(20):
        table = _random_table(g, 5, r)
        v, u = (int(x) for x in r.integers(g.n_vertices, size=2))
        grad = log_softmax_grad(table, g, v, u, vectors)

        def f(vec):
            t = EmbeddingTable(table.input_vectors.copy(), table.context_vectors, table.keys)
            t.input_vectors[v] = vec
            members, p = softmax_check(t, g, v, int(g.vtype[u]), vectors)
            return np.log(p[np.flatnonzero(members == u)[0]])

        fd = _central_diff(f, table.input_vectors[v].copy(), 1e-4)
        assert np.max(np.abs(fd - grad)) <= 1e-5


def test_context_pairs_worked_example():
    walk = ["p1", "k2", "k3", "p6"]
    pairs = context_pairs(walk, 1)
    nbhd = {}
    for c, o, _ in pairs:
        nbhd.setdefault(c, set()).add(o)
    assert nbhd["k2"] == {"p1", "k3"}
    assert nbhd["p1"] == {"k2"}


def test_context_pairs_edges():
    assert context_pairs([7], 3) == []
    walk = [1, 2, 3, 4]
    got = {(c, o) for c, o, _ in context_pairs(walk, 10)}
    assert got == {(a, b) for a in walk for b in walk if a != b}
    with pytest.raises(ValueError):
        context_pairs(walk, 0)


@given(st.lists(st.integers(1, 30), min_size=1, max_size=10), st.integers(1, 8))
def test_pairs_per_walk_counts(lengths, ws):
    expected = [len(context_pairs(range(n), ws)) for n in lengths]
    assert pairs_per_walk(np.array(lengths), ws).tolist() == expected


def _sampler_graph():
    # kw type has exactly 3 vertices with different corpus counts
    rows = [("p1", "has_kw", "k1", 1.0), ("p2", "has_kw", "k2", 1.0), ("p3", "has_kw", "k3", 1.0),
            ("p1", "cites", "p2", 1.0), ("a1", "writes", "p1", 1.0), ("a2", "writes", "p3", 1.0)]
    return build(TOY_SCHEMA, rows)


def test_negative_same_type_and_never_positive():
    g = _sampler_graph()
    counts = np.arange(1, g.n_vertices + 1)
    s = NegativeSampler(g, counts, "heterogeneous")
    r = np.random.default_rng(0)
    k1 = g.vertex("k1")
    draws = [negative_sample(s, k1, r) for _ in range(2000)]
    assert all(g.vtype[d] == g.vtype[k1] for d in draws)
    assert k1 not in draws


def test_negative_frequencies_three_vertex_type():
    g = _sampler_graph()
    counts = np.ones(g.n_vertices)
    ks = [g.vertex(k) for k in ("k1", "k2", "k3")]
    counts[ks] = [1.0, 8.0, 27.0]
    s = NegativeSampler(g, counts, "heterogeneous")
    positive = ks[0]
    verts, probs = s.distribution(positive)
    r = np.random.default_rng(1)
    draws = np.array([s.draw(positive, r) for _ in range(100_000)])
    for v, p in zip(verts, probs):
        assert abs(np.mean(draws == v) - p) <= 0.01
    smoothed = np.array([8.0, 27.0]) ** 0.75
    assert dict(zip(verts.tolist(), probs)) == pytest.approx(
        {ks[0]: 0.0, ks[1]: smoothed[0] / smoothed.sum(), ks[2]: smoothed[1] / smoothed.sum()})


def test_singleton_type_falls_back_to_global():
    g = build(TOY_SCHEMA, [("p1", "cites", "p2", 1.0), ("p1", "has_kw", "k1", 1.0)])
    with pytest.warns(UserWarning, match="global pool"):
        s = NegativeSampler(g, np.ones(g.n_vertices), "heterogeneous")
    k1 = g.vertex("k1")
    assert s.pool_of[k1] == s.global_pool
    assert negative_sample(s, k1, np.random.default_rng(0)) != k1


def test_ordinary_mode_draws_all_types():
    g = _sampler_graph()
    s = NegativeSampler(g, np.ones(g.n_vertices), "ordinary")
    r = np.random.default_rng(2)
    types = {int(g.vtype[s.draw(g.vertex("k1"), r)]) for _ in range(500)}
    assert types == {0, 1, 2}


# -- training ---------------------------------------------------------------------------------


def _synthetic_corpus(seed, l=10):
    sg = generate_synthetic(SyntheticSpec(communities=4, subtopics=2, papers_src=200, papers_tgt=200,
                                          keywords_src=40, keywords_tgt=40, cites_src=3, cites_tgt=5, seed=seed))
    g = HetGraph.from_records(sg.schema, sg.records)
    return g, generate_corpus(g, init_rtud(g.schema), WalkConfig(r=3, l=l, seed=seed))


@pytest.mark.parametrize("seed", range(5))
def test_loss_decreases_over_three_epochs(seed):
    g, corpus = _synthetic_corpus(seed)
    table = train(corpus, g, SMALL, seed=seed)
    h = table.loss_history
    assert len(h) == 3 and h[0] > h[1] > h[2]


def test_barbell_clusters_separate():
    left = [(f"p{i}", "cites", f"p{j}", 1.0) for i in range(6) for j in range(6) if i < j]
    right = [(f"p{i}", "cites", f"p{j}", 1.0) for i in range(6, 12) for j in range(6, 12) if i < j]
    kws = [(f"p{i}", "has_kw", f"k{i // 6}", 1.0) for i in range(12)]
    g = build(TOY_SCHEMA, left + right + kws + [("p0", "cites", "p6", 1.0)])
    corpus = generate_corpus(g, init_rtud(g.schema), WalkConfig(r=20, l=20, seed=0))
    table = train(corpus, g, TrainConfig(dim=16, window=3, epochs=3), seed=0)
    f = table.input_vectors / np.linalg.norm(table.input_vectors, axis=1, keepdims=True)
    idx = [g.vertex(f"p{i}") for i in range(12)]
    cos = f[idx] @ f[idx].T
    same = np.array([[(i < 6) == (j < 6) and i != j for j in range(12)] for i in range(12)])
    diff = np.array([[(i < 6) != (j < 6) for j in range(12)] for i in range(12)])
    assert cos[same].mean() > cos[diff].mean()


def test_type_discipline_full_run():
    g, corpus = _synthetic_corpus(0)
    stats = {}
    train(corpus, g, TrainConfig(dim=8, window=2, epochs=1), stats=stats)
    assert stats["negatives_type_mismatch"] == 0
    stats = {}
    train(corpus, g, TrainConfig(dim=8, window=2, epochs=1, mode="ordinary"), stats=stats)
    assert stats["negatives_type_mismatch"] > 0


def test_backends_agree_with_unit_batches():
    g, corpus = _synthetic_corpus(1, l=6)
    cfg = TrainConfig(dim=8, window=2, negatives=2, epochs=2, batch_size=1)
    a = train(corpus, g, cfg, seed=3, backend="numba")
    b = train(corpus, g, cfg, seed=3, backend="numpy")
    assert np.allclose(a.input_vectors, b.input_vectors, rtol=0, atol=1e-12)
    assert np.allclose(a.loss_history, b.loss_history, rtol=1e-12)


def test_numpy_minibatch_still_learns():
    g, corpus = _synthetic_corpus(2)
    table = train(corpus, g, SMALL, seed=0, backend="numpy")
    assert table.loss_history[0] > table.loss_history[-1]


def test_reproducible_single_worker():
    g, corpus = _synthetic_corpus(3)
    a = train(corpus, g, SMALL, seed=5)
    b = train(corpus, g, SMALL, seed=5)
    assert np.array_equal(a.input_vectors, b.input_vectors)


def test_parallel_workers_finite():
    g, corpus = _synthetic_corpus(4)
    table = train(corpus, g, SMALL, seed=0, workers=4)
    assert np.all(np.isfinite(table.input_vectors))
    assert table.loss_history[0] > table.loss_history[-1]


def test_large_step_size_stays_finite():
    g, corpus = _synthetic_corpus(0)
    with pytest.warns(UserWarning, match="clamped"):
        cfg = TrainConfig(dim=8, window=2, epochs=2, lr=5.0)
    table = train(corpus, g, cfg, seed=0)
    assert np.all(np.isfinite(table.input_vectors)) and np.all(np.isfinite(table.context_vectors))


def test_training_errors():
    g, corpus = _synthetic_corpus(0)
    with pytest.raises(ValueError, match="empty"):
        train(WalkCorpus.from_lists([]), g, SMALL)
    with pytest.raises(ValueError, match="missing"):
        train(WalkCorpus.from_lists([[0, g.n_vertices + 5]]), g, SMALL)


@pytest.mark.parametrize("kw", [dict(dim=0), dict(window=0), dict(negatives=0), dict(lr=0.0), dict(mode="plain")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.dim, cfg.window, cfg.negatives, cfg.epochs, cfg.lr) == (128, 10, 5, 5, 0.025)


def test_init_range_and_zero_context():
    g, corpus = _synthetic_corpus(0)
    table = train(corpus, g, TrainConfig(dim=8, window=1, epochs=1, lr=1e-12), seed=0)
    assert np.all(np.abs(table.input_vectors) <= 0.5 / 8 + 1e-9)


def test_embedding_file_round_trip(tmp_path):
    g = _fixture_graph()
    table = _random_table(g, 6, np.random.default_rng(0))
    write_embeddings(table, tmp_path / "emb.txt")
    lines = (tmp_path / "emb.txt").read_text().splitlines()
    assert lines[0] == f"{g.n_vertices} 6"
    back = read_embeddings(tmp_path / "emb.txt")
    assert back.keys == table.keys
    assert np.allclose(back.input_vectors, table.input_vectors, rtol=1e-7)

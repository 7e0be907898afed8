import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetwalk.hetgraph import (
    EdgeRecord, EmptyRelationError, GraphLoadError, HetGraph, SchemaError, load_graph, load_schema,
    parse_schema, relation_menu, sample_neighbor, write_edges,
)
from hetwalk.synthetic import BILINGUAL_SCHEMA, SyntheticSpec, generate_synthetic

from conftest import TOY_SCHEMA, build


def test_bilingual_schema_file(tmp_path):
    p = tmp_path / "schema.txt"
    p.write_text(BILINGUAL_SCHEMA)
    s = load_schema(p)
    assert len(s.vertex_types) == 4
    assert len(s.relation_types) == 10


def test_single_type_single_relation_is_not_heterogeneous():
    with pytest.raises(SchemaError, match="heterogeneous"):
        parse_schema("V paper\nR cites paper paper\n")


def test_unknown_vertex_type_in_relation():
    with pytest.raises(SchemaError):
        parse_schema("V paper\nV kw\nR has paper keyword\n")


@pytest.mark.parametrize("text", ["", "# nothing\n", "V a\nV a\nR r a a\n", "V a\nV b\nR r a b\nR r b a\n"])
def test_schema_rejects_bad_input(text):
    with pytest.raises(SchemaError):
        parse_schema(text)


def test_schema_text_round_trip(toy_schema):
    assert parse_schema(toy_schema.to_text()) == toy_schema


def test_normalization_three_and_one():
    g = build(TOY_SCHEMA, [("p1", "cites", "p2", 3.0), ("p1", "cites", "p3", 1.0)])
    nbr, prob = g.neighbors(g.vertex("p1"), g.schema.relation_id("cites"))
    got = dict(zip((g.keys[n] for n in nbr), prob))
    assert got == pytest.approx({"p2": 0.75, "p3": 0.25})


def test_schema_violation_reports_row(tmp_path, toy_schema):
    edges = tmp_path / "e.tsv"
    edges.write_text("p1\tcites\tp2\t1\nk1\thas_kw\tp1\t1\n")
    with pytest.raises(GraphLoadError, match="row 2"):
        load_graph(toy_schema, edges)


@pytest.mark.parametrize("w", ["-1", "nan", "inf"])
def test_bad_weight(tmp_path, toy_schema, w):
    edges = tmp_path / "e.tsv"
    edges.write_text(f"p1\tcites\tp2\t{w}\n")
    with pytest.raises(GraphLoadError):
        load_graph(toy_schema, edges)


def test_zero_weight_edges_dropped():
    g = build(TOY_SCHEMA, [("p1", "cites", "p2", 0.0), ("p1", "cites", "p3", 2.0)])
    nbr, prob = g.neighbors(g.vertex("p1"), 0)
    assert [g.keys[n] for n in nbr] == ["p3"]
    assert np.all(g.prob > 0)


def test_duplicate_rows_sum():
    g = build(TOY_SCHEMA, [("p1", "cites", "p2", 1.0), ("p1", "cites", "p2", 2.0), ("p1", "cites", "p3", 1.0)])
    nbr, prob = g.neighbors(g.vertex("p1"), 0)
    assert dict(zip((g.keys[n] for n in nbr), prob)) == pytest.approx({"p2": 0.75, "p3": 0.25})


def test_reverse_entries_materialized():
    g = build(TOY_SCHEMA, [("a1", "writes", "p1", 1.0), ("a2", "writes", "p1", 3.0)])
    nbr, prob = g.neighbors(g.vertex("p1"), g.schema.relation_id("writes"))
    assert dict(zip((g.keys[n] for n in nbr), prob)) == pytest.approx({"a1": 0.25, "a2": 0.75})


def test_synthetic_rows_sum_to_one():
    sg = generate_synthetic(SyntheticSpec(communities=4, subtopics=2, papers_src=450, papers_tgt=450,
                                          keywords_src=50, keywords_tgt=50))
    g = HetGraph.from_records(sg.schema, sg.records)
    assert g.n_vertices == 1000
    sums = np.add.reduceat(g.prob, g.gstart[:-1])
    assert np.all(np.abs(sums - 1) < 1e-9)


def test_sample_single_neighbor(rng):
    g = build(TOY_SCHEMA, [("p1", "cites", "p2", 5.0)])
    assert {sample_neighbor(g, g.vertex("p1"), 0, rng) for _ in range(50)} == {g.vertex("p2")}


def test_sample_three_to_one(rng):
    g = build(TOY_SCHEMA, [("p1", "cites", "p2", 3.0), ("p1", "cites", "p3", 1.0)])
    v = g.vertex("p1")
    draws = np.array([sample_neighbor(g, v, 0, rng) for _ in range(100_000)])
    assert abs(np.mean(draws == g.vertex("p2")) - 0.75) <= 0.01


def test_sample_empty_relation(rng):
    g = build(TOY_SCHEMA, [("p1", "cites", "p2", 1.0)])
    with pytest.raises(EmptyRelationError, match="no instance of relation type"):
        sample_neighbor(g, g.vertex("p1"), g.schema.relation_id("has_kw"), rng)


def test_relation_menu():
    g = build(TOY_SCHEMA, [("p1", "cites", "p2", 1.0), ("p1", "has_kw", "k1", 1.0)], vertices=[("lonely", "author")])
    assert relation_menu(g, g.vertex("lonely")) == set()
    assert relation_menu(g, g.vertex("p1")) == {0, 2}
    with pytest.raises(KeyError):
        relation_menu(g, 99)


def test_menu_consistent_with_sampler(rng):
    sg = generate_synthetic(SyntheticSpec(communities=2, subtopics=1, papers_src=40, papers_tgt=40,
                                          keywords_src=10, keywords_tgt=10, cites_src=2, cites_tgt=3))
    g = HetGraph.from_records(sg.schema, sg.records)
    for v in range(g.n_vertices):
        for z in relation_menu(g, v):
            n = sample_neighbor(g, v, z, rng)
            assert n in g.neighbors(v, z)[0]


def _random_graph(seed, n=10, m=30):
    r = np.random.default_rng(seed)
    rows = []
    for _ in range(m):
        a, b = r.integers(n, size=2)
        rows.append((f"p{a}", "cites", f"p{b}", float(r.uniform(0.1, 5))))
        rows.append((f"p{a}", "has_kw", f"k{b % 4}", float(r.integers(1, 4))))
    return build(TOY_SCHEMA, rows)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_sampler_fidelity(seed):
    g = _random_graph(seed)
    r = np.random.default_rng(seed)
    N = 20_000
    gi = int(np.argmax(np.diff(g.gstart)))
    v, z = int(g.gvertex[gi]), int(g.grel[gi])
    nbr, prob = g.neighbors(v, z)
    draws = np.array([sample_neighbor(g, v, z, r) for _ in range(N)])
    for n, p in zip(nbr, prob):
        assert abs(np.mean(draws == n) - p) <= 4 * math.sqrt(p * (1 - p) / N) + 1e-12


def test_sampler_fidelity_4_sigma_at_1e5(rng):
    g = _random_graph(7, n=40, m=200)
    N = 100_000
    for gi in np.flatnonzero(np.diff(g.gstart) >= 3)[:3]:
        v, z = int(g.gvertex[gi]), int(g.grel[gi])
        nbr, prob = g.neighbors(v, z)
        assert len(nbr) <= 32
        draws = np.array([sample_neighbor(g, v, z, rng) for _ in range(N)])
        for n, p in zip(nbr, prob):
            assert abs(np.mean(draws == n) - p) <= 4 * math.sqrt(p * (1 - p) / N)


def _adjacency(g):
    out = {}
    for v in range(g.n_vertices):
        for z in relation_menu(g, v):
            nbr, prob = g.neighbors(v, z)
            out[(g.keys[v], z)] = sorted((g.keys[n], round(float(p), 12)) for n, p in zip(nbr, prob))
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_round_trip(tmp_path_factory, seed):
    g = _random_graph(seed)
    path = tmp_path_factory.mktemp("rt") / "edges.tsv"
    write_edges(g, path)
    g2 = load_graph(g.schema, path)
    assert _adjacency(g) == _adjacency(g2)


def test_storage_linear_in_edges():
    g = _random_graph(3, n=50, m=400)
    assert g.n_entries <= 2 * g.n_edges


def test_alias_backends_agree(monkeypatch):
    rows = _random_graph(11, n=30, m=120).records()
    monkeypatch.setenv("HETWALK_BACKEND", "numpy")
    a = HetGraph.from_records(parse_schema(TOY_SCHEMA), rows)
    monkeypatch.setenv("HETWALK_BACKEND", "numba")
    b = HetGraph.from_records(parse_schema(TOY_SCHEMA), rows)
    assert np.array_equal(a.alias_idx, b.alias_idx)
    assert np.allclose(a.alias_prob, b.alias_prob, rtol=0, atol=1e-15)


def test_edge_record_default_weight(tmp_path, toy_schema):
    edges = tmp_path / "e.tsv"
    edges.write_text("p1\tcites\tp2\n")
    g = load_graph(toy_schema, edges)
    assert g.weight.tolist() == [1.0]
    assert g.records() == [EdgeRecord("p1", "cites", "p2", 1.0)]

import numpy as np
import pytest

from hetwalk.hetgraph import HetGraph, load_graph, load_schema
from hetwalk.synthetic import SyntheticSpec, generate_synthetic, write_synthetic


@pytest.fixture(scope="module")
def full():
    return generate_synthetic(SyntheticSpec(papers_src=2000, papers_tgt=2000, keywords_src=200, keywords_tgt=200))


def test_ratio_near_target(full):
    assert abs(full.mono_cross_ratio() - 28.0) <= 2.8


def test_every_relation_present(full):
    counts = full.counts()
    for name in full.schema.relation_types:
        assert counts.get(name, 0) > 0, name


def test_noise_free_two_communities_stay_inside():
    sg = generate_synthetic(SyntheticSpec(communities=2, subtopics=2, papers_src=200, papers_tgt=200,
                                          keywords_src=20, keywords_tgt=20, noise=0.0, seed=4))
    for r in sg.records:
        assert sg.community[r.src_key] == sg.community[r.dst_key], r


def test_loads_and_rows_normalized(tmp_path):
    sg = generate_synthetic(SyntheticSpec(communities=4, papers_src=300, papers_tgt=300,
                                          keywords_src=40, keywords_tgt=40, subtopics=2))
    paths = write_synthetic(sg, tmp_path)
    g = load_graph(load_schema(paths["schema"]), paths["edges"], paths["vertices"])
    assert g.n_vertices == 680
    for grp in range(len(g.gstart) - 1):
        a, b = g.gstart[grp], g.gstart[grp + 1]
        assert abs(g.prob[a:b].sum() - 1.0) <= 1e-12
    g2 = HetGraph.from_records(sg.schema, sg.records)
    assert g2.n_edges == g.n_edges
    assert len(sg.pairs) == sg.counts()["cite_cross"]


def test_deterministic_per_seed():
    spec = SyntheticSpec(communities=4, papers_src=200, papers_tgt=200, keywords_src=40, keywords_tgt=40, subtopics=2)
    assert generate_synthetic(spec).records == generate_synthetic(spec).records


@pytest.mark.parametrize("kw", [
    dict(communities=1),
    dict(noise=1.5),
    dict(ratio=0.0),
    dict(papers_src=10),
    dict(keywords_per_paper=50),
    dict(cites_src=500.0),
    dict(cross_per_citing=0.5),
])
def test_infeasible_parameters(kw):
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticSpec(**kw))


def test_extreme_sparsity_rejected():
    with pytest.raises(ValueError, match="infeasible"):
        generate_synthetic(SyntheticSpec(communities=2, subtopics=1, papers_src=20, papers_tgt=20,
                                         keywords_src=10, keywords_tgt=10, cites_src=1.0, cites_tgt=1.0,
                                         ratio=1e6))

import numpy as np
import pytest

from hetwalk import _backend
from hetwalk.hetgraph import HetGraph
from hetwalk.rtud import train_rtud
from hetwalk.synthetic import SyntheticSpec, generate_synthetic
from hetwalk.walks import WalkConfig, generate_corpus


@pytest.mark.parametrize("value,expected", [("numba", "numba"), ("numpy", "numpy"), (" NumPy ", "numpy")])
def test_env_flag_selects_default(monkeypatch, value, expected):
    monkeypatch.setenv("HETWALK_BACKEND", value)
    assert _backend.resolve(None) == expected


def test_env_flag_rejects_unknown(monkeypatch):
    monkeypatch.setenv("HETWALK_BACKEND", "cuda")
    with pytest.raises(ValueError, match="HETWALK_BACKEND"):
        _backend.resolve(None)


def test_explicit_argument_wins(monkeypatch):
    monkeypatch.setenv("HETWALK_BACKEND", "numpy")
    assert _backend.resolve("numba") == "numba"
    with pytest.raises(ValueError):
        _backend.resolve("fortran")


def test_em_then_walks_identical_across_backends():
    sg = generate_synthetic(SyntheticSpec(communities=4, subtopics=2, papers_src=160, papers_tgt=160,
                                          keywords_src=32, keywords_tgt=32, seed=2))
    g = HetGraph.from_records(sg.schema, sg.records)
    pairs = [(g.vertex(a), g.vertex(b)) for a, b in sg.pairs[:25]]
    out = {}
    for b in ("numba", "numpy"):
        model, trace = train_rtud(g, pairs, backend=b)
        corpus = generate_corpus(g, model, WalkConfig(r=2, l=15, seed=5), backend=b)
        out[b] = (model.beta, [t.stability for t in trace], corpus.walks)
    assert np.array_equal(out["numba"][0], out["numpy"][0])
    assert out["numba"][1] == out["numpy"][1]
    assert np.array_equal(out["numba"][2], out["numpy"][2])

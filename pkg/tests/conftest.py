import os

import numpy as np
import pytest

from hetwalk.hetgraph import EdgeRecord, HetGraph, parse_schema

# two paper types and a keyword type; enough to be heterogeneous
TOY_SCHEMA = """\
V paper
V author
V kw
R cites paper paper
R writes author paper
R has_kw paper kw
"""


@pytest.fixture
def toy_schema():
    return parse_schema(TOY_SCHEMA)


def build(schema_text, rows, vertices=None):
    schema = parse_schema(schema_text)
    return HetGraph.from_records(schema, [EdgeRecord(*r) for r in rows], vertices)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_report_header(config):
    return f"HETWALK_BACKEND={os.environ.get('HETWALK_BACKEND', 'numba')}"


# three relation types over two vertex types; used for the path-search oracle
PATH_SCHEMA = """\
V A
V B
R aa A A
R ab A B
R bb B B
"""
_ENDS = {0: (0, 0), 1: (0, 1), 2: (1, 1)}


def random_typed_graph(r, max_vertices=8, max_edges=20, unit_weights=False):
    """Random graph plus a random row-stochastic beta on PATH_SCHEMA; returns (g, edges, vtype, beta)."""
    schema = parse_schema(PATH_SCHEMA)
    n = int(r.integers(2, max_vertices + 1))
    vtype = r.integers(0, 2, n)
    vtype[0], vtype[-1] = 0, 1
    edges = []
    for _ in range(int(r.integers(1, max_edges + 1))):
        z = int(r.integers(0, 3))
        a, b = _ENDS[z]
        src, dst = np.flatnonzero(vtype == a), np.flatnonzero(vtype == b)
        w = 1.0 if unit_weights else float(r.choice([0.5, 1.0, 2.0, 3.0]) if r.random() < 0.5 else r.uniform(0.1, 4))
        edges.append((int(r.choice(src)), z, int(r.choice(dst)), w))
    mask = schema.relation_mask()
    beta = np.where(mask, r.uniform(0.05, 1, mask.shape), 0.0)
    if unit_weights:
        beta = np.where(mask, 1.0, 0.0)
    beta /= beta.sum(axis=1, keepdims=True)
    g = HetGraph(schema, [f"v{i}" for i in range(n)], vtype,
                 [e[0] for e in edges], [e[1] for e in edges], [e[2] for e in edges], [e[3] for e in edges])
    return g, edges, vtype, beta


# acceptance verdicts, printed together at the end of the session
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])

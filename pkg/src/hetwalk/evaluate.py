"""Held-out split construction and binary-relevance ranking metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hetgraph import HetGraph

DEFAULT_KS = (10, 30, 50)


@dataclass(frozen=True)
class SplitSpec:
    query_type: int
    target_type: int
    held_out_relation: int
    fraction: float = 0.1
    seed: int = 0

    def check(self, schema) -> None:
        if not 0 < self.fraction < 1:
            raise ValueError("split fraction must lie in (0, 1)")
        if (self.query_type, self.held_out_relation, self.target_type) not in schema.permitted:
            raise ValueError("held-out relation does not connect the query type to the target type")


@dataclass
class Split:
    train: HetGraph
    qrels: dict  # query key -> set of relevant candidate keys
    candidates: list
    queries: list


def make_split(g: HetGraph, spec: SplitSpec) -> Split:
    """Hide every held-out edge of a random subset of eligible query vertices.

    A query vertex is eligible when it has at least one held-out edge to the
    target type.  Removed targets become the qrels, and their union is the
    candidate pool.  All other relations stay in the training graph.
    """
    spec.check(g.schema)
    held = (g.rel == spec.held_out_relation) & (g.vtype[g.src] == spec.query_type) & (g.vtype[g.dst] == spec.target_type)
    eligible = np.unique(g.src[held])
    if not len(eligible):
        raise ValueError("no query vertex has the held-out relation")
    n = int(round(spec.fraction * len(eligible)))
    if n == 0:
        raise ValueError(f"fraction {spec.fraction} of {len(eligible)} eligible queries selects none")
    rng = np.random.default_rng(spec.seed)
    chosen = np.sort(rng.choice(eligible, size=n, replace=False))
    drop = held & np.isin(g.src, chosen)
    qrels: dict[str, set] = {}
    for s, d in zip(g.src[drop].tolist(), g.dst[drop].tolist()):
        qrels.setdefault(g.keys[s], set()).add(g.keys[d])
    candidates = sorted(set().union(*qrels.values()))
    return Split(g.without_edges(drop), qrels, candidates, [g.keys[v] for v in chosen.tolist()])


# -- metrics -------------------------------------------------------------------------


@dataclass
class MetricsReport:
    map_at: dict = field(default_factory=dict)
    ndcg_at: dict = field(default_factory=dict)
    p_at: dict = field(default_factory=dict)
    mrr: float = 0.0
    n_queries: int = 0

    def rows(self):
        for k in sorted(self.ndcg_at):
            yield f"NDCG@{k}", self.ndcg_at[k]
        for k in sorted(self.p_at):
            yield f"P@{k}", self.p_at[k]
        for k in sorted(self.map_at):
            yield f"MAP@{k}", self.map_at[k]
        yield "MRR", self.mrr

    def to_tsv(self) -> str:
        lines = ["metric\tvalue", f"queries\t{self.n_queries}"]
        lines += [f"{name}\t{value:.6f}" for name, value in self.rows()]
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        rows = list(self.rows())
        width = max(len(name) for name, _ in rows)
        out = [f"{'queries'.ljust(width)}  {self.n_queries}"]
        out += [f"{name.ljust(width)}  {value:.4f}" for name, value in rows]
        return "\n".join(out)


def _ranked_keys(entries):
    return [e[0] if isinstance(e, tuple) else e for e in entries]


def query_metrics(ranked, relevant, ks, map_denominator="min"):
    """Per-query (ap, ndcg, p) dicts keyed by k, plus reciprocal rank."""
    hits = np.array([c in relevant for c in ranked], dtype=np.float64)
    R = len(relevant)
    discounts = 1.0 / np.log2(np.arange(2, len(hits) + 2))
    ap, ndcg, p = {}, {}, {}
    for k in ks:
        h = hits[:k]
        p[k] = h.sum() / k
        if h.any():
            prec_at = np.cumsum(h) / np.arange(1, len(h) + 1)
            denom = min(R, k) if map_denominator == "min" else R
            ap[k] = float((prec_at * h).sum() / denom)
        else:
            ap[k] = 0.0
        ideal = (1.0 / np.log2(np.arange(2, min(R, k) + 2))).sum()
        ndcg[k] = float((h * discounts[:len(h)]).sum() / ideal) if ideal > 0 else 0.0
    first = np.flatnonzero(hits)
    rr = 1.0 / (first[0] + 1) if len(first) else 0.0
    return ap, ndcg, p, rr


def metrics(run, qrels: dict, ks=DEFAULT_KS, map_denominator: str = "min") -> MetricsReport:
    """Macro-averaged MAP@k, NDCG@k, P@k and MRR.

    ``run`` maps query key to a ranked list of candidate keys (or
    ``(key, score)`` tuples), or is an iterable of RankedList.  Queries in the
    qrels without a run entry count as empty rankings.
    """
    if map_denominator not in ("min", "relevant"):
        raise ValueError("map_denominator must be 'min' or 'relevant'")
    if not isinstance(run, dict):
        run = {rl.query_key: rl.entries for rl in run}
    extra = [q for q in run if q not in qrels]
    if extra:
        raise ValueError(f"run query {extra[0]!r} is missing from the qrels")
    if not qrels:
        raise ValueError("empty qrels")
    ks = tuple(int(k) for k in ks)
    report = MetricsReport({k: 0.0 for k in ks}, {k: 0.0 for k in ks}, {k: 0.0 for k in ks}, 0.0, len(qrels))
    for q, relevant in qrels.items():
        if not relevant:
            raise ValueError(f"query {q!r} has no relevant candidates")
        ap, nd, p, rr = query_metrics(_ranked_keys(run.get(q, [])), set(relevant), ks, map_denominator)
        for k in ks:
            report.map_at[k] += ap[k]
            report.ndcg_at[k] += nd[k]
            report.p_at[k] += p[k]
        report.mrr += rr
    n = len(qrels)
    for d in (report.map_at, report.ndcg_at, report.p_at):
        for k in d:
            d[k] /= n
    report.mrr /= n
    return report


# -- files ------------------------------------------------------------------------------


def write_qrels(qrels: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in sorted(qrels):
            for c in sorted(qrels[q]):
                fh.write(f"{q}\t0\t{c}\t1\n")


def read_qrels(path) -> dict:
    qrels: dict[str, set] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}: line {lineno}: expected 'query 0 candidate relevance'")
            rels = qrels.setdefault(parts[0], set())
            if float(parts[3]) > 0:
                rels.add(parts[2])
    return qrels


def write_keys(keys, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k in keys:
            fh.write(f"{k}\n")


def paired_margins(a, b):
    """Per-seed differences a - b, and how many are strictly positive."""
    diffs = [x - y for x, y in zip(a, b)]
    return diffs, sum(d > 0 for d in diffs)


def dcg(hits) -> float:
    return float(sum(h / math.log2(i + 2) for i, h in enumerate(hits)))

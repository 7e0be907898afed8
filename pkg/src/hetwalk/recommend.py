"""Rank candidate vertices for a query by ReLU-clamped cosine similarity."""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np


class RankedList(NamedTuple):
    query_key: str
    entries: list  # (candidate_key, score), best first


def score(q, c) -> float:
    q = np.asarray(q, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if q.shape != c.shape:
        raise ValueError(f"dimension mismatch: {q.shape} vs {c.shape}")
    nq, nc = np.linalg.norm(q), np.linalg.norm(c)
    if nq == 0 or nc == 0:
        warnings.warn("cosine undefined for a zero vector; scoring 0")
        return 0.0
    return float(min(1.0, max(0.0, q @ c / (nq * nc))))


def _scores(qvec, cand):
    nq = np.linalg.norm(qvec)
    nc = np.linalg.norm(cand, axis=1)
    denom = nq * nc
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, cand @ qvec / np.where(denom > 0, denom, 1.0), 0.0)
    if nq == 0 or np.any(nc == 0):
        warnings.warn("cosine undefined for a zero vector; scoring 0")
    return np.clip(s, 0.0, 1.0)


def recommend(table, g, query: str, candidate_type: int, top_k: int | None = None,
              candidates=None) -> RankedList:
    """Rank the vertices of ``candidate_type`` for ``query``.

    ``candidates``, when given, restricts the pool (e.g. to a fixed candidate
    collection); every listed key must be a vertex of ``candidate_type``.
    """
    pool = candidates_of_type(g, candidate_type)
    if candidates is not None:
        allowed = set(pool)
        chosen = set(candidates)
        stray = sorted(chosen - allowed)
        if stray:
            raise ValueError(f"candidate {stray[0]!r} is not a vertex of type "
                             f"{g.schema.vertex_types[candidate_type]!r}")
        pool = chosen
    return rank_candidates(table, query, pool, top_k)


def rank_candidates(table, query: str, candidates, top_k: int | None = None) -> RankedList:
    """Score every candidate key against ``query``; ties go to the smaller key.

    ``table`` is anything with ``input_vectors`` and ``keys``.
    """
    index = {k: i for i, k in enumerate(table.keys)}
    if query not in index:
        raise KeyError(f"unknown query {query!r}")
    cand = sorted(set(candidates))
    if not cand:
        raise ValueError("empty candidate set")
    missing = [c for c in cand if c not in index]
    if missing:
        raise KeyError(f"candidate {missing[0]!r} has no embedding")
    vectors = table.input_vectors
    rows = np.array([index[c] for c in cand])
    s = _scores(np.asarray(vectors[index[query]], dtype=np.float64), np.asarray(vectors[rows], dtype=np.float64))
    # keys are sorted, so a stable sort on -score breaks ties by key ascending
    order = np.argsort(-s, kind="stable")
    if top_k is not None:
        order = order[:top_k]
    return RankedList(query, [(cand[i], float(s[i])) for i in order])


def candidates_of_type(g, type_id: int) -> list[str]:
    keys = [g.keys[v] for v in g.vertices_of_type(type_id)]
    if not keys:
        raise ValueError(f"vertex type {g.schema.vertex_types[type_id]!r} has no vertices")
    return keys


def write_run(lists, path, run_tag: str = "hetwalk") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rl in lists:
            for rank, (cand, s) in enumerate(rl.entries, start=1):
                fh.write(f"{rl.query_key}\t{cand}\t{rank}\t{s:.10f}\t{run_tag}\n")


def read_run(path) -> dict[str, list[tuple[str, float]]]:
    run: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        rows = []
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise ValueError(f"{path}: line {lineno}: expected 5 tab-separated columns")
            rows.append((parts[0], int(parts[2]), parts[1], float(parts[3])))
    for q, rank, cand, s in sorted(rows, key=lambda r: (r[0], r[1])):
        run.setdefault(q, []).append((cand, s))
    return run


def read_keys(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]

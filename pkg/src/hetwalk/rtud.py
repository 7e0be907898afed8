"""Relation type usefulness distributions learned by K-shortest-paths EM.

``beta`` is a |vertex types| x |relations| row-stochastic matrix.  Entries a
vertex type can never use (per the schema) are pinned at zero.  Training
alternates:

* E-step: for every labeled pair find the K lightest loopless paths under
  edge weight ``1 / (beta[type(v), z] * p(n | v, z))`` and accumulate a
  relation update vector ``theta`` from the relations on those paths;
* M-step: fold ``theta`` into every row of ``beta`` (DS or SDF update);

until enough pairs' path rankings stop changing.

Path ties are broken lexicographically on the step sequence, where a step is
the ``(vertex_id, relation_id)`` reached and the relation used to reach it.
"""

from __future__ import annotations

import heapq
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import _backend
from .hetgraph import GraphSchema, HetGraph

log = logging.getLogger(__name__)

F_THETA = ("RC", "LNC", "LDC")
F_BETA = ("DS", "SDF")


class NoTrainingSignal(ValueError):
    pass


@dataclass
class Rtud:
    beta: np.ndarray
    schema: GraphSchema

    @property
    def mask(self) -> np.ndarray:
        return self.schema.relation_mask()

    def copy(self) -> "Rtud":
        return Rtud(self.beta.copy(), self.schema)


def init_rtud(schema: GraphSchema) -> Rtud:
    mask = schema.relation_mask()
    counts = mask.sum(axis=1, keepdims=True)
    beta = np.where(mask, 1.0 / np.maximum(counts, 1), 0.0)
    return Rtud(beta, schema)


def edge_weight(beta, g: HetGraph, v: int, z: int, n: int) -> float:
    """Weight of the traversal edge (v --z--> n); ``inf`` when either factor is 0."""
    b = beta.beta if isinstance(beta, Rtud) else np.asarray(beta)
    nbrs, probs = g.neighbors(v, z)
    hit = np.flatnonzero(nbrs == n)
    if not len(hit):
        raise KeyError(f"no relation-{z} edge between vertex {v} and {n}")
    denom = b[g.vtype[v], z] * probs[hit[0]]
    return math.inf if denom == 0 else 1.0 / denom


def entry_weights(beta, g: HetGraph) -> np.ndarray:
    """Vectorized :func:`edge_weight` over every traversal entry."""
    b = beta.beta if isinstance(beta, Rtud) else np.asarray(beta)
    denom = b[g.vtype[g.entry_src], g.entry_rel] * g.prob
    with np.errstate(divide="ignore"):
        return np.where(denom > 0, 1.0 / denom, np.inf)


# -- shortest path kernel ------------------------------------------------------


def _chain(pred_e, entry_src, node, source, buf):
    n = 0
    while node != source:
        e = pred_e[node]
        buf[n] = e
        n += 1
        node = entry_src[e]
    i = 0
    j = n - 1
    while i < j:
        tmp = buf[i]
        buf[i] = buf[j]
        buf[j] = tmp
        i += 1
        j -= 1
    return n


def _lex_less(cand_e, x, pred_e, entry_src, nbr, ent_rel, source, buf_a, buf_b):
    # is path(entry_src[cand_e]) + cand_e lexicographically before path(x)?
    na = _chain(pred_e, entry_src, entry_src[cand_e], source, buf_a)
    buf_a[na] = cand_e
    na += 1
    nb = _chain(pred_e, entry_src, x, source, buf_b)
    m = na if na < nb else nb
    for i in range(m):
        ea = buf_a[i]
        eb = buf_b[i]
        if nbr[ea] != nbr[eb]:
            return nbr[ea] < nbr[eb]
        if ent_rel[ea] != ent_rel[eb]:
            return ent_rel[ea] < ent_rel[eb]
    return na < nb


def _spur_search(vptr, nbr, ent_rel, entry_src, weight, banned_v, banned_e,
                 source, target, start_dist, dist, pred_e):
    """Label-setting search from ``source`` to ``target``.

    Among minimum-weight paths the lexicographically smallest step sequence
    wins.  Distances start at ``start_dist`` so totals accumulate left to
    right exactly as a plain sum over the full path would.
    """
    nv = vptr.shape[0] - 1
    for i in range(nv):
        dist[i] = np.inf
        pred_e[i] = -1
    done = np.zeros(nv, dtype=np.bool_)
    buf_a = np.empty(nv + 1, dtype=np.int64)
    buf_b = np.empty(nv + 1, dtype=np.int64)
    dist[source] = start_dist
    heap = [(start_dist, source)]
    while len(heap) > 0:
        d, u = heapq.heappop(heap)
        if done[u] or d > dist[u]:
            continue
        done[u] = True
        if u == target:
            return True
        for e in range(vptr[u], vptr[u + 1]):
            if banned_e[e]:
                continue
            w = weight[e]
            if w == np.inf:
                continue
            x = nbr[e]
            if banned_v[x] or done[x]:
                continue
            nd = d + w
            if nd < dist[x]:
                dist[x] = nd
                pred_e[x] = e
                heapq.heappush(heap, (nd, x))
            elif nd == dist[x] and _lex_less(e, x, pred_e, entry_src, nbr, ent_rel, source, buf_a, buf_b):
                pred_e[x] = e
    return False


_chain_nb = _backend.jit_variant(_chain)
_lex_less_nb = _backend.jit_variant(_lex_less, _chain=_chain_nb)
_spur_search_nb = _backend.jit_variant(_spur_search, _lex_less=_lex_less_nb)


class Path(NamedTuple):
    weight: float
    vertices: tuple
    rels: tuple
    entries: tuple

    @property
    def steps(self) -> tuple:
        return tuple(zip(self.vertices[1:], self.rels))

    def __len__(self):  # number of relations
        return len(self.rels)


def _make_path(g: HetGraph, source: int, entries, weight: np.ndarray) -> Path:
    total = 0.0
    verts = [source]
    for e in entries:
        total += float(weight[e])
        verts.append(int(g.nbr[e]))
    return Path(total, tuple(verts), tuple(int(g.entry_rel[e]) for e in entries), tuple(int(e) for e in entries))


class _Searcher:
    def __init__(self, g: HetGraph, weight: np.ndarray, backend=None):
        self.g = g
        self.weight = np.ascontiguousarray(weight, dtype=np.float64)
        self.kernel = _spur_search_nb if _backend.resolve(backend) == "numba" else _spur_search
        n = g.n_vertices
        self.dist = np.empty(n)
        self.pred = np.empty(n, dtype=np.int64)

    def search(self, source, target, start_dist, banned_v, banned_e):
        g = self.g
        found = self.kernel(g.vptr, g.nbr, g.entry_rel, g.entry_src, self.weight, banned_v, banned_e,
                            np.int64(source), np.int64(target), float(start_dist), self.dist, self.pred)
        if not found:
            return None
        out = []
        node = target
        while node != source:
            e = int(self.pred[node])
            out.append(e)
            node = int(g.entry_src[e])
        return out[::-1]


def k_shortest_paths(g: HetGraph, beta, s: int, t: int, K: int, exclude_direct: bool = False,
                     backend=None, weight=None, _searcher=None) -> list[Path]:
    """K lightest loopless s-t paths (Yen's deviation algorithm), nondecreasing weight.

    ``weight`` may be passed to skip recomputing entry weights from ``beta``.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if s == t:
        raise ValueError("source and target must differ")
    if _searcher is None:
        _searcher = _Searcher(g, entry_weights(beta, g) if weight is None else weight, backend)
    searcher = _searcher
    weight = searcher.weight

    base_e = np.zeros(g.n_entries, dtype=np.bool_)
    if exclude_direct:
        es, en = g.entry_src, g.nbr
        base_e |= ((es == s) & (en == t)) | ((es == t) & (en == s))
    no_v = np.zeros(g.n_vertices, dtype=np.bool_)

    first = searcher.search(s, t, 0.0, no_v, base_e)
    if first is None:
        return []
    accepted = [_make_path(g, s, first, weight)]
    seen = {accepted[0].steps}
    candidates: list[tuple] = []

    while len(accepted) < K:
        prev = accepted[-1]
        for i in range(len(prev.entries)):
            spur = prev.vertices[i]
            root = prev.entries[:i]
            banned_e = base_e.copy()
            for p in accepted:
                if p.entries[:i] == root and len(p.entries) > i:
                    banned_e[p.entries[i]] = True
            banned_v = no_v.copy()
            banned_v[list(prev.vertices[:i])] = True
            root_cost = 0.0
            for e in root:
                root_cost += float(weight[e])
            tail = searcher.search(spur, t, root_cost, banned_v, banned_e)
            if tail is None:
                continue
            path = _make_path(g, s, list(root) + tail, weight)
            if path.steps in seen:
                continue
            seen.add(path.steps)
            heapq.heappush(candidates, (path.weight, path.steps, path))
        if not candidates:
            break
        accepted.append(heapq.heappop(candidates)[2])
    return accepted


# -- EM --------------------------------------------------------------------------


def accumulate_theta(theta: np.ndarray, ranking: Sequence[Path], variant: str) -> np.ndarray:
    """Add one pair's path ranking into ``theta`` in place (and return it)."""
    variant = variant.upper()
    if variant not in F_THETA:
        raise ValueError(f"unknown theta variant {variant!r}; expected one of {F_THETA}")
    for k, path in enumerate(ranking, start=1):
        L = len(path.rels)
        if variant == "RC":
            inc = 1.0
        elif variant == "LNC":
            inc = 1.0 / L
        else:
            inc = 1.0 / math.log2(k + 1)
        for j in path.rels:
            theta[j] += inc
    return theta


def m_step(beta, theta: np.ndarray, variant: str, lam: float = 0.2, mask=None) -> np.ndarray:
    """One RTUD update; returns a new matrix.  Schema-zero entries stay zero."""
    if isinstance(beta, Rtud):
        mask = beta.mask if mask is None else mask
        beta = beta.beta
    beta = np.asarray(beta, dtype=np.float64)
    mask = beta > 0 if mask is None else np.asarray(mask, dtype=bool)
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    variant = variant.upper()
    if variant not in F_BETA:
        raise ValueError(f"unknown beta variant {variant!r}; expected one of {F_BETA}")
    if variant == "SDF" and not 0 < lam <= 1:
        raise ValueError("lambda must lie in (0, 1]")

    out = beta.copy()
    for i in range(beta.shape[0]):
        m = mask[i]
        n_perm = int(m.sum())
        if n_perm == 0:
            continue
        mass = np.where(m, beta[i] + theta, 0.0)
        total = mass.sum()
        if total <= 0:
            warnings.warn(f"RTUD row {i} has no mass to update; left unchanged")
            continue
        if variant == "DS":
            row = mass
        else:
            row = np.where(m, lam * mass / total + (1.0 - lam) / n_perm, 0.0)
        out[i] = row / row.sum()
    return out


def _ranking_key(ranking, as_sets=False):
    keys = [(p.vertices, p.rels) for p in ranking]
    return frozenset(keys) if as_sets else tuple(keys)


def stability_fraction(prev, curr, as_sets: bool = False) -> float:
    """Fraction of pairs whose path ranking is unchanged between iterations."""
    if len(prev) != len(curr):
        raise ValueError(f"mismatched pair sets: {len(prev)} vs {len(curr)} rankings")
    if not curr:
        raise ValueError("empty ranking set")
    same = sum(_ranking_key(a, as_sets) == _ranking_key(b, as_sets) for a, b in zip(prev, curr))
    return same / len(curr)


class EmIteration(NamedTuple):
    iteration: int
    stability: float
    theta_l1: float
    beta: np.ndarray


def rank_pairs(g: HetGraph, beta, pairs, K, exclude_direct=False, workers=1, backend=None):
    weight = entry_weights(beta, g)
    backend = _backend.resolve(backend)

    def run(chunk):
        searcher = _Searcher(g, weight, backend)
        return [k_shortest_paths(g, None, s, t, K, exclude_direct, _searcher=searcher) for s, t in chunk]

    pairs = list(pairs)
    if workers <= 1 or len(pairs) < 2:
        return run(pairs)
    chunks = [pairs[i::workers] for i in range(workers)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, chunks))
    out = [None] * len(pairs)
    for w, part in enumerate(parts):
        out[w::workers] = part
    return out


def train_rtud(g: HetGraph, pairs, K: int = 3, f_theta: str = "LNC", f_beta: str = "SDF",
               lam: float = 0.2, epsilon: float = 80.0, max_iters: int = 50,
               exclude_direct: bool = False, compare_sets: bool = False,
               workers: int = 1, backend=None, init: Rtud | None = None):
    """Run the EM loop.  Returns ``(rtud, trace)``; ``trace[-1].stability`` tells convergence."""
    pairs = [(int(s), int(t)) for s, t in pairs]
    if not pairs:
        raise ValueError("labeled pair set is empty")
    if not 0 < epsilon <= 100:
        raise ValueError("epsilon must lie in (0, 100]")
    if K < 1 or max_iters < 1:
        raise ValueError("K and max_iters must be >= 1")
    for s, t in pairs:
        if s == t:
            raise ValueError(f"labeled pair ({s}, {t}) has identical endpoints")
    f_theta, f_beta = f_theta.upper(), f_beta.upper()
    if f_theta not in F_THETA or f_beta not in F_BETA:
        raise ValueError(f"variants must be in {F_THETA} and {F_BETA}")

    rtud = (init or init_rtud(g.schema)).copy()
    mask = rtud.mask
    threshold = epsilon / 100.0
    trace: list[EmIteration] = []
    prev = None
    for it in range(1, max_iters + 1):
        rankings = rank_pairs(g, rtud, pairs, K, exclude_direct, workers, backend)
        if prev is None and not any(rankings):
            raise NoTrainingSignal("no training signal: every labeled pair is disconnected")
        theta = np.zeros(g.schema.n_relations)
        for ranking in rankings:
            accumulate_theta(theta, ranking, f_theta)
        rtud.beta = m_step(rtud.beta, theta, f_beta, lam, mask)
        stab = 0.0 if prev is None else stability_fraction(prev, rankings, compare_sets)
        trace.append(EmIteration(it, stab, float(np.abs(theta).sum()), rtud.beta.copy()))
        log.info("EM iteration %d: stability %.4f, |theta|_1 %.6g", it, stab, trace[-1].theta_l1)
        if prev is not None and stab >= threshold:
            break
        prev = rankings
    else:
        warnings.warn(f"RTUD training did not converge within {max_iters} iterations")
    return rtud, trace


def converged(trace, epsilon: float) -> bool:
    return bool(trace) and trace[-1].iteration > 1 and trace[-1].stability >= epsilon / 100.0


# -- files -------------------------------------------------------------------------


def write_rtud(rtud: Rtud, path) -> None:
    schema = rtud.schema
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(["type", *schema.relation_types]) + "\n")
        for i, name in enumerate(schema.vertex_types):
            fh.write("\t".join([name, *(f"{x:.9g}" for x in rtud.beta[i])]) + "\n")


def read_rtud(schema: GraphSchema, path) -> Rtud:
    with open(path, encoding="utf-8") as fh:
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    header = rows[0][1:]
    if list(header) != list(schema.relation_types):
        raise ValueError(f"{path}: relation columns {header} do not match the schema")
    beta = np.zeros((schema.n_vertex_types, schema.n_relations))
    seen = set()
    for row in rows[1:]:
        i = schema.vertex_type_id(row[0])
        beta[i] = [float(x) for x in row[1:]]
        seen.add(i)
    if len(seen) != schema.n_vertex_types:
        raise ValueError(f"{path}: expected one row per vertex type")
    if np.any(beta[~schema.relation_mask()] != 0):
        raise ValueError(f"{path}: nonzero entry where the schema forbids the relation")
    return Rtud(beta, schema)


def write_trace(trace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            fh.write(f"{rec.iteration}\t{rec.stability:.6f}\t{rec.theta_l1:.9g}\n")


def read_pairs(g: HetGraph, path) -> list[tuple[int, int]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}: line {lineno}: expected 'src_key<TAB>dst_key'")
            pairs.append((g.vertex(parts[0]), g.vertex(parts[1])))
    return pairs

"""Two-level random walks over a typed graph.

Each step draws a relation type for the current vertex, then a neighbor
from that relation's transition row.  The relation draw uses the vertex
type's RTUD row restricted to the relation types actually present at the
vertex (renormalized); in ``uniform`` mode every present type is equally
likely.  A vertex with nothing to draw ends the walk early.

Walks take ``l`` steps, so a complete walk holds ``l + 1`` vertices.  All
randomness is counter-based and keyed by ``(seed, start, iteration)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _backend
from ._backend import prange
from ._rng import mix, mix_np, stream_key, uniform, uniform_np
from .hetgraph import HetGraph, sample_neighbor

MODES = ("hierarchical", "uniform")


@dataclass
class WalkConfig:
    r: int = 10
    l: int = 80
    seed: int = 0
    mode: str = "hierarchical"

    def __post_init__(self):
        if self.r < 1 or self.l < 1:
            raise ValueError("walks per vertex r and walk length l must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"walk mode must be one of {MODES}")


class WalkCorpus:
    """Walks stored as a padded ``(n_walks, l + 1)`` id matrix plus lengths.

    ``rels[w, i]``, when present, is the relation type taken by step ``i``.
    """

    def __init__(self, walks: np.ndarray, lengths: np.ndarray, rels: np.ndarray | None = None):
        self.walks = walks
        self.lengths = lengths
        self.rels = rels

    @classmethod
    def from_lists(cls, seqs) -> "WalkCorpus":
        seqs = [list(s) for s in seqs]
        width = max((len(s) for s in seqs), default=1)
        walks = np.full((len(seqs), width), -1, dtype=np.int64)
        for i, s in enumerate(seqs):
            walks[i, :len(s)] = s
        return cls(walks, np.array([len(s) for s in seqs], dtype=np.int64))

    def __len__(self):
        return len(self.lengths)

    def __getitem__(self, i):
        return self.walks[i, :self.lengths[i]]

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def stats(self, l: int | None = None) -> dict:
        full = self.walks.shape[1] if l is None else l + 1
        return {
            "walks": int(len(self)),
            "truncated": int(np.sum(self.lengths < full)),
            "mean_length": float(self.lengths.mean()) if len(self) else 0.0,
        }


def relation_table(g: HetGraph, beta, mode: str = "hierarchical") -> np.ndarray:
    """Cumulative relation-draw probabilities per traversal group.

    ``table[g]`` is the cumulative mass up to and including group ``g`` among
    the groups of its vertex; the last group carrying mass is pinned to 1.0.
    Vertices whose groups all carry zero mass get an all-zero run.
    """
    if mode not in MODES:
        raise ValueError(f"walk mode must be one of {MODES}")
    if mode == "uniform":
        mass = np.ones(len(g.grel))
    else:
        b = beta.beta if hasattr(beta, "beta") else np.asarray(beta)
        mass = b[g.vtype[g.gvertex], g.grel].astype(np.float64)
    cum = np.zeros(len(mass))
    for v in np.flatnonzero(np.diff(g.gptr) > 0):
        lo, hi = g.gptr[v], g.gptr[v + 1]
        m = mass[lo:hi]
        total = m.sum()
        if total <= 0:
            continue
        c = np.cumsum(m) / total
        last = lo + int(np.flatnonzero(m > 0)[-1])
        c[last - lo:] = 1.0
        cum[lo:hi] = c
    return cum


def _walk_kernel(gptr, gstart, grel, gcum, nbr, alias_prob, alias_idx, starts, iters, key, l, out, rels, lengths):
    n = starts.shape[0]
    for w in prange(n):
        wkey = mix(mix(key, starts[w]), iters[w])
        v = starts[w]
        out[w, 0] = v
        length = 1
        for step in range(l):
            lo = gptr[v]
            hi = gptr[v + 1]
            u1 = uniform(wkey, 3 * step)
            chosen = -1
            for grp in range(lo, hi):
                if u1 < gcum[grp]:
                    chosen = grp
                    break
            if chosen < 0:
                break
            a = gstart[chosen]
            size = gstart[chosen + 1] - a
            i = int(uniform(wkey, 3 * step + 1) * size)
            if uniform(wkey, 3 * step + 2) >= alias_prob[a + i]:
                i = alias_idx[a + i]
            v = nbr[a + i]
            out[w, length] = v
            rels[w, step] = grel[chosen]
            length += 1
        lengths[w] = length


_walk_kernel_nb = _backend.jit_variant(_walk_kernel)
_walk_kernel_par = _backend.jit_variant(
    _walk_kernel, jit_options={"parallel": True},
    prange=_backend.numba.prange if _backend.HAS_NUMBA else range,
)


def _walks_numpy(g: HetGraph, gcum, starts, iters, key, l):
    n = len(starts)
    out = np.full((n, l + 1), -1, dtype=np.int64)
    rels = np.full((n, l), -1, dtype=np.int32)
    lengths = np.ones(n, dtype=np.int64)
    with np.errstate(over="ignore"):
        wkey = mix_np(mix_np(key, starts.astype(np.uint64)), iters.astype(np.uint64))
    cur = starts.copy()
    out[:, 0] = cur
    alive = np.arange(n)
    max_groups = int(np.diff(g.gptr).max()) if g.n_vertices else 0
    for step in range(l):
        if not len(alive):
            break
        v = cur[alive]
        k = wkey[alive]
        with np.errstate(over="ignore"):
            u1 = uniform_np(k, np.uint64(3 * step))
            u2 = uniform_np(k, np.uint64(3 * step + 1))
            u3 = uniform_np(k, np.uint64(3 * step + 2))
        lo, hi = g.gptr[v], g.gptr[v + 1]
        chosen = np.full(len(v), -1, dtype=np.int64)
        for j in range(max_groups):
            grp = lo + j
            open_ = (chosen < 0) & (grp < hi)
            if not open_.any():
                break
            hit = open_.copy()
            hit[open_] = u1[open_] < gcum[grp[open_]]
            chosen[hit] = grp[hit]
        ok = chosen >= 0
        alive, v, chosen, u2, u3 = alive[ok], v[ok], chosen[ok], u2[ok], u3[ok]
        a = g.gstart[chosen]
        size = g.gstart[chosen + 1] - a
        i = (u2 * size).astype(np.int64)
        flip = u3 >= g.alias_prob[a + i]
        i[flip] = g.alias_idx[a + i][flip]
        nxt = g.nbr[a + i]
        cur[alive] = nxt
        out[alive, step + 1] = nxt
        rels[alive, step] = g.grel[chosen]
        lengths[alive] += 1
    return out, rels, lengths


def walk_tasks(n_vertices: int, r: int):
    """(start, iteration) for every walk, iteration-major like the reference loop."""
    starts = np.tile(np.arange(n_vertices, dtype=np.int64), r)
    iters = np.repeat(np.arange(r, dtype=np.int64), n_vertices)
    return starts, iters


def run_walks(g: HetGraph, gcum, starts, iters, seed: int, l: int, backend=None, workers: int = 1):
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    iters = np.ascontiguousarray(iters, dtype=np.int64)
    key = stream_key(seed, 0x5741_4C4B)
    if _backend.resolve(backend) == "numpy":
        out, rels, lengths = _walks_numpy(g, gcum, starts, iters, key, l)
    else:
        out = np.full((len(starts), l + 1), -1, dtype=np.int64)
        rels = np.full((len(starts), l), -1, dtype=np.int32)
        lengths = np.zeros(len(starts), dtype=np.int64)
        kernel = _walk_kernel_nb
        if workers > 1:
            _backend.set_threads(workers)
            kernel = _walk_kernel_par
        kernel(g.gptr, g.gstart, g.grel, gcum, g.nbr, g.alias_prob, g.alias_idx, starts, iters, key, l,
               out, rels, lengths)
    return WalkCorpus(out, lengths, rels)


def generate_corpus(g: HetGraph, beta, cfg: WalkConfig, backend=None, workers: int = 1) -> WalkCorpus:
    """``cfg.r`` walks from every vertex; identical for any backend or worker count."""
    gcum = relation_table(g, beta, cfg.mode)
    starts, iters = walk_tasks(g.n_vertices, cfg.r)
    return run_walks(g, gcum, starts, iters, cfg.seed, cfg.l, backend, workers)


def hierarchical_walk(g: HetGraph, beta, start: int, l: int, rng: np.random.Generator,
                      mode: str = "hierarchical") -> list[int]:
    """One walk driven by a numpy Generator (reference path for tests and ad-hoc use)."""
    if not 0 <= start < g.n_vertices:
        raise KeyError(f"unknown vertex id {start}")
    b = None if mode == "uniform" else (beta.beta if hasattr(beta, "beta") else np.asarray(beta))
    walk = [start]
    v = start
    for _ in range(l):
        rels = g.grel[g.gptr[v]:g.gptr[v + 1]]
        if not len(rels):
            break
        mass = np.ones(len(rels)) if b is None else b[g.vtype[v], rels]
        total = mass.sum()
        if total <= 0:
            break
        z = int(rels[rng.choice(len(rels), p=mass / total)])
        v = sample_neighbor(g, v, z, rng)
        walk.append(v)
    return walk


# -- files ---------------------------------------------------------------------


def write_corpus(corpus: WalkCorpus, g: HetGraph, path, l: int | None = None) -> None:
    """Text (one walk per line, space-separated keys) or ``.npz`` with a key dictionary."""
    path = Path(path)
    if path.suffix == ".npz":
        flat = np.concatenate([corpus[i] for i in range(len(corpus))]) if len(corpus) else np.zeros(0, np.int64)
        np.savez_compressed(path, ids=flat, lengths=corpus.lengths, keys=np.array(g.keys, dtype=object))
    else:
        bad = [k for k in g.keys if any(ch.isspace() for ch in k)]
        if bad:
            raise ValueError(f"vertex key {bad[0]!r} contains whitespace; use the .npz corpus format")
        keys = g.keys
        with open(path, "w", encoding="utf-8") as fh:
            for walk in corpus:
                fh.write(" ".join(keys[v] for v in walk.tolist()) + "\n")
    stats_path = path.with_name(path.name + ".stats.json")
    stats_path.write_text(json.dumps(corpus.stats(l), indent=2, sort_keys=True) + "\n")


def read_corpus(path, g: HetGraph) -> WalkCorpus:
    path = Path(path)
    if path.suffix == ".npz":
        data = np.load(path, allow_pickle=True)
        remap = np.array([g.vertex(k) for k in data["keys"].tolist()], dtype=np.int64)
        ids = remap[data["ids"]] if len(data["ids"]) else data["ids"]
        lengths = data["lengths"]
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        return WalkCorpus.from_lists(ids[offsets[i]:offsets[i + 1]] for i in range(len(lengths)))
    seqs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                seqs.append([g.vertex(k) for k in parts])
    return WalkCorpus.from_lists(seqs)

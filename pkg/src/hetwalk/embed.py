"""Skip-gram over walk corpora with type-aware negative sampling.

For every (center, context) pair within the window the loss is

    -log s(f[c] . h[o]) - sum_k log s(-f[c] . h[n_k])

with ``f`` the input vectors, ``h`` the context vectors and ``s`` the
logistic function.  In ``heterogeneous`` mode the negatives ``n_k`` are drawn
only from vertices of the context vertex's type (a sampled stand-in for a
softmax normalized within that type); ``ordinary`` mode draws from one global
pool.  Both pools use corpus frequencies raised to 0.75.

Each SGD step applies the exact gradient of one pair's loss evaluated at the
current parameters.  The numba backend runs pairs one at a time (optionally
Hogwild-style across threads); the numpy backend applies the same gradients
in mini-batches, so with ``batch_size=1`` it reproduces the numba path.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from ._backend import prange
from ._rng import mix, mix_np, stream_key, uniform, uniform_np
from .hetgraph import HetGraph, _build_alias
from .walks import WalkCorpus

log = logging.getLogger(__name__)

MODES = ("heterogeneous", "ordinary")
_MAX_TRIES = 32
MAX_LR = 1.0  # larger initial steps are clamped
MAX_STEP = 1.0  # cap on the L2 norm of any single vector update; inactive at normal step sizes


@dataclass
class TrainConfig:
    dim: int = 128
    window: int = 10
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_lr_frac: float = 1e-4
    mode: str = "heterogeneous"
    batch_size: int = 256  # numpy backend only

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.negatives < 1 or self.epochs < 1:
            raise ValueError("dim, window, negatives and epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("initial step size must be positive")
        if self.lr > MAX_LR:
            warnings.warn(f"initial step size {self.lr} clamped to {MAX_LR}")
            self.lr = MAX_LR
        if self.mode not in MODES:
            raise ValueError(f"embedding mode must be one of {MODES}")


@dataclass
class EmbeddingTable:
    input_vectors: np.ndarray
    context_vectors: np.ndarray
    keys: list = field(default_factory=list)
    loss_history: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    def vector(self, key: str) -> np.ndarray:
        return self.input_vectors[self.keys.index(key)]


# -- context windows --------------------------------------------------------------


def context_pairs(walk, ws: int, vtype=None) -> list[tuple]:
    """All (center, context, context_type) with 0 < |i - j| <= ws, in position order."""
    if ws < 1:
        raise ValueError("window must be >= 1")
    walk = list(walk)
    out = []
    for i, c in enumerate(walk):
        for j in range(max(0, i - ws), min(len(walk), i + ws + 1)):
            if j != i:
                o = walk[j]
                out.append((c, o, None if vtype is None else int(vtype[o])))
    return out


def pairs_per_walk(lengths: np.ndarray, ws: int) -> np.ndarray:
    L = np.asarray(lengths, dtype=np.int64)
    i = np.arange(L.max() if len(L) else 0)
    # per position: (#positions after, capped) + (#before, capped)
    after = np.minimum(ws, np.maximum(L[:, None] - 1 - i[None, :], 0))
    before = np.minimum(ws, i)[None, :] * (i[None, :] < L[:, None])
    return (after + before).sum(axis=1)


# -- negative pools ---------------------------------------------------------------


class NegativeSampler:
    """Smoothed-unigram pools: one per vertex type plus a global one.

    ``pool_of[v]`` names the pool used when ``v`` is the positive context.
    """

    def __init__(self, g: HetGraph, counts: np.ndarray, mode: str = "heterogeneous", power: float = 0.75):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.mode = mode
        self.vtype = g.vtype
        counts = np.asarray(counts, dtype=np.float64)
        n_types = g.schema.n_vertex_types
        members, masses = [], []
        for t in range(n_types):
            vs = np.flatnonzero((g.vtype == t) & (counts > 0))
            members.append(vs)
            masses.append(counts[vs] ** power)
        allv = np.flatnonzero(counts > 0)
        members.append(allv)
        masses.append(counts[allv] ** power)
        self.global_pool = n_types

        sizes = np.array([len(m) for m in members], dtype=np.int64)
        self.ptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.verts = np.concatenate(members).astype(np.int64) if len(allv) else np.zeros(0, np.int64)
        self.prob = np.concatenate([m / m.sum() if len(m) else m for m in masses])
        self.alias_prob = np.ones(len(self.verts))
        self.alias_idx = np.zeros(len(self.verts), dtype=np.int64)
        _build_alias(self.ptr, self.prob, self.alias_prob, self.alias_idx)

        self.pool_of = np.full(g.n_vertices, self.global_pool, dtype=np.int64)
        if mode == "heterogeneous":
            for t in range(n_types):
                vs = g.vtype == t
                if sizes[t] >= 2:
                    self.pool_of[vs] = t
                elif vs.any():
                    warnings.warn(
                        f"vertex type {g.schema.vertex_types[t]!r} has fewer than 2 sampled vertices; "
                        "its negatives come from the global pool"
                    )

    def distribution(self, positive: int) -> tuple[np.ndarray, np.ndarray]:
        """(vertices, probabilities) a negative for ``positive`` is drawn from, excluding it."""
        p = self.pool_of[positive]
        lo, hi = self.ptr[p], self.ptr[p + 1]
        vs, pr = self.verts[lo:hi], self.prob[lo:hi].copy()
        pr[vs == positive] = 0.0
        return vs, pr / pr.sum()

    def draw(self, positive: int, rng: np.random.Generator) -> int:
        p = self.pool_of[positive]
        lo, hi = self.ptr[p], self.ptr[p + 1]
        n = hi - lo
        if n == 0 or (n == 1 and self.verts[lo] == positive):
            raise ValueError("negative pool has no vertex other than the positive")
        for _ in range(_MAX_TRIES):
            i = int(rng.integers(n))
            if rng.random() >= self.alias_prob[lo + i]:
                i = int(self.alias_idx[lo + i])
            if self.verts[lo + i] != positive:
                return int(self.verts[lo + i])
        i = int(np.flatnonzero(self.verts[lo:hi] == positive)[0])
        return int(self.verts[lo + (i + 1) % n])


def negative_sample(sampler: NegativeSampler, positive_context: int, rng: np.random.Generator) -> int:
    return sampler.draw(positive_context, rng)


# -- loss ------------------------------------------------------------------------------


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def ns_loss_and_grad(x, h_pos, h_negs):
    """Loss of one (center, context, negatives) tuple and its gradients.

    Returns ``(loss, d_x, d_h_pos, d_h_negs)``.
    """
    x = np.asarray(x, dtype=np.float64)
    h_negs = np.atleast_2d(h_negs)
    dp = x @ h_pos
    dn = h_negs @ x
    loss = _softplus(-dp) + _softplus(dn).sum()
    cp = _sigmoid(dp) - 1.0
    cn = _sigmoid(dn)
    d_x = cp * h_pos + cn @ h_negs
    return float(loss), d_x, cp * x, cn[:, None] * x[None, :]


# -- kernels ------------------------------------------------------------------------------


def _draw_negative(key, counter, positive, pool, ptr, verts, alias_prob, alias_idx):
    lo = ptr[pool]
    n = ptr[pool + 1] - lo
    for attempt in range(_MAX_TRIES):
        c = 2 * (counter * _MAX_TRIES + attempt)
        i = int(uniform(key, c) * n)
        if uniform(key, c + 1) >= alias_prob[lo + i]:
            i = alias_idx[lo + i]
        if verts[lo + i] != positive:
            return verts[lo + i]
    for i in range(n):
        if verts[lo + i] == positive:
            return verts[lo + (i + 1) % n]
    return verts[lo]


def _sgd_epoch(walks, lengths, pair_offset, inp, ctx, pool_of, ptr, verts, alias_prob, alias_idx,
               vtype, window, negatives, key, lr0, min_frac, done_before, total_pairs, stats):
    dim = inp.shape[1]
    total_loss = 0.0
    mismatched = 0
    for w in prange(walks.shape[0]):
        L = lengths[w]
        p = pair_offset[w]
        grad = np.empty(dim)
        targets = np.empty(negatives + 1, dtype=np.int64)
        coefs = np.empty(negatives + 1)
        for i in range(L):
            c = walks[w, i]
            lo = i - window if i > window else 0
            hi = i + window + 1 if i + window + 1 < L else L
            for j in range(lo, hi):
                if j == i:
                    continue
                o = walks[w, j]
                frac = 1.0 - (done_before + p) / total_pairs
                lr = lr0 * (frac if frac > min_frac else min_frac)
                pkey = mix(key, p)
                targets[0] = o
                pool = pool_of[o]
                for k in range(negatives):
                    nv = _draw_negative(pkey, k, o, pool, ptr, verts, alias_prob, alias_idx)
                    targets[k + 1] = nv
                    if vtype[nv] != vtype[o]:
                        mismatched += 1
                loss = 0.0
                for k in range(negatives + 1):
                    t = targets[k]
                    dot = 0.0
                    for d in range(dim):
                        dot += inp[c, d] * ctx[t, d]
                    s = 0.5 * (1.0 + math.tanh(0.5 * dot))
                    if k == 0:
                        coefs[k] = s - 1.0
                        z = -dot
                    else:
                        coefs[k] = s
                        z = dot
                    loss += (z if z > 0.0 else 0.0) + math.log1p(math.exp(-abs(z)))
                for d in range(dim):
                    grad[d] = 0.0
                for k in range(negatives + 1):
                    t = targets[k]
                    for d in range(dim):
                        grad[d] += coefs[k] * ctx[t, d]
                xn = 0.0
                gn = 0.0
                for d in range(dim):
                    xn += inp[c, d] * inp[c, d]
                    gn += grad[d] * grad[d]
                xn = math.sqrt(xn)
                gstep = lr
                if lr * math.sqrt(gn) > MAX_STEP:
                    gstep = MAX_STEP / math.sqrt(gn)
                for k in range(negatives + 1):
                    t = targets[k]
                    step = lr * coefs[k]
                    if abs(step) * xn > MAX_STEP:
                        step = step * (MAX_STEP / (abs(step) * xn))
                    for d in range(dim):
                        ctx[t, d] -= step * inp[c, d]
                for d in range(dim):
                    inp[c, d] -= gstep * grad[d]
                total_loss += loss
                p += 1
    stats[0] += mismatched
    return total_loss


_draw_negative_nb = _backend.jit_variant(_draw_negative)
_sgd_epoch_nb = _backend.jit_variant(_sgd_epoch, _draw_negative=_draw_negative_nb)
_sgd_epoch_par = _backend.jit_variant(
    _sgd_epoch, jit_options={"parallel": True}, _draw_negative=_draw_negative_nb,
    prange=_backend.numba.prange if _backend.HAS_NUMBA else range,
)


def _enumerate_pairs(walks, lengths, window, rows):
    """(center, context) arrays for walk rows ``rows`` in canonical order."""
    W = walks[rows]
    L = lengths[rows]
    width = W.shape[1]
    offs = np.concatenate([np.arange(-window, 0), np.arange(1, window + 1)])
    i = np.arange(width)
    j = i[:, None] + offs[None, :]
    valid = (i[None, :, None] < L[:, None, None]) & (j[None] >= 0) & (j[None] < L[:, None, None])
    centers = np.broadcast_to(W[:, :, None], valid.shape)[valid]
    contexts = W[:, np.clip(j, 0, width - 1)][valid]
    return centers, contexts


def _draw_negatives_np(sampler, pkeys, positives, negatives):
    n = len(positives)
    out = np.empty((n, negatives), dtype=np.int64)
    pool = sampler.pool_of[positives]
    lo = sampler.ptr[pool]
    size = sampler.ptr[pool + 1] - lo
    for k in range(negatives):
        res = np.full(n, -1, dtype=np.int64)
        todo = np.arange(n)
        for attempt in range(_MAX_TRIES):
            if not len(todo):
                break
            c = np.uint64(2 * (k * _MAX_TRIES + attempt))
            with np.errstate(over="ignore"):
                u1 = uniform_np(pkeys[todo], c)
                u2 = uniform_np(pkeys[todo], c + np.uint64(1))
            a = lo[todo]
            i = (u1 * size[todo]).astype(np.int64)
            flip = u2 >= sampler.alias_prob[a + i]
            i[flip] = sampler.alias_idx[a + i][flip]
            cand = sampler.verts[a + i]
            ok = cand != positives[todo]
            res[todo[ok]] = cand[ok]
            todo = todo[~ok]
        for r in todo:
            a, s = lo[r], size[r]
            seg = sampler.verts[a:a + s]
            i = int(np.flatnonzero(seg == positives[r])[0])
            res[r] = seg[(i + 1) % s]
        out[:, k] = res
    return out


def _sgd_epoch_numpy(corpus, inp, ctx, sampler, cfg, key, done_before, total_pairs, stats):
    walks, lengths = corpus.walks, corpus.lengths
    vtype = sampler.vtype
    total_loss = 0.0
    p = 0
    chunk_rows = max(1, 2_000_000 // max(1, walks.shape[1] * 2 * cfg.window))
    B = max(1, int(cfg.batch_size))
    for start in range(0, len(lengths), chunk_rows):
        rows = np.arange(start, min(len(lengths), start + chunk_rows))
        centers, contexts = _enumerate_pairs(walks, lengths, cfg.window, rows)
        for b in range(0, len(centers), B):
            C = centers[b:b + B]
            O = contexts[b:b + B]
            idx = np.arange(p, p + len(C), dtype=np.uint64)
            with np.errstate(over="ignore"):
                pkeys = mix_np(key, idx)
            N = _draw_negatives_np(sampler, pkeys, O, cfg.negatives)
            stats[0] += int(np.sum(vtype[N] != vtype[O][:, None]))
            frac = 1.0 - (done_before + p + np.arange(len(C))) / total_pairs
            lr = cfg.lr * np.maximum(frac, cfg.min_lr_frac)
            T = np.concatenate([O[:, None], N], axis=1)
            X = inp[C]
            H = ctx[T]
            dots = np.einsum("bkd,bd->bk", H, X)
            sgn = np.ones_like(dots)
            sgn[:, 0] = -1.0
            total_loss += float(_softplus(sgn * dots).sum())
            coef = _sigmoid(dots)
            coef[:, 0] -= 1.0
            grad_x = np.einsum("bk,bkd->bd", coef, H)
            step = lr[:, None] * coef
            mag = np.abs(step) * np.linalg.norm(X, axis=1)[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(mag > MAX_STEP, step * (MAX_STEP / mag), step)
                gn = np.linalg.norm(grad_x, axis=1)
                gstep = np.where(lr * gn > MAX_STEP, MAX_STEP / gn, lr)
            np.add.at(ctx, T.ravel(), (-step[:, :, None] * X[:, None, :]).reshape(-1, X.shape[1]))
            np.add.at(inp, C, -gstep[:, None] * grad_x)
            p += len(C)
    return total_loss


def train(corpus: WalkCorpus, g: HetGraph, cfg: TrainConfig, seed: int = 0, backend=None,
          workers: int = 1, stats: dict | None = None) -> EmbeddingTable:
    """Fit input/context vectors on ``corpus``.

    ``workers > 1`` (numba backend) runs unsynchronized parallel updates;
    results are then not bitwise reproducible.  ``stats``, when given, is
    filled with counters useful for checking the sampler.
    """
    if len(corpus) == 0 or int(corpus.lengths.sum()) == 0:
        raise ValueError("empty walk corpus")
    flat = np.concatenate([corpus[i] for i in range(len(corpus))])
    if flat.min() < 0 or flat.max() >= g.n_vertices:
        raise ValueError("walk corpus references a vertex missing from the graph")
    backend = _backend.resolve(backend)
    counts = np.bincount(flat, minlength=g.n_vertices)
    sampler = NegativeSampler(g, counts, cfg.mode)
    if sampler.ptr[-1] - sampler.ptr[-2] < 2:
        raise ValueError("corpus needs at least two distinct vertices for negative sampling")

    rng = np.random.default_rng(seed)
    d = cfg.dim
    inp = rng.uniform(-0.5 / d, 0.5 / d, size=(g.n_vertices, d))
    ctx = np.zeros((g.n_vertices, d))
    per_walk = pairs_per_walk(corpus.lengths, cfg.window)
    offsets = np.concatenate([[0], np.cumsum(per_walk)[:-1]]).astype(np.int64)
    P = int(per_walk.sum())
    if P == 0:
        raise ValueError("walk corpus yields no context pairs (all walks have length 1)")
    total = float(P * cfg.epochs)
    counters = np.zeros(1, dtype=np.int64)
    history = []
    walks = np.ascontiguousarray(corpus.walks)
    for epoch in range(cfg.epochs):
        key = stream_key(seed, 0x5347_4E53, epoch)
        done = float(epoch * P)
        if backend == "numpy":
            loss = _sgd_epoch_numpy(corpus, inp, ctx, sampler, cfg, key, done, total, counters)
        else:
            kernel = _sgd_epoch_nb
            if workers > 1:
                _backend.set_threads(workers)
                kernel = _sgd_epoch_par
            loss = kernel(walks, corpus.lengths, offsets, inp, ctx, sampler.pool_of, sampler.ptr,
                          sampler.verts, sampler.alias_prob, sampler.alias_idx, g.vtype, cfg.window,
                          cfg.negatives, key, cfg.lr, cfg.min_lr_frac, done, total, counters)
        history.append(loss / P)
        log.info("epoch %d: mean pair loss %.6f", epoch + 1, history[-1])
        if not (np.all(np.isfinite(inp)) and np.all(np.isfinite(ctx))):
            raise FloatingPointError("embedding training diverged (nonfinite vector entry)")
    if stats is not None:
        stats.update(pairs_per_epoch=P, negatives_type_mismatch=int(counters[0]),
                     pool_of=sampler.pool_of.copy())
    return EmbeddingTable(inp, ctx, list(g.keys), history)


# -- diagnostics ----------------------------------------------------------------------------


def softmax_check(table: EmbeddingTable, g: HetGraph, v: int, type_id: int, vectors: str = "context"):
    """Exact type-normalized softmax over all vertices of ``type_id`` given ``v``.

    Returns ``(vertex_ids, probabilities)``.  ``vectors`` picks the output
    side: the trained context vectors, or the input vectors themselves.
    """
    members = g.vertices_of_type(type_id)
    if not len(members):
        raise ValueError(f"vertex type {type_id} has no vertices")
    out = table.context_vectors if vectors == "context" else table.input_vectors
    scores = out[members] @ table.input_vectors[v]
    scores = scores - scores.max()
    e = np.exp(scores)
    return members, e / e.sum()


def log_softmax_grad(table: EmbeddingTable, g: HetGraph, v: int, u: int, vectors: str = "context"):
    """Gradient of ``log softmax_check(v)[u]`` with respect to the input vector of ``v``."""
    members, probs = softmax_check(table, g, v, int(g.vtype[u]), vectors)
    out = table.context_vectors if vectors == "context" else table.input_vectors
    if vectors == "input":
        # output vectors include f(v) itself when v has the same type
        f = table.input_vectors
        grad = f[u] - probs @ f[members]
        if g.vtype[v] == g.vtype[u]:
            k = int(np.flatnonzero(members == v)[0])
            grad = grad + (1.0 if u == v else 0.0) * f[v] - probs[k] * f[v]
        return grad
    return out[u] - probs @ out[members]


# -- files ----------------------------------------------------------------------------------


def write_embeddings(table: EmbeddingTable, path) -> None:
    bad = [k for k in table.keys if any(ch.isspace() for ch in k)]
    if bad:
        raise ValueError(f"vertex key {bad[0]!r} contains whitespace and cannot be written")
    n, d = table.input_vectors.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {d}\n")
        for key, row in zip(table.keys, table.input_vectors):
            fh.write(key + " " + " ".join(f"{x:.8g}" for x in row) + "\n")


def read_embeddings(path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        n, d = int(header[0]), int(header[1])
        keys = []
        vecs = np.empty((n, d))
        for i, line in enumerate(fh):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != d + 1:
                raise ValueError(f"{path}: line {i + 2}: expected key and {d} values")
            keys.append(parts[0])
            vecs[i] = [float(x) for x in parts[1:]]
    if len(keys) != n:
        raise ValueError(f"{path}: header announces {n} vectors, found {len(keys)}")
    return EmbeddingTable(vecs, np.zeros_like(vecs), keys, [])

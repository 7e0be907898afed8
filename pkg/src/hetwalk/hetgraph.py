"""Typed graph model: schema, edge ingestion, relation transition tables.

Edges are stored twice: the deduplicated directed edge list as ingested
(``src``, ``rel``, ``dst``, ``weight``) and a traversal adjacency in which
every edge can be walked in both directions.  Traversal entries are grouped
per ``(vertex, relation)``; each group carries normalized transition
probabilities and an alias table for O(1) neighbor draws.

Layout of the traversal adjacency (all numpy arrays)::

    vptr[v] : vptr[v+1]     entry range of vertex v
    gptr[v] : gptr[v+1]     group range of vertex v
    grel[g]                 relation id of group g
    gstart[g] : gstart[g+1] entry range of group g
    nbr[e], prob[e]         neighbor and transition probability of entry e
    direction[e]            1 forward, 2 reverse, 3 both
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from . import _backend

FORWARD = 1
REVERSE = 2


class SchemaError(ValueError):
    pass


class GraphLoadError(ValueError):
    pass


class EmptyRelationError(LookupError):
    """Raised when a vertex has no instance of the requested relation type."""


@dataclass(frozen=True)
class GraphSchema:
    vertex_types: tuple[str, ...]
    relation_types: tuple[str, ...]
    # (src_type, rel_id, dst_type); one triple per relation in the file format
    permitted: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.vertex_types or not self.relation_types:
            raise SchemaError("empty schema: need at least one vertex type and one relation type")
        for kind, names in (("vertex type", self.vertex_types), ("relation", self.relation_types)):
            seen = set()
            for name in names:
                if name in seen:
                    raise SchemaError(f"duplicate {kind} name {name!r}")
                seen.add(name)
        if len(self.vertex_types) + len(self.relation_types) <= 2:
            raise SchemaError(
                "not heterogeneous: the number of vertex types plus relation types must exceed 2"
            )
        nv, nr = len(self.vertex_types), len(self.relation_types)
        for a, z, b in self.permitted:
            if not (0 <= a < nv and 0 <= b < nv and 0 <= z < nr):
                raise SchemaError(f"permitted triple {(a, z, b)} references an unknown id")
        covered = {z for _, z, _ in self.permitted}
        missing = [self.relation_types[z] for z in range(nr) if z not in covered]
        if missing:
            raise SchemaError(f"relations without endpoint types: {missing}")

    @property
    def n_vertex_types(self) -> int:
        return len(self.vertex_types)

    @property
    def n_relations(self) -> int:
        return len(self.relation_types)

    def vertex_type_id(self, name: str) -> int:
        try:
            return self.vertex_types.index(name)
        except ValueError:
            raise KeyError(f"unknown vertex type {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self.relation_types.index(name)
        except ValueError:
            raise KeyError(f"unknown relation {name!r}") from None

    def endpoints(self, rel: int) -> tuple[int, int]:
        """(src_type, dst_type) of a relation."""
        for a, z, b in sorted(self.permitted):
            if z == rel:
                return a, b
        raise KeyError(rel)

    def relation_mask(self) -> np.ndarray:
        """Boolean |types| x |relations| matrix: relation usable from a vertex type.

        Walks ignore edge direction, so a relation counts for both its source
        and its target type.
        """
        mask = np.zeros((self.n_vertex_types, self.n_relations), dtype=bool)
        for a, z, b in self.permitted:
            mask[a, z] = True
            mask[b, z] = True
        return mask

    def to_text(self) -> str:
        lines = [f"V {name}" for name in self.vertex_types]
        for z, name in enumerate(self.relation_types):
            a, b = self.endpoints(z)
            lines.append(f"R {name} {self.vertex_types[a]} {self.vertex_types[b]}")
        return "\n".join(lines) + "\n"


def parse_schema(text: str) -> GraphSchema:
    vtypes: list[str] = []
    rels: list[tuple[str, str, str, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "V" and len(parts) == 2:
            vtypes.append(parts[1])
        elif parts[0] == "R" and len(parts) == 4:
            rels.append((parts[1], parts[2], parts[3], lineno))
        else:
            raise SchemaError(f"line {lineno}: cannot parse {raw!r}")
    if not vtypes or not rels:
        raise SchemaError("empty schema: need at least one V line and one R line")
    if len(set(vtypes)) != len(vtypes):
        dup = next(v for v in vtypes if vtypes.count(v) > 1)
        raise SchemaError(f"duplicate vertex type name {dup!r}")
    index = {name: i for i, name in enumerate(vtypes)}
    permitted = set()
    for z, (name, src, dst, lineno) in enumerate(rels):
        for t in (src, dst):
            if t not in index:
                raise SchemaError(f"line {lineno}: relation {name!r} references unknown vertex type {t!r}")
        permitted.add((index[src], z, index[dst]))
    return GraphSchema(tuple(vtypes), tuple(r[0] for r in rels), frozenset(permitted))


def load_schema(path) -> GraphSchema:
    return parse_schema(Path(path).read_text(encoding="utf-8"))


class EdgeRecord(NamedTuple):
    src_key: str
    rel_name: str
    dst_key: str
    weight: float = 1.0


def read_edges(path) -> list[tuple[int, EdgeRecord]]:
    """Parse an edge TSV into ``(row_number, EdgeRecord)`` pairs."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rowno, row in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), start=1):
            if not row or (len(row) == 1 and not row[0].strip()) or row[0].startswith("#"):
                continue
            if len(row) not in (3, 4):
                raise GraphLoadError(f"{path}: row {rowno}: expected 3 or 4 tab-separated columns, got {len(row)}")
            weight = 1.0
            if len(row) == 4 and row[3].strip():
                try:
                    weight = float(row[3])
                except ValueError:
                    raise GraphLoadError(f"{path}: row {rowno}: weight {row[3]!r} is not a number") from None
            out.append((rowno, EdgeRecord(row[0], row[1], row[2], weight)))
    return out


def read_vertices(path) -> list[tuple[str, str]]:
    """Optional vertex list TSV ``key  type_name`` (lets isolated vertices exist)."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rowno, row in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise GraphLoadError(f"{path}: row {rowno}: expected key and type")
            out.append((row[0], row[1]))
    return out


def _build_alias(gstart, prob, alias_prob, alias_idx):
    # Vose's method per group; alias_idx holds offsets local to the group.
    ngroups = gstart.shape[0] - 1
    for g in range(ngroups):
        lo = gstart[g]
        n = gstart[g + 1] - lo
        scaled = np.empty(n)
        small = np.empty(n, dtype=np.int64)
        large = np.empty(n, dtype=np.int64)
        ns = 0
        nl = 0
        for i in range(n):
            scaled[i] = prob[lo + i] * n
            alias_idx[lo + i] = i
            if scaled[i] < 1.0:
                small[ns] = i
                ns += 1
            else:
                large[nl] = i
                nl += 1
        while ns > 0 and nl > 0:
            ns -= 1
            s = small[ns]
            nl -= 1
            big = large[nl]
            alias_prob[lo + s] = scaled[s]
            alias_idx[lo + s] = big
            scaled[big] = scaled[big] + scaled[s] - 1.0
            if scaled[big] < 1.0:
                small[ns] = big
                ns += 1
            else:
                large[nl] = big
                nl += 1
        while nl > 0:
            nl -= 1
            alias_prob[lo + large[nl]] = 1.0
        while ns > 0:
            ns -= 1
            alias_prob[lo + small[ns]] = 1.0


_build_alias_nb = _backend.jit_variant(_build_alias)


class HetGraph:
    """Immutable heterogeneous graph with per-(vertex, relation) transition tables."""

    def __init__(self, schema: GraphSchema, keys, vtype, src, rel, dst, weight):
        self.schema = schema
        self.keys = list(keys)
        self.key_index = {k: i for i, k in enumerate(self.keys)}
        if len(self.key_index) != len(self.keys):
            raise GraphLoadError("duplicate vertex keys")
        self.vtype = np.asarray(vtype, dtype=np.int64)
        n = len(self.keys)

        src = np.asarray(src, dtype=np.int64)
        rel = np.asarray(rel, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=np.float64)
        if not np.all(np.isfinite(weight)) or np.any(weight < 0):
            raise GraphLoadError("edge weights must be finite and nonnegative")
        keep = weight > 0
        src, rel, dst, weight = src[keep], rel[keep], dst[keep], weight[keep]

        # dedupe directed edges, summing weights
        order = np.lexsort((dst, rel, src))
        src, rel, dst, weight = src[order], rel[order], dst[order], weight[order]
        if len(src):
            first = np.ones(len(src), dtype=bool)
            first[1:] = (src[1:] != src[:-1]) | (rel[1:] != rel[:-1]) | (dst[1:] != dst[:-1])
            starts = np.flatnonzero(first)
            weight = np.add.reduceat(weight, starts)
            src, rel, dst = src[starts], rel[starts], dst[starts]
        self.src, self.rel, self.dst, self.weight = src, rel, dst, weight

        # traversal entries: forward plus reverse (self-loops only once)
        loop = src == dst
        t_v = np.concatenate([src, dst[~loop]])
        t_z = np.concatenate([rel, rel[~loop]])
        t_n = np.concatenate([dst, src[~loop]])
        t_w = np.concatenate([weight, weight[~loop]])
        t_d = np.concatenate([np.full(len(src), FORWARD, np.int8), np.full(int((~loop).sum()), REVERSE, np.int8)])
        order = np.lexsort((t_n, t_z, t_v))
        t_v, t_z, t_n, t_w, t_d = t_v[order], t_z[order], t_n[order], t_w[order], t_d[order]
        if len(t_v):
            first = np.ones(len(t_v), dtype=bool)
            first[1:] = (t_v[1:] != t_v[:-1]) | (t_z[1:] != t_z[:-1]) | (t_n[1:] != t_n[:-1])
            starts = np.flatnonzero(first)
            t_w = np.add.reduceat(t_w, starts)
            t_d = np.bitwise_or.reduceat(t_d, starts)
            t_v, t_z, t_n = t_v[starts], t_z[starts], t_n[starts]
        self.entry_src = t_v
        self.entry_rel = t_z
        self.nbr = t_n
        self.direction = t_d
        self.vptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(t_v, minlength=n), out=self.vptr[1:])

        if len(t_v):
            gfirst = np.ones(len(t_v), dtype=bool)
            gfirst[1:] = (t_v[1:] != t_v[:-1]) | (t_z[1:] != t_z[:-1])
            gs = np.flatnonzero(gfirst)
        else:
            gs = np.zeros(0, dtype=np.int64)
        self.gstart = np.append(gs, len(t_v)).astype(np.int64)
        self.grel = t_z[gs]
        self.gvertex = t_v[gs]
        self.gptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.gvertex, minlength=n), out=self.gptr[1:])

        sizes = np.diff(self.gstart)
        gsum = np.add.reduceat(t_w, gs) if len(gs) else np.zeros(0)
        self.entry_group = np.repeat(np.arange(len(gs)), sizes)
        self.prob = t_w / gsum[self.entry_group] if len(t_w) else np.zeros(0)
        self.alias_prob = np.ones(len(t_w))
        self.alias_idx = np.zeros(len(t_w), dtype=np.int64)
        build = _build_alias_nb if _backend.default_backend() == "numba" else _build_alias
        build(self.gstart, self.prob, self.alias_prob, self.alias_idx)

    # -- construction ---------------------------------------------------

    @classmethod
    def from_records(cls, schema: GraphSchema, records: Iterable, vertices=None) -> "HetGraph":
        """Build from EdgeRecords (optionally ``(row, record)`` pairs) and an optional vertex list."""
        keys: list[str] = []
        index: dict[str, int] = {}
        vtype: list[int] = []

        def intern(key, t, where):
            i = index.get(key)
            if i is None:
                index[key] = len(keys)
                keys.append(key)
                vtype.append(t)
                return len(keys) - 1
            if vtype[i] != t:
                raise GraphLoadError(
                    f"{where}: vertex {key!r} used as {schema.vertex_types[t]} "
                    f"but already typed {schema.vertex_types[vtype[i]]} (schema violation)"
                )
            return i

        for key, tname in vertices or ():
            try:
                t = schema.vertex_type_id(tname)
            except KeyError:
                raise GraphLoadError(f"vertex {key!r}: unknown vertex type {tname!r}") from None
            intern(key, t, "vertex list")

        ends = {z: (a, b) for a, z, b in schema.permitted}
        src, rel, dst, w = [], [], [], []
        for n, item in enumerate(records, start=1):
            rowno, rec = item if isinstance(item, tuple) and len(item) == 2 and isinstance(item[1], tuple) else (n, item)
            rec = EdgeRecord(*rec)
            where = f"row {rowno}"
            try:
                z = schema.relation_id(rec.rel_name)
            except KeyError:
                raise GraphLoadError(f"{where}: relation {rec.rel_name!r} is not in the schema") from None
            if not math.isfinite(rec.weight) or rec.weight < 0:
                raise GraphLoadError(f"{where}: weight {rec.weight!r} must be finite and nonnegative")
            a, b = ends[z]
            src.append(intern(rec.src_key, a, where))
            dst.append(intern(rec.dst_key, b, where))
            rel.append(z)
            w.append(rec.weight)
        return cls(schema, keys, vtype, src, rel, dst, w)

    # -- accessors --------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.keys)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def n_entries(self) -> int:
        return len(self.nbr)

    def vertex(self, key: str) -> int:
        try:
            return self.key_index[key]
        except KeyError:
            raise KeyError(f"unknown vertex {key!r}") from None

    def vertices_of_type(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.vtype == t)

    def group(self, v: int, z: int) -> int:
        """Group index of (v, z), or -1 when v has no relation-z entries."""
        lo, hi = self.gptr[v], self.gptr[v + 1]
        i = lo + int(np.searchsorted(self.grel[lo:hi], z))
        if i < hi and self.grel[i] == z:
            return int(i)
        return -1

    def neighbors(self, v: int, z: int):
        """(neighbor ids, transition probabilities) of the (v, z) row."""
        g = self.group(v, z)
        if g < 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        lo, hi = self.gstart[g], self.gstart[g + 1]
        return self.nbr[lo:hi], self.prob[lo:hi]

    def records(self) -> list[EdgeRecord]:
        names = self.schema.relation_types
        return [
            EdgeRecord(self.keys[s], names[z], self.keys[d], float(w))
            for s, z, d, w in zip(self.src.tolist(), self.rel.tolist(), self.dst.tolist(), self.weight.tolist())
        ]

    def without_edges(self, drop: np.ndarray) -> "HetGraph":
        """Copy of the graph without the directed edges flagged in ``drop`` (vertex set kept)."""
        keep = ~np.asarray(drop, dtype=bool)
        return HetGraph(self.schema, self.keys, self.vtype, self.src[keep], self.rel[keep], self.dst[keep], self.weight[keep])


def load_graph(schema: GraphSchema, edges_path, vertices_path=None) -> HetGraph:
    vertices = read_vertices(vertices_path) if vertices_path else None
    records = read_edges(edges_path)
    try:
        return HetGraph.from_records(schema, records, vertices)
    except GraphLoadError as exc:
        raise GraphLoadError(f"{edges_path}: {exc}") from None


def write_edges(g: HetGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for rec in g.records():
            fh.write(f"{rec.src_key}\t{rec.rel_name}\t{rec.dst_key}\t{rec.weight!r}\n")


def write_vertices(g: HetGraph, path) -> None:
    names = g.schema.vertex_types
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, t in zip(g.keys, g.vtype.tolist()):
            fh.write(f"{key}\t{names[t]}\n")


def relation_menu(g: HetGraph, v: int) -> set[int]:
    if not 0 <= v < g.n_vertices:
        raise KeyError(f"unknown vertex id {v}")
    return set(g.grel[g.gptr[v]:g.gptr[v + 1]].tolist())


def sample_neighbor(g: HetGraph, v: int, z: int, rng: np.random.Generator) -> int:
    g_idx = g.group(v, z)
    if g_idx < 0:
        raise EmptyRelationError(
            f"no instance of relation type {g.schema.relation_types[z]!r} at vertex {g.keys[v]!r}"
        )
    lo = g.gstart[g_idx]
    n = g.gstart[g_idx + 1] - lo
    i = int(rng.integers(n))
    if rng.random() >= g.alias_prob[lo + i]:
        i = int(g.alias_idx[lo + i])
    return int(g.nbr[lo + i])

"""Planted-community bilingual citation graph for desk-scale experiments.

Two paper partitions (source and target language) plus a keyword partition per
language.  Papers and keywords belong to topical communities; citations mostly
stay inside a community, and cross-language citations are rare compared with
monolingual ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hetgraph import EdgeRecord, GraphSchema, parse_schema

BILINGUAL_SCHEMA = """\
# bilingual scholarly graph: papers and keywords in two languages
V paper_src
V paper_tgt
V kw_src
V kw_tgt
R semantic paper_src paper_tgt
R cite_src paper_src paper_src
R cite_tgt paper_tgt paper_tgt
R cite_cross paper_src paper_tgt
R has_kw_src paper_src kw_src
R has_kw_tgt paper_tgt kw_tgt
R kwcite_src kw_src kw_src
R kwcite_tgt kw_tgt kw_tgt
R kwcite_cross kw_src kw_tgt
R translate kw_src kw_tgt
"""

QUERY_TYPE = "paper_src"
TARGET_TYPE = "paper_tgt"
HELD_OUT = "cite_cross"


def bilingual_schema() -> GraphSchema:
    return parse_schema(BILINGUAL_SCHEMA)


@dataclass(frozen=True)
class SyntheticSpec:
    communities: int = 8
    subtopics: int = 4  # fine-grained topics inside each community
    papers_src: int = 900
    papers_tgt: int = 900
    keywords_src: int = 100
    keywords_tgt: int = 100
    cites_src: float = 4.0  # mean monolingual citations per source paper
    cites_tgt: float = 8.0
    ratio: float = 28.0  # monolingual : cross-language citation count
    cross_per_citing: float = 2.5
    keywords_per_paper: int = 3
    semantic_per_paper: int = 4
    semantic_recall: float = 0.5
    translate_rate: float = 0.65
    mono_focus: float = 0.2  # chance a monolingual citation targets the same subtopic
    noise: float = 0.1
    seed: int = 0

    def check(self) -> None:
        if self.communities < 2:
            raise ValueError("need at least 2 communities")
        if self.subtopics < 1 or not 0 <= self.mono_focus <= 1:
            raise ValueError("subtopics must be >= 1 and mono_focus must lie in [0, 1]")
        if not 0 <= self.noise <= 1 or not 0 <= self.semantic_recall <= 1 or not 0 <= self.translate_rate <= 1:
            raise ValueError("noise, semantic_recall and translate_rate must lie in [0, 1]")
        if self.ratio <= 0 or self.cross_per_citing < 1:
            raise ValueError("ratio must be positive and cross_per_citing >= 1")
        for n, what in ((self.papers_src, "source papers"), (self.papers_tgt, "target papers"),
                        (self.keywords_src, "source keywords"), (self.keywords_tgt, "target keywords")):
            if n < 2 * self.communities:
                raise ValueError(f"too few {what} for {self.communities} communities (need 2 per community)")
        if self.keywords_per_paper < 1 or self.keywords_per_paper > min(self.keywords_src, self.keywords_tgt) // self.communities:
            raise ValueError("keywords_per_paper exceeds the keywords available per community")
        groups = self.communities * self.subtopics
        if self.cites_src >= self.papers_src // groups or self.cites_tgt >= self.papers_tgt // groups:
            raise ValueError("monolingual citation density exceeds subtopic size")
        if math.ceil(self.cross_per_citing) > self.papers_tgt // groups:
            raise ValueError("cross_per_citing exceeds target subtopic size")


@dataclass
class SyntheticGraph:
    schema: GraphSchema
    records: list  # EdgeRecord
    pairs: list  # (source key, target key) cross-language citations
    community: dict  # vertex key -> community id

    def counts(self) -> dict:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.rel_name] = out.get(r.rel_name, 0) + 1
        return out

    def mono_cross_ratio(self) -> float:
        c = self.counts()
        return (c.get("cite_src", 0) + c.get("cite_tgt", 0)) / max(1, c.get("cite_cross", 0))


class _Side:
    def __init__(self, prefix, n, communities, subtopics, rng):
        self.keys = [f"{prefix}{i:05d}" for i in range(n)]
        # round-robin then shuffled, so every fine group has n // G or n // G + 1 members;
        # fine group f belongs to community f % communities
        fine = np.arange(n) % (communities * subtopics)
        rng.shuffle(fine)
        self.fine = fine
        self.comm = fine % communities
        self.members = [np.flatnonzero(self.comm == c) for c in range(communities)]
        self.fine_members = [np.flatnonzero(fine == f) for f in range(communities * subtopics)]


def _pick(rng, side: _Side, c: int, noise: float, exclude=(), fine: int = -1, focus: float = 0.0) -> int:
    """A vertex not in ``exclude``: anywhere with probability ``noise``, otherwise from
    fine group ``fine`` with probability ``focus`` and from community ``c`` else."""
    for _ in range(1000):
        if rng.random() < noise:
            i = int(rng.integers(len(side.keys)))
        elif fine >= 0 and rng.random() < focus:
            i = int(rng.choice(side.fine_members[fine]))
        else:
            i = int(rng.choice(side.members[c]))
        if i not in exclude:
            return i
    raise ValueError("could not place an edge without duplicates; lower the citation density")


def _counts(rng, n, mean):
    return rng.poisson(mean, size=n)


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticGraph:
    spec.check()
    rng = np.random.default_rng(spec.seed)
    C = spec.communities
    S = spec.subtopics
    ps = _Side("ps", spec.papers_src, C, S, rng)
    pt = _Side("pt", spec.papers_tgt, C, S, rng)
    ks = _Side("ks", spec.keywords_src, C, 1, rng)
    kt = _Side("kt", spec.keywords_tgt, C, 1, rng)

    def mono(side, mean):
        edges = []
        cap = min(len(m) for m in side.fine_members) - 1
        for i, m in enumerate(_counts(rng, len(side.keys), mean).tolist()):
            chosen = {i}
            for _ in range(min(m, cap)):
                chosen.add(_pick(rng, side, side.comm[i], spec.noise, chosen, side.fine[i], spec.mono_focus))
            edges += [(i, j) for j in sorted(chosen - {i})]
        return edges

    cite_s = mono(ps, spec.cites_src)
    cite_t = mono(pt, spec.cites_tgt)

    n_cross = int(round((len(cite_s) + len(cite_t)) / spec.ratio))
    n_citing = math.ceil(n_cross / spec.cross_per_citing)
    if n_cross < 1 or n_citing > len(ps.keys):
        raise ValueError(f"infeasible sparsity: {n_cross} cross citations over {len(ps.keys)} source papers")
    citing = np.sort(rng.choice(len(ps.keys), size=n_citing, replace=False))
    per = np.ones(n_citing, dtype=np.int64)
    extra = rng.choice(n_citing, size=n_cross - n_citing, replace=True)
    np.add.at(per, extra, 1)
    cap = min(len(m) for m in pt.fine_members)
    if per.max() > cap:
        raise ValueError("infeasible sparsity: a source paper would cite more targets than a subtopic holds")
    cross = []
    for i, m in zip(citing.tolist(), per.tolist()):
        chosen: set[int] = set()
        for _ in range(m):
            chosen.add(_pick(rng, pt, ps.comm[i], spec.noise, chosen, ps.fine[i], 1.0))
        cross += [(i, j) for j in sorted(chosen)]

    def keywords(papers, kws):
        out = []
        for i in range(len(papers.keys)):
            chosen: set[int] = set()
            for _ in range(spec.keywords_per_paper):
                chosen.add(_pick(rng, kws, papers.comm[i], spec.noise, chosen))
            out.append(sorted(chosen))
        return out

    kw_s = keywords(ps, ks)
    kw_t = keywords(pt, kt)

    # keyword citations: every keyword of the citing paper cites every keyword of the cited one
    def kwcite(edges, kw_a, kw_b):
        acc: dict[tuple[int, int], float] = {}
        for a, b in edges:
            for x in kw_a[a]:
                for y in kw_b[b]:
                    if kw_a is kw_b and x == y:
                        continue
                    acc[(x, y)] = acc.get((x, y), 0.0) + 1.0
        return sorted(acc.items())

    # noisy semantic similarity links, standing in for translated-text matching
    cited_by: dict[int, list[int]] = {}
    for i, j in cross:
        cited_by.setdefault(i, []).append(j)
    semantic = []
    for i in range(len(ps.keys)):
        chosen: set[int] = {j for j in cited_by.get(i, ()) if rng.random() < spec.semantic_recall}
        while len(chosen) < spec.semantic_per_paper:
            chosen.add(_pick(rng, pt, ps.comm[i], spec.noise, chosen, ps.fine[i], 1.0))
        for j in sorted(chosen):
            semantic.append((i, j, float(rng.uniform(0.2, 1.0))))

    translate = []
    for i in range(len(ks.keys)):
        if rng.random() < spec.translate_rate:
            translate.append((i, _pick(rng, kt, ks.comm[i], spec.noise)))

    recs = []
    recs += [EdgeRecord(ps.keys[i], "semantic", pt.keys[j], w) for i, j, w in semantic]
    recs += [EdgeRecord(ps.keys[i], "cite_src", ps.keys[j], 1.0) for i, j in cite_s]
    recs += [EdgeRecord(pt.keys[i], "cite_tgt", pt.keys[j], 1.0) for i, j in cite_t]
    recs += [EdgeRecord(ps.keys[i], "cite_cross", pt.keys[j], 1.0) for i, j in cross]
    recs += [EdgeRecord(ps.keys[i], "has_kw_src", ks.keys[k], 1.0) for i, kk in enumerate(kw_s) for k in kk]
    recs += [EdgeRecord(pt.keys[i], "has_kw_tgt", kt.keys[k], 1.0) for i, kk in enumerate(kw_t) for k in kk]
    recs += [EdgeRecord(ks.keys[x], "kwcite_src", ks.keys[y], w) for (x, y), w in kwcite(cite_s, kw_s, kw_s)]
    recs += [EdgeRecord(kt.keys[x], "kwcite_tgt", kt.keys[y], w) for (x, y), w in kwcite(cite_t, kw_t, kw_t)]
    recs += [EdgeRecord(ks.keys[x], "kwcite_cross", kt.keys[y], w) for (x, y), w in kwcite(cross, kw_s, kw_t)]
    recs += [EdgeRecord(ks.keys[i], "translate", kt.keys[j], 1.0) for i, j in translate]

    community = {}
    for side in (ps, pt, ks, kt):
        community.update(zip(side.keys, side.comm.tolist()))
    pairs = [(ps.keys[i], pt.keys[j]) for i, j in cross]
    return SyntheticGraph(bilingual_schema(), recs, pairs, community)


def write_synthetic(sg: SyntheticGraph, out_dir) -> dict:
    """Write schema.txt, edges.tsv, vertices.tsv and pairs.tsv; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / fname for name, fname in
             (("schema", "schema.txt"), ("edges", "edges.tsv"), ("vertices", "vertices.tsv"), ("pairs", "pairs.tsv"))}
    paths["schema"].write_text(sg.schema.to_text())
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        for r in sg.records:
            fh.write(f"{r.src_key}\t{r.rel_name}\t{r.dst_key}\t{r.weight!r}\n")
    type_of = {"ps": "paper_src", "pt": "paper_tgt", "ks": "kw_src", "kt": "kw_tgt"}
    with open(paths["vertices"], "w", encoding="utf-8") as fh:
        for key in sorted(sg.community):
            fh.write(f"{key}\t{type_of[key[:2]]}\n")
    with open(paths["pairs"], "w", encoding="utf-8") as fh:
        for s, t in sg.pairs:
            fh.write(f"{s}\t{t}\n")
    return paths

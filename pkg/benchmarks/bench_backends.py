"""Wall-clock comparison of the numba kernels and the numpy fallback.

    python benchmarks/bench_backends.py [--vertices 400] [--repeat 3]

Each kernel runs once untimed so numba compilation is excluded, then the best
of ``--repeat`` runs is reported per backend.
"""

import argparse
import time
import warnings

from hetwalk.embed import TrainConfig, train
from hetwalk.hetgraph import HetGraph
from hetwalk.rtud import rank_pairs, train_rtud
from hetwalk.synthetic import SyntheticSpec, generate_synthetic
from hetwalk.walks import WalkConfig, generate_corpus


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vertices", type=int, default=400, help="papers per language")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    warnings.simplefilter("ignore")

    n = args.vertices
    sg = generate_synthetic(SyntheticSpec(papers_src=n, papers_tgt=n, keywords_src=max(32, n // 10),
                                          keywords_tgt=max(32, n // 10), communities=4, subtopics=2))
    g = HetGraph.from_records(sg.schema, sg.records)
    pairs = [(g.vertex(a), g.vertex(b)) for a, b in sg.pairs]
    model, _ = train_rtud(g, pairs)
    corpus = generate_corpus(g, model, WalkConfig(r=2, l=40))
    tcfg = TrainConfig(dim=64, window=5, epochs=1)

    jobs = {
        "path search": lambda b: rank_pairs(g, model.beta, pairs, 3, backend=b),
        "walks": lambda b: generate_corpus(g, model, WalkConfig(r=2, l=40), backend=b),
        "skip-gram": lambda b: train(corpus, g, tcfg, backend=b),
    }
    print(f"graph: {g.n_vertices} vertices, {g.n_edges} edges, {len(pairs)} pairs, {len(corpus)} walks")
    print(f"{'kernel':<12} {'numba s':>9} {'numpy s':>9} {'speedup':>8}")
    for name, job in jobs.items():
        nb = best_of(lambda: job("numba"), args.repeat)
        np_ = best_of(lambda: job("numpy"), args.repeat)
        print(f"{name:<12} {nb:9.3f} {np_:9.3f} {np_ / nb:7.1f}x")


if __name__ == "__main__":
    main()

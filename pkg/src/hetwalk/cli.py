"""Command-line pipeline: generate, train-rtud, walk, embed, recommend, evaluate.

Every stage reads and writes plain files, so a run can be resumed from any
stage.  Configuration comes from a ``key = value`` file plus flag overrides;
the resolved settings are echoed to ``config.resolved`` in the output dir.

Exit codes: 0 success, 1 internal error, 2 bad input, 3 RTUD did not converge.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import embed as embed_mod
from . import evaluate as eval_mod
from . import rtud as rtud_mod
from . import synthetic
from . import walks as walks_mod
from .hetgraph import GraphLoadError, SchemaError, load_graph, load_schema, write_edges, write_vertices
from .recommend import read_keys, read_run, recommend, write_run

log = logging.getLogger("hetwalk")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2, 3

DEFAULTS = {
    "paths.schema": "",
    "paths.edges": "",
    "paths.vertices": "",
    "paths.pairs": "",
    "paths.rtud": "",
    "paths.walks": "",
    "paths.embeddings": "",
    "paths.queries": "",
    "paths.candidates": "",
    "paths.run": "",
    "paths.qrels": "",
    "paths.out": "out",
    "rtud.K": 3,
    "rtud.f_theta": "LNC",
    "rtud.f_beta": "SDF",
    "rtud.lambda": 0.2,
    "rtud.epsilon": 80.0,
    "rtud.max_iters": 50,
    "rtud.exclude_direct": False,
    "walk.r": 10,
    "walk.l": 80,
    "walk.seed": 0,
    "walk.mode": "hierarchical",
    "embed.d": 128,
    "embed.ws": 10,
    "embed.negatives": 5,
    "embed.epochs": 5,
    "embed.lr": 0.025,
    "embed.mode": "heterogeneous",
    "embed.seed": 0,
    "recommend.top_k": 0,
    "eval.fraction": 0.1,
    "eval.ks": "10,30,50",
    "eval.seed": 0,
    "eval.query_type": synthetic.QUERY_TYPE,
    "eval.target_type": synthetic.TARGET_TYPE,
    "eval.relation": synthetic.HELD_OUT,
    "eval.map_denominator": "min",
    "gen.communities": 8,
    "gen.subtopics": 4,
    "gen.papers_per_side": 900,
    "gen.keywords_per_side": 100,
    "gen.ratio": 28.0,
    "gen.noise": 0.1,
    "gen.seed": 0,
    "run.backend": "",
    "run.workers": 1,
    "run.reproducible": True,
}


class InputError(Exception):
    """Bad user input: missing file, malformed config, inconsistent artifacts."""


# -- configuration -----------------------------------------------------------------


def _coerce(key, raw):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            low = str(raw).strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise InputError(f"config key {key}: cannot parse {raw!r}") from None
    return str(raw).strip()


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{source}: line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise InputError(f"{source}: line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(config_path=None, overrides=()) -> dict:
    cfg = dict(DEFAULTS)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        cfg.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    for key, value in overrides:
        if key not in DEFAULTS:
            raise InputError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, value)
    return cfg


def format_config(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def _ks(cfg):
    try:
        ks = tuple(int(k) for k in str(cfg["eval.ks"]).split(",") if k.strip())
    except ValueError:
        raise InputError(f"eval.ks must be a comma-separated list of integers, got {cfg['eval.ks']!r}") from None
    if not ks or min(ks) < 1:
        raise InputError("eval.ks must list positive integers")
    return ks


def _backend(cfg):
    return cfg["run.backend"] or None


# -- file plumbing -----------------------------------------------------------------


class Outputs:
    """Collects stage outputs as temp files; renamed into place only on success."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.pending: list[tuple[Path, Path]] = []

    def __enter__(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        return self

    def path(self, name) -> Path:
        final = self.dir / name
        fd, tmp = tempfile.mkstemp(prefix=f".{final.name}.", suffix=final.suffix, dir=self.dir)
        os.close(fd)
        self.pending.append((Path(tmp), final))
        return Path(tmp)

    def commit(self):
        for tmp, final in self.pending:
            if tmp.exists():
                os.replace(tmp, final)
        self.pending.clear()

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.commit()
        else:
            for tmp, _ in self.pending:
                tmp.unlink(missing_ok=True)
        return False


def _need(path, what) -> Path:
    if not path:
        raise InputError(f"no {what} given (set paths.{what})")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {p}")
    return p


def _artifact(cfg, key, default_name) -> str:
    return cfg[f"paths.{key}"] or str(Path(cfg["paths.out"]) / default_name)


def _load_graph(cfg, edges_key="edges"):
    schema = load_schema(_need(cfg["paths.schema"], "schema"))
    edges = _need(cfg[f"paths.{edges_key}"], edges_key)
    vertices = _need(cfg["paths.vertices"], "vertices") if cfg["paths.vertices"] else None
    return load_graph(schema, edges, vertices)


def _echo(out: Outputs, cfg):
    out.path("config.resolved").write_text(format_config(cfg))


# -- stages -------------------------------------------------------------------------


def cmd_generate(cfg) -> int:
    n, k = cfg["gen.papers_per_side"], cfg["gen.keywords_per_side"]
    spec = synthetic.SyntheticSpec(
        communities=cfg["gen.communities"], subtopics=cfg["gen.subtopics"],
        papers_src=n, papers_tgt=n, keywords_src=k, keywords_tgt=k,
        ratio=cfg["gen.ratio"], noise=cfg["gen.noise"], seed=cfg["gen.seed"],
    )
    sg = synthetic.generate_synthetic(spec)
    with Outputs(cfg["paths.out"]) as out:
        tmp_dir = Path(tempfile.mkdtemp(dir=out.dir, prefix=".gen."))
        try:
            paths = synthetic.write_synthetic(sg, tmp_dir)
            for p in paths.values():
                os.replace(p, out.path(p.name))
        finally:
            for p in tmp_dir.iterdir():
                p.unlink()
            tmp_dir.rmdir()
        _echo(out, cfg)
    log.info("generated %d edges, %d cross-language pairs (ratio %.2f)", len(sg.records), len(sg.pairs), sg.mono_cross_ratio())
    return EXIT_OK


def cmd_train_rtud(cfg) -> int:
    g = _load_graph(cfg)
    pairs = rtud_mod.read_pairs(g, _need(cfg["paths.pairs"], "pairs"))
    return _train_rtud(cfg, g, pairs)


def _train_rtud(cfg, g, pairs) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        rtud, trace = rtud_mod.train_rtud(
            g, pairs, K=cfg["rtud.K"], f_theta=cfg["rtud.f_theta"], f_beta=cfg["rtud.f_beta"],
            lam=cfg["rtud.lambda"], epsilon=cfg["rtud.epsilon"], max_iters=cfg["rtud.max_iters"],
            exclude_direct=cfg["rtud.exclude_direct"], workers=cfg["run.workers"], backend=_backend(cfg),
        )
    with Outputs(cfg["paths.out"]) as out:
        rtud_mod.write_rtud(rtud, out.path("rtud.tsv"))
        rtud_mod.write_trace(trace, out.path("rtud_trace.tsv"))
        _echo(out, cfg)
    if not rtud_mod.converged(trace, cfg["rtud.epsilon"]):
        log.error("RTUD did not converge within %d iterations (last stability %.3f)",
                  cfg["rtud.max_iters"], trace[-1].stability)
        return EXIT_NOT_CONVERGED
    log.info("RTUD converged after %d iterations", len(trace))
    return EXIT_OK


def cmd_walk(cfg) -> int:
    g = _load_graph(cfg)
    wcfg = walks_mod.WalkConfig(cfg["walk.r"], cfg["walk.l"], cfg["walk.seed"], cfg["walk.mode"])
    if wcfg.mode == "uniform":
        beta = rtud_mod.init_rtud(g.schema)  # ignored by uniform walks
    else:
        beta = rtud_mod.read_rtud(g.schema, _need(_artifact(cfg, "rtud", "rtud.tsv"), "rtud"))
    corpus = walks_mod.generate_corpus(g, beta, wcfg, backend=_backend(cfg), workers=cfg["run.workers"])
    with Outputs(cfg["paths.out"]) as out:
        tmp = out.path("walks.npz")
        walks_mod.write_corpus(corpus, g, tmp, wcfg.l)
        stats = tmp.with_name(tmp.name + ".stats.json")
        os.replace(stats, out.path("walks.npz.stats.json"))
        _echo(out, cfg)
    log.info("wrote %d walks", len(corpus))
    return EXIT_OK


def cmd_embed(cfg) -> int:
    g = _load_graph(cfg)
    corpus = walks_mod.read_corpus(_need(_artifact(cfg, "walks", "walks.npz"), "walks"), g)
    tcfg = embed_mod.TrainConfig(dim=cfg["embed.d"], window=cfg["embed.ws"], negatives=cfg["embed.negatives"],
                                 epochs=cfg["embed.epochs"], lr=cfg["embed.lr"], mode=cfg["embed.mode"])
    # Hogwild updates are not reproducible, so reproducible mode trains on one thread
    workers = 1 if cfg["run.reproducible"] else cfg["run.workers"]
    table = embed_mod.train(corpus, g, tcfg, seed=cfg["embed.seed"], backend=_backend(cfg), workers=workers)
    with Outputs(cfg["paths.out"]) as out:
        embed_mod.write_embeddings(table, out.path("embeddings.txt"))
        _echo(out, cfg)
    log.info("trained %d x %d embeddings; final mean pair loss %.4f", *table.input_vectors.shape, table.loss_history[-1])
    return EXIT_OK


def cmd_recommend(cfg) -> int:
    table = embed_mod.read_embeddings(_need(_artifact(cfg, "embeddings", "embeddings.txt"), "embeddings"))
    queries = read_keys(_need(cfg["paths.queries"], "queries"))
    g = _load_graph(cfg)
    target = g.schema.vertex_type_id(cfg["eval.target_type"])
    candidates = read_keys(_need(cfg["paths.candidates"], "candidates")) if cfg["paths.candidates"] else None
    top_k = cfg["recommend.top_k"] or None
    lists = [recommend(table, g, q, target, top_k, candidates) for q in queries]
    with Outputs(cfg["paths.out"]) as out:
        write_run(lists, out.path("run.tsv"))
        _echo(out, cfg)
    log.info("ranked candidates for %d queries", len(queries))
    return EXIT_OK


def cmd_evaluate(cfg, end_to_end=False) -> int:
    if end_to_end:
        return _end_to_end(cfg)
    run = read_run(_need(_artifact(cfg, "run", "run.tsv"), "run"))
    qrels = eval_mod.read_qrels(_need(_artifact(cfg, "qrels", "qrels.tsv"), "qrels"))
    report = eval_mod.metrics(run, qrels, _ks(cfg), cfg["eval.map_denominator"])
    with Outputs(cfg["paths.out"]) as out:
        out.path("metrics.tsv").write_text(report.to_tsv())
        _echo(out, cfg)
    print(report.table())
    return EXIT_OK


def _end_to_end(cfg) -> int:
    """split -> train-rtud -> walk -> embed -> recommend -> metrics, all via files in the out dir."""
    out_dir = Path(cfg["paths.out"])
    g = _load_graph(cfg)
    schema = g.schema
    spec = eval_mod.SplitSpec(
        schema.vertex_type_id(cfg["eval.query_type"]), schema.vertex_type_id(cfg["eval.target_type"]),
        schema.relation_id(cfg["eval.relation"]), cfg["eval.fraction"], cfg["eval.seed"],
    )
    split = eval_mod.make_split(g, spec)
    held = {(q, c) for q, cs in split.qrels.items() for c in cs}
    if cfg["paths.pairs"]:
        with open(_need(cfg["paths.pairs"], "pairs"), encoding="utf-8") as fh:
            raw = [tuple(line.rstrip("\n").split("\t")) for line in fh if line.strip() and not line.startswith("#")]
        train_pairs = [p for p in raw if p not in held]
    else:
        # every remaining held-out-relation edge is a labeled relevant pair
        tr = split.train
        mask = tr.rel == spec.held_out_relation
        train_pairs = [(tr.keys[s], tr.keys[d]) for s, d in zip(tr.src[mask].tolist(), tr.dst[mask].tolist())]
    with Outputs(out_dir) as out:
        write_edges(split.train, out.path("train_edges.tsv"))
        write_vertices(split.train, out.path("train_vertices.tsv"))
        eval_mod.write_qrels(split.qrels, out.path("qrels.tsv"))
        eval_mod.write_keys(split.queries, out.path("queries.txt"))
        eval_mod.write_keys(split.candidates, out.path("candidates.txt"))
        with open(out.path("train_pairs.tsv"), "w", encoding="utf-8") as fh:
            fh.writelines(f"{s}\t{t}\n" for s, t in train_pairs)
        _echo(out, cfg)

    stage = dict(cfg)
    stage.update({
        "paths.edges": str(out_dir / "train_edges.tsv"),
        "paths.vertices": str(out_dir / "train_vertices.tsv"),
        "paths.pairs": str(out_dir / "train_pairs.tsv"),
        "paths.queries": str(out_dir / "queries.txt"),
        "paths.candidates": str(out_dir / "candidates.txt"),
        "paths.qrels": str(out_dir / "qrels.tsv"),
        "paths.rtud": "", "paths.walks": "", "paths.embeddings": "", "paths.run": "",
    })
    status = EXIT_OK
    if stage["walk.mode"] != "uniform":
        status = cmd_train_rtud(stage)
        if status == EXIT_NOT_CONVERGED:
            log.warning("continuing with the last RTUD estimate")
    cmd_walk(stage)
    cmd_embed(stage)
    cmd_recommend(stage)
    cmd_evaluate(stage)
    return status


# -- entry point ----------------------------------------------------------------------


def _global_flags(parser):
    # accepted before or after the subcommand; SUPPRESS keeps an absent flag from
    # overwriting one given in the other position
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed for walks, embedding, split and generator")
    parser.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="threads for parallel stages")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    _global_flags(common)
    common.add_argument("--backend", choices=("numba", "numpy"), help="kernel backend")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hetwalk", description=__doc__.splitlines()[0])
    _global_flags(p)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("generate", "write a synthetic bilingual citation graph"),
        ("train-rtud", "learn relation-type usefulness from labeled pairs"),
        ("walk", "generate the walk corpus"),
        ("embed", "train vertex embeddings on a walk corpus"),
        ("recommend", "rank candidates for every query"),
        ("evaluate", "score a run against qrels"),
    ):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("--schema")
        sp.add_argument("--edges")
        sp.add_argument("--vertices")
        sp.add_argument("--pairs")
        if name in ("walk", "evaluate"):
            sp.add_argument("--mode", choices=walks_mod.MODES, help="relation-type choice during walks")
        if name in ("embed", "evaluate"):
            sp.add_argument("--embed-mode", choices=embed_mod.MODES, help="negative sampling pool")
        if name in ("train-rtud", "evaluate"):
            sp.add_argument("--exclude-direct-edge", action="store_true", help="ignore direct s-t edges in path search")
        if name == "evaluate":
            sp.add_argument("--end-to-end", action="store_true", help="split, train and score in one pass")
    return p


def config_from_args(args) -> dict:
    overrides = []
    for item in args.set:
        if "=" not in item:
            raise InputError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides.append((key.strip(), value.strip()))
    for flag, key in (("schema", "paths.schema"), ("edges", "paths.edges"), ("vertices", "paths.vertices"),
                      ("pairs", "paths.pairs"), ("out", "paths.out"), ("mode", "walk.mode"),
                      ("embed_mode", "embed.mode"), ("workers", "run.workers"), ("backend", "run.backend")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append((key, value))
    if getattr(args, "exclude_direct_edge", False):
        overrides.append(("rtud.exclude_direct", "true"))
    seed = getattr(args, "seed", None)
    if seed is not None:
        for key in ("walk.seed", "embed.seed", "eval.seed", "gen.seed"):
            overrides.append((key, seed))
    return resolve_config(args.config, overrides)


COMMANDS = {
    "generate": cmd_generate,
    "train-rtud": cmd_train_rtud,
    "walk": cmd_walk,
    "embed": cmd_embed,
    "recommend": cmd_recommend,
}

INPUT_ERRORS = (InputError, FileNotFoundError, SchemaError, GraphLoadError, rtud_mod.NoTrainingSignal,
                ValueError, KeyError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.end_to_end)
        return COMMANDS[args.command](cfg)
    except INPUT_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"hetwalk {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - top-level guard
        log.debug("internal error", exc_info=True)
        print(f"hetwalk {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

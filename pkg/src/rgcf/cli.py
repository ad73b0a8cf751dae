"""Command-line entry point: ``rgcf <command> ...``.

Exit codes: 0 success, 1 usage, 2 I/O, 3 id-map mismatch, 4 graph generation.
Every command writes a JSON run manifest next to its main output.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .bpr import BprConfig, bpr_from_posterior, bpr_train, write_bpr
from .evaluation import evaluate
from .exceptions import ConfigurationError, GenerationError, GraphParseError, IdMapError
from .graph import (
    BipartiteGraph, degree_histogram, degree_stats, leave_one_out_split, load_edges, write_edges,
)
from .inference import LOG_HEADER, TrainConfig, VBTrainer, default_workers
from .model import read_posterior, save_posterior
from .prediction import ScoreMode, like_probability, rank_items, user_scores
from .sampling import DegreeDistributionSpec, build_histogram, generate_graph_from_degrees

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_IDMAP, EXIT_GENERATION = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 is reserved for I/O here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_graph(path):
    with open(path, encoding="utf-8") as fh:
        graph, _ = load_edges(fh)
    return graph


def _read_pairs(path):
    """Raw ``(user_id, item_id)`` pairs of an edge-list file."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            tokens = s.split()
            if len(tokens) != 2:
                raise GraphParseError(lineno, line.rstrip("\n"))
            pairs.append((tokens[0], tokens[1]))
    return pairs


def _read_model(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return read_posterior(fh)
        except (ValueError, IndexError) as err:
            raise OSError(f"{path}: not a model file ({err})") from err


def _align(graph, user_ids, item_ids):
    """Re-index ``graph`` onto the model's id maps; every id must be known."""
    uidx = {u: m for m, u in enumerate(user_ids)}
    iidx = {i: n for n, i in enumerate(item_ids)}
    missing_u = [u for u in graph.user_ids if u not in uidx]
    missing_i = [i for i in graph.item_ids if i not in iidx]
    if missing_u or missing_i:
        raise IdMapError(
            f"training graph has {len(missing_u)} user and {len(missing_i)} item ids unknown to the model"
        )
    users, items = graph.edges()
    umap = np.array([uidx[u] for u in graph.user_ids], dtype=np.int64)
    imap = np.array([iidx[i] for i in graph.item_ids], dtype=np.int64)
    return BipartiteGraph.from_edges(umap[users], imap[items], len(user_ids), len(item_ids),
                                     list(user_ids), list(item_ids))


class _Run:
    """Collects the manifest of one command."""

    def __init__(self, command, args):
        self.command = command
        self.args = args
        self.start = time.perf_counter()
        self.inputs = {}
        self.artifacts = []
        self.config = {}
        self.seed = getattr(args, "seed", None)

    def input(self, path):
        self.inputs[path] = _digest(path)

    def artifact(self, path):
        self.artifacts.append(path)
        return path

    def write(self, path):
        manifest = {
            "command": self.command,
            "version": __version__,
            "arguments": {k: v for k, v in vars(self.args).items() if k != "func"},
            "config": self.config,
            "inputs": self.inputs,
            "seed": self.seed,
            "artifacts": self.artifacts,
            "duration_seconds": time.perf_counter() - self.start,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def _manifest_path(args, main_output):
    return args.manifest or f"{main_output}.manifest.json"


def cmd_split(args):
    run = _Run("split", args)
    run.input(args.input)
    split = leave_one_out_split(_read_graph(args.input), args.seed)
    excluded = args.excluded or f"{args.test}.excluded"
    with open(run.artifact(args.train), "w", encoding="utf-8") as tr, \
            open(run.artifact(args.test), "w", encoding="utf-8") as te, \
            open(run.artifact(excluded), "w", encoding="utf-8") as ex:
        split.write(tr, te, ex)
    print(f"train edges\t{split.train.n_edges}\ntest edges\t{len(split.test)}\n"
          f"excluded users\t{len(split.excluded_users)}")
    run.write(_manifest_path(args, args.train))


def cmd_train(args):
    run = _Run("train", args)
    cfg = TrainConfig(
        n_components=args.components, alpha=args.alpha, beta=args.beta, r=args.r,
        max_iter=args.iters, t_eps=args.t_eps, t_tau=args.t_tau, kappa=args.kappa,
        clamp_user_bias=args.clamp_user_bias, seed=args.seed, block_count=args.blocks,
        n_jobs=args.workers or default_workers(),
    ).validate()
    run.config = dataclasses.asdict(cfg)
    run.input(args.train_file)
    graph = _read_graph(args.train_file)
    if graph.n_edges == 0:
        raise UsageError(f"{args.train_file} has no edges")
    trainer = VBTrainer(graph, cfg)
    log_path = args.log or f"{args.out}.log.tsv"
    with open(run.artifact(log_path), "w", encoding="utf-8") as log:
        log.write(LOG_HEADER + "\n")

        def record(rec):
            log.write(rec.tsv() + "\n")
            log.flush()
            if args.verbose:
                print(rec.tsv(), file=sys.stderr)

        trainer.run(record, track_elbo=not args.no_elbo)
    save_posterior(trainer.posterior, run.artifact(args.out))
    with open(run.artifact(f"{args.out}.ratios.tsv"), "w", encoding="utf-8") as fh:
        trainer.ratio_table().write(fh, graph.item_ids)
    run.write(_manifest_path(args, args.out))


def cmd_train_bpr(args):
    run = _Run("train-bpr", args)
    cfg = BprConfig(
        n_components=args.components, learning_rate=args.learning_rate,
        regularization=args.regularization, n_epochs=args.epochs, sampling=args.sampling,
        seed=args.seed,
    ).validate()
    run.config = dataclasses.asdict(cfg)
    run.input(args.train_file)
    graph = _read_graph(args.train_file)
    if graph.n_edges == 0:
        raise UsageError(f"{args.train_file} has no edges")
    model = bpr_train(graph, cfg)
    with open(run.artifact(args.out), "w", encoding="utf-8") as fh:
        write_bpr(model, fh)
    run.write(_manifest_path(args, args.out))


def _scorers(q, kind, modes, hist):
    if kind == "bpr":
        model = bpr_from_posterior(q)
        return {"bpr": model.user_scores}
    return {m: (lambda u, m=m: user_scores(q, u, m, hist)) for m in modes}


def _modes(text):
    try:
        return [ScoreMode(m.strip()).value for m in text.split(",") if m.strip()]
    except ValueError as err:
        raise UsageError(f"unknown score mode in {text!r}; choose from {[m.value for m in ScoreMode]}") from err


def cmd_evaluate(args):
    run = _Run("evaluate", args)
    for p in (args.model, args.train, args.test):
        run.input(p)
    modes = _modes(args.modes)
    q, kind = _read_model(args.model)
    train = _align(_read_graph(args.train), q.user_ids, q.item_ids)
    uidx = {u: m for m, u in enumerate(q.user_ids)}
    iidx = {i: n for n, i in enumerate(q.item_ids)}
    pairs = _read_pairs(args.test)
    known = [(uidx[u], iidx[i]) for u, i in pairs if u in uidx and i in iidx]
    skipped = len(pairs) - len(known)
    if pairs and not known:
        raise IdMapError("no held-out edge refers to ids known to the model")
    test = np.array(known, dtype=np.int64).reshape(-1, 2)
    hist = build_histogram(train.item_degrees, args.r)
    run.config = {"kind": kind, "modes": modes, "r": args.r, "skipped_test_edges": skipped}
    like = None if kind == "bpr" else (lambda u, i: like_probability(q, u, i))
    report = evaluate(train, test, _scorers(q, kind, modes, hist), like)
    report.write(args.out)
    for name in ("rank_by_user_bin.tsv", "rank_by_item_bin.tsv", "classification_by_user_bin.tsv",
                 "like_histograms.tsv"):
        run.artifact(os.path.join(args.out, name))
    if skipped:
        print(f"skipped {skipped} held-out edges with ids unknown to the model", file=sys.stderr)
    for mode, (mean, median) in report.summary().items():
        print(f"{mode}\tmean_rank_score={mean:.6f}\tmedian_rank_score={median:.6f}")
    if like is not None:
        print(f"classification_error\t{report.error:.6f}")
    run.write(_manifest_path(args, os.path.join(args.out, "evaluate")))


def cmd_predict(args):
    run = _Run("predict", args)
    run.input(args.model)
    run.input(args.train)
    q, kind = _read_model(args.model)
    train = _align(_read_graph(args.train), q.user_ids, q.item_ids)
    mode = "bpr" if kind == "bpr" else ScoreMode(args.mode).value
    hist = build_histogram(train.item_degrees, args.r)
    uidx = {u: m for m, u in enumerate(q.user_ids)}
    if args.users:
        unknown = [u for u in args.users if u not in uidx]
        if unknown:
            raise IdMapError(f"unknown user ids: {', '.join(unknown[:5])}")
        users = [uidx[u] for u in args.users]
    else:
        users = range(q.n_users)
    bpr = bpr_from_posterior(q) if kind == "bpr" else None
    out = sys.stdout if args.out == "-" else open(run.artifact(args.out), "w", encoding="utf-8")
    try:
        out.write("# user_id\titem_id\tscore\tmode\n")
        for m in users:
            scores = bpr.user_scores(m) if bpr is not None else None
            ranked = rank_items(q, m, train, mode if bpr is None else "like", hist, scores)
            for n, v in ranked[: args.k]:
                out.write(f"{q.user_ids[m]}\t{q.item_ids[n]}\t{v:.9g}\t{mode}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    run.config = {"kind": kind, "mode": mode, "k": args.k, "r": args.r}
    run.write(_manifest_path(args, args.out if args.out != "-" else "predict"))


def _degree_spec(args, side):
    get = lambda name: getattr(args, f"{side}_{name}")
    family = get("family")
    try:
        return DegreeDistributionSpec(
            family=family, exponent=get("exponent"), cutoff=get("cutoff"),
            d_min=get("dmin"), d_max=get("dmax"),
        )
    except ConfigurationError as err:
        raise UsageError(f"{side} degree spec: {err}") from err


def cmd_sample_graph(args):
    if args.users < 1 or args.items < 1:
        raise UsageError("--users and --items must be positive")
    run = _Run("sample-graph", args)
    user_spec, item_spec = _degree_spec(args, "user"), _degree_spec(args, "item")
    run.config = {"user_spec": dataclasses.asdict(user_spec), "item_spec": dataclasses.asdict(item_spec),
                  "users": args.users, "items": args.items}
    graph = generate_graph_from_degrees(user_spec, item_spec, args.users, args.items, args.seed,
                                        args.max_redraws)
    with open(run.artifact(args.out), "w", encoding="utf-8") as fh:
        write_edges(graph, fh)
    with open(run.artifact(f"{args.out}.degrees.tsv"), "w", encoding="utf-8") as fh:
        _write_degree_histograms(graph, fh)
    print(f"users\t{graph.n_users}\nitems\t{graph.n_items}\nedges\t{graph.n_edges}")
    run.write(_manifest_path(args, args.out))


def _write_degree_histograms(graph, fh):
    fh.write("# side\tdegree\tcount\n")
    for side, degrees in (("user", graph.user_degrees), ("item", graph.item_degrees)):
        d, c = np.unique(degrees, return_counts=True)
        for a, b in zip(d.tolist(), c.tolist()):
            fh.write(f"{side}\t{a}\t{b}\n")


def cmd_stats(args):
    run = _Run("stats", args)
    run.input(args.input)
    with open(args.input, encoding="utf-8") as fh:
        graph, dups = load_edges(fh)
    st = degree_stats(graph)
    print(f"users\t{graph.n_users}\nitems\t{graph.n_items}\nedges\t{graph.n_edges}\n"
          f"duplicates\t{dups}\nmean_user_degree\t{st.mu:.6g}\nmean_item_degree\t{st.nu:.6g}\n"
          f"max_item_degree\t{st.d_max}\ndensity\t{st.density:.6g}")
    if args.out:
        with open(run.artifact(args.out), "w", encoding="utf-8") as fh:
            fh.write("# side\tbin_lo\tbin_hi\tcount\n")
            for side, degrees in (("user", graph.user_degrees), ("item", graph.item_degrees)):
                for lo, hi, count in degree_histogram(degrees):
                    fh.write(f"{side}\t{lo}\t{hi}\t{count}\n")
        run.write(_manifest_path(args, args.out))
    elif args.manifest:
        run.write(args.manifest)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser():
    p = _Parser(prog="rgcf", description="One-class collaborative filtering with random hidden graphs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--manifest", help="run manifest path (default: <output>.manifest.json)")

    s = sub.add_parser("split", help="leave-one-out split of an edge list")
    s.add_argument("input")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--excluded", help="users with fewer than two edges (default: <test>.excluded)")
    s.add_argument("--seed", type=int, default=0)
    common(s)
    s.set_defaults(func=cmd_split)

    t = sub.add_parser("train", help="variational Bayes over sampled hidden graphs")
    t.add_argument("train_file")
    t.add_argument("--out", required=True, help="model file")
    t.add_argument("-K", "--components", type=int, default=20)
    t.add_argument("--alpha", type=float, default=0.01)
    t.add_argument("--beta", type=float, default=0.01)
    t.add_argument("--r", type=float, default=0.5, help="negative rate for the most popular item")
    t.add_argument("--iters", type=int, default=100)
    t.add_argument("--t-eps", type=int, default=10)
    t.add_argument("--t-tau", type=int, default=3)
    t.add_argument("--kappa", type=int)
    t.add_argument("--blocks", type=int, default=1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--clamp-user-bias", action=argparse.BooleanOptionalAction, default=True)
    t.add_argument("--workers", type=_positive_int, help="threads (default: WORKERS or CPU count)")
    t.add_argument("--log", help="iteration log (default: <out>.log.tsv)")
    t.add_argument("--no-elbo", action="store_true", help="skip the per-iteration objective")
    t.add_argument("-v", "--verbose", action="store_true")
    common(t)
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("train-bpr", help="BPR baseline")
    b.add_argument("train_file")
    b.add_argument("--out", required=True)
    b.add_argument("-K", "--components", type=int, default=20)
    b.add_argument("--learning-rate", type=float, default=0.05)
    b.add_argument("--regularization", type=float, default=0.01)
    b.add_argument("--epochs", type=int, default=100)
    b.add_argument("--sampling", choices=("uniform", "popularity"), default="uniform")
    b.add_argument("--seed", type=int, default=0)
    common(b)
    b.set_defaults(func=cmd_train_bpr)

    e = sub.add_parser("evaluate", help="rank held-out edges and write the report tables")
    e.add_argument("--model", required=True)
    e.add_argument("--train", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--modes", default="like,popularity,popularity_times_like")
    e.add_argument("--r", type=float, default=1.0, help="popularity rate for popularity scores")
    common(e)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("predict", help="top-k recommendations per user")
    r.add_argument("--model", required=True)
    r.add_argument("--train", required=True)
    r.add_argument("--out", default="-")
    r.add_argument("-k", type=_positive_int, default=10)
    r.add_argument("--mode", choices=[m.value for m in ScoreMode], default="like")
    r.add_argument("--r", type=float, default=1.0)
    r.add_argument("--users", nargs="*", help="user ids (default: all)")
    common(r)
    r.set_defaults(func=cmd_predict)

    g = sub.add_parser("sample-graph", help="random bipartite graph with given degree laws")
    g.add_argument("--users", type=int, required=True)
    g.add_argument("--items", type=int, required=True)
    for side, exponent, cutoff in (("user", 1.4, 70.0), ("item", 0.77, None)):
        g.add_argument(f"--{side}-family", choices=("power", "cutoff"), default="cutoff" if cutoff else "power")
        g.add_argument(f"--{side}-exponent", type=float, default=exponent)
        g.add_argument(f"--{side}-cutoff", type=float, default=cutoff)
        g.add_argument(f"--{side}-dmin", type=int, default=1)
        g.add_argument(f"--{side}-dmax", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-redraws", type=int, default=10**6)
    g.add_argument("--out", required=True)
    common(g)
    g.set_defaults(func=cmd_sample_graph)

    st = sub.add_parser("stats", help="degree statistics of an edge list")
    st.add_argument("input")
    st.add_argument("--out", help="logarithmic degree histogram TSV")
    common(st)
    st.set_defaults(func=cmd_stats)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (UsageError, ConfigurationError) as err:
        parser.print_usage(sys.stderr)
        print(f"rgcf {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except IdMapError as err:
        print(f"rgcf {args.command}: id mismatch: {err}", file=sys.stderr)
        return EXIT_IDMAP
    except GenerationError as err:
        print(f"rgcf {args.command}: generation failed: {err}", file=sys.stderr)
        return EXIT_GENERATION
    except (OSError, GraphParseError) as err:
        print(f"rgcf {args.command}: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``sdgnn {train,infer,bench,stats,synth}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .candidates import CandidateConfig
from .errors import DataError, NotDecomposedError, NumericalError, TrainingAborted
from .graph_store import Graph, load_matrix, read_graph, save_matrix
from .store import load_store, save_store
from .targets import SageParams, load_decoder, sage_forward
from .trainer import Schedule, TrainConfig, equalize, fit
from .transform import load_params, save_params
from .serving import ServingBundle, bench, bench_summary, infer_embedding, infer_predict, receptive_stats

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("sdgnn")


class _UsageError(Exception):
    pass


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _schedule(text):
    vals = _int_list(text)
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("schedule is start,every,by,floor")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdgnn", description="Sparse decomposition of node embeddings.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit sparse weights and the feature transform")
    t.add_argument("--graph", required=True, help="edge list or SDG1 cache")
    t.add_argument("--features", required=True)
    t.add_argument("--targets", required=True)
    t.add_argument("--out-theta", required=True)
    t.add_argument("--out-phi", required=True)
    t.add_argument("--lambda1", type=float, default=1e-3)
    t.add_argument("--lambda2", type=float, default=1e-5)
    t.add_argument("--max-active", type=int, default=32)
    t.add_argument("--k1", type=int, default=1)
    t.add_argument("--k2", type=int, default=0)
    t.add_argument("--fanout", type=_int_list, default=())
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--iters", type=int, default=50)
    t.add_argument("--phi-steps", type=int, default=5)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--hidden", type=_int_list, default=None, help="hidden widths (default: target dim)")
    t.add_argument("--subset", type=float, default=1.0, help="fraction of nodes used in the loop")
    t.add_argument("--warmup-k", type=int, default=0)
    t.add_argument("--warmup-steps", type=int, default=0)
    t.add_argument("--schedule", type=_schedule, default=None, metavar="START,EVERY,BY,FLOOR")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--equalize", action="store_true", help="replace learned weights by equal weights")

    i = sub.add_parser("infer", help="embedding (or class) of one node")
    i.add_argument("--theta", required=True)
    i.add_argument("--phi", required=True)
    i.add_argument("--decoder")
    i.add_argument("--features", required=True)
    i.add_argument("--node", type=int, required=True)
    i.add_argument("--json", action="store_true")

    b = sub.add_parser("bench", help="single-node latency benchmark")
    b.add_argument("--theta", required=True)
    b.add_argument("--phi", required=True)
    b.add_argument("--decoder")
    b.add_argument("--features", required=True)
    b.add_argument("--nodes", required=True, help="sample size, or a file of node ids")
    b.add_argument("--reps", type=int, default=1)
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--csv", help="write per-record CSV here ('-' for stdout)")

    s = sub.add_parser("stats", help="receptive-field report")
    s.add_argument("--theta", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--max-hop", type=int, default=2)

    y = sub.add_parser("synth", help="write a small synthetic dataset")
    y.add_argument("--out-dir", required=True)
    y.add_argument("--nodes", type=int, default=300)
    y.add_argument("--attach", type=int, default=3, help="edges per new node (preferential attachment)")
    y.add_argument("--feature-dim", type=int, default=16)
    y.add_argument("--target-dim", type=int, default=8)
    y.add_argument("--layers", type=int, default=2)
    y.add_argument("--seed", type=int, default=0)
    return ap


def _train(a):
    X = load_matrix(a.features)
    omega = load_matrix(a.targets)
    g = read_graph(a.graph, X.shape[0])
    try:
        cfg = TrainConfig(
            lambda1=a.lambda1, lambda2=a.lambda2, max_active=a.max_active, batch_size=a.batch,
            outer_iters=a.iters, phi_steps=a.phi_steps, lr=a.lr,
            candidate_cfg=CandidateConfig(a.k1, a.k2, a.fanout, rng_seed=a.seed),
            train_subset_fraction=a.subset, schedule=Schedule(*a.schedule) if a.schedule else None,
            seed=a.seed, hidden_dims=a.hidden, warmup_hops=a.warmup_k, warmup_steps=a.warmup_steps)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    params, store, report = fit(g, X, omega, cfg)
    if a.equalize:
        store = equalize(store)
    save_store(store, a.out_theta)
    save_params(params, a.out_phi)
    for line in report.lines():
        print(line)
    print(report.summary())
    return EXIT_OK


def _bundle(a):
    X = load_matrix(a.features)
    dec = load_decoder(a.decoder) if getattr(a, "decoder", None) else None
    return ServingBundle(load_params(a.phi), load_store(a.theta), X, dec)


def _infer(a):
    b = _bundle(a)
    if not 0 <= a.node < b.store.num_nodes:
        raise DataError(f"node {a.node} out of range")
    emb = infer_embedding(b, a.node)
    out = {"node": a.node, "embedding": emb.tolist()}
    if b.decoder is not None:
        cls, logits = infer_predict(b, a.node)
        out.update({"class": cls, "logits": logits.tolist()})
    if a.json:
        print(json.dumps(out))
    else:
        print(" ".join(f"{v:.17g}" for v in emb))
        if b.decoder is not None:
            print(f"class={out['class']} logits=" + " ".join(f"{v:.17g}" for v in out["logits"]))
    return EXIT_OK


def _bench_nodes(spec, store, seed):
    path = Path(spec)
    if path.is_file():
        try:
            nodes = [int(tok) for tok in path.read_text().split()]
        except ValueError:
            raise DataError(f"{spec}: node ids must be integers") from None
        bad = [z for z in nodes if not store.is_decomposed(z)]
        if bad:
            raise NotDecomposedError(f"node {bad[0]} not decomposed")
        return nodes
    try:
        count = int(spec)
    except ValueError:
        raise _UsageError(f"--nodes: {spec!r} is neither a count nor a file") from None
    pool = np.array([z for z in range(store.num_nodes) if store.is_decomposed(z)])
    rng = np.random.default_rng(seed)
    return rng.choice(pool, size=count, replace=count > pool.size).tolist()


def _bench(a):
    if a.reps < 0 or a.warmup < 0:
        raise _UsageError("--reps and --warmup must be >= 0")
    b = _bundle(a)
    nodes = _bench_nodes(a.nodes, b.store, a.seed)
    records = bench(b, nodes, a.warmup, a.reps)
    s = bench_summary(records)
    what = "embedding+decoder" if b.decoder is not None else "embedding only"
    print(f"timed={what} count={s['count']} mean_us={s['mean_us']:.3f} "
          f"p90_us={s['p90_us']:.3f} p99_us={s['p99_us']:.3f}")
    if a.csv:
        rows = ["node,nnz,micros,checksum"] + [r.line() for r in records]
        text = "\n".join(rows) + "\n"
        if a.csv == "-":
            sys.stdout.write(text)
        else:
            Path(a.csv).write_text(text)
    return EXIT_OK


def _stats(a):
    store = load_store(a.theta)
    g = read_graph(a.graph, store.num_nodes)
    for line in receptive_stats(store, g, a.max_hop).lines():
        print(line)
    return EXIT_OK


def _synth(a):
    import networkx as nx  # optional; only this subcommand needs it

    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    nxg = nx.barabasi_albert_graph(a.nodes, a.attach, seed=a.seed)
    edges = np.array(sorted(nxg.edges()), dtype=np.int64)
    np.savetxt(out / "graph.txt", edges, fmt="%d")
    g = Graph.from_edges(a.nodes, edges)
    rng = np.random.default_rng(a.seed)
    X = rng.normal(size=(a.nodes, a.feature_dim))
    dims = [a.feature_dim] + [a.target_dim] * a.layers
    omega = sage_forward(g, X, SageParams.init(dims, seed=a.seed + 1))
    save_matrix(X, out / "features.sdm")
    save_matrix(omega, out / "targets.sdm")
    print(f"wrote {out}/graph.txt features.sdm targets.sdm (n={a.nodes}, edges={g.num_edges})")
    return EXIT_OK


_COMMANDS = {"train": _train, "infer": _infer, "bench": _bench, "stats": _stats, "synth": _synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[a.command](a)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sdgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as exc:
        print(f"sdgnn: training aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericalError as exc:
        print(f"sdgnn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, NotDecomposedError, OSError) as exc:
        print(f"sdgnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``surf {gen-data,train,eval,baseline}``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 runtime error. Every
failure prints one ``error code=<n> kind=<kind> message=<json string>`` line
on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from surf import baselines, evaluate, graph, seeding
from surf.config import RunConfig, load_config
from surf.data import META_TEST, META_TRAIN, MetaDataset, gen_meta_dataset, load_features, write_features
from surf.errors import ConfigError, FormatError, ParameterError, StructuralError
from surf.train import TrainState, load_checkpoint, save_checkpoint, train

log = logging.getLogger("surf")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
INDEX_VERSION = 1


class DataError(Exception):
    """Input data missing or unreadable."""


# ---------------------------------------------------------------------------
# helpers


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, config_path, cfg: RunConfig, artifacts=()) -> Path:
    manifest = {
        "command": command,
        "config_path": None if config_path is None else str(config_path),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "out_dir": str(out_dir),
        "artifacts": {Path(a).name: sha256(a) for a in artifacts},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def build_graph(cfg: RunConfig) -> graph.Graph:
    gc, n = cfg.graph, cfg.data.n
    gseed = seeding.derive(cfg.seed, seeding.GRAPH)
    if gc.kind == "regular":
        return graph.make_regular(n, gc.degree, gseed)
    if gc.kind == "erdos-renyi":
        return graph.make_erdos_renyi(n, gc.p, gseed)
    return graph.make_star(n + 1)


def shift_for(g: graph.Graph, mode: str) -> np.ndarray:
    return graph.shift_operator(g, graph.STAR_ROW if mode == "star" else graph.NORMALIZED_ADJACENCY)


def load_data_dir(data_dir, role: str) -> tuple[MetaDataset, graph.Graph, dict]:
    data_dir = Path(data_dir)
    index_path = data_dir / "index.json"
    if not index_path.exists():
        raise DataError(f"no index.json in {data_dir}")
    try:
        index = json.loads(index_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{index_path}: {exc}") from None
    if index.get("version") != INDEX_VERSION:
        raise DataError(f"{index_path}: unsupported index version")
    files = index.get(role, [])
    if not files:
        raise DataError(f"{data_dir}: no {role} datasets")
    datasets = []
    for name in files:
        path = data_dir / name
        if not path.exists():
            raise DataError(f"missing dataset file {path}")
        datasets.append(load_features(path, n_classes=index["C"]))
    g = graph.read_edgelist(data_dir / "graph.txt")
    return MetaDataset(datasets, role), g, index


def _check_graph_mode(g, meta, mode):
    expected = meta[0].n + (1 if mode == "star" else 0)
    if g.n != expected:
        raise ConfigError(f"graph has {g.n} nodes; {mode} mode with {meta[0].n} agents needs {expected}")


# ---------------------------------------------------------------------------
# commands


def generate(cfg: RunConfig) -> dict[str, MetaDataset]:
    """Meta-train and meta-test sets of a run, keyed by role."""
    dc = cfg.data
    means_seed = seeding.derive(cfg.seed, seeding.MEANS)
    out = {}
    for role, Q, alpha, key in ((META_TRAIN, dc.Q_train, dc.alpha_train, 0), (META_TEST, dc.Q_test, dc.alpha_test, 1)):
        out[role] = gen_meta_dataset(
            dc.n, dc.p, dc.C, dc.m_train, dc.m_test, Q, alpha, seeding.derive(cfg.seed, seeding.DATA, key),
            class_sep=dc.class_sep, means_seed=means_seed, role=role,
        )
    return out


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "gen-data", args.config, cfg)
    dc = cfg.data
    index = {"version": INDEX_VERSION, "n": dc.n, "p": dc.p, "C": dc.C, "m_train": dc.m_train, "m_test": dc.m_test}
    written = []
    for role, meta in generate(cfg).items():
        (out / role).mkdir(exist_ok=True)
        names = []
        for q, ds in enumerate(meta):
            name = f"{role}/dataset_{q:04d}.csv"
            write_features(ds, out / name)
            names.append(name)
            written.append(out / name)
        index[role] = names
    g = build_graph(cfg)
    graph.write_edgelist(g, out / "graph.txt")
    (out / "index.json").write_text(json.dumps(index, indent=2))
    written += [out / "graph.txt", out / "index.json"]
    write_manifest(out, "gen-data", args.config, cfg, written)
    print(f"wrote {len(index[META_TRAIN]) + len(index[META_TEST])} datasets to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    tcfg = cfg.train
    if args.no_constraints:
        tcfg = dataclasses.replace(tcfg, constraints_enabled=False)
    if args.epochs is not None:
        tcfg = dataclasses.replace(tcfg, epochs=args.epochs)
    cfg = dataclasses.replace(cfg, train=tcfg)
    meta, g, _ = load_data_dir(args.data_dir, META_TRAIN)
    _check_graph_mode(g, meta, tcfg.mode)
    S = shift_for(g, tcfg.mode)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.json"
    state: TrainState | None = None
    if args.resume and ckpt.exists():
        state, saved = load_checkpoint(ckpt)
        if dataclasses.replace(saved, epochs=tcfg.epochs) != tcfg:
            raise ConfigError("checkpoint was trained with a different configuration")
    write_manifest(out, "train", args.config, cfg)

    def on_epoch(st):
        save_checkpoint(st, tcfg, ckpt)

    state = train(meta, S, tcfg, state=state, on_epoch=on_epoch)
    save_checkpoint(state, tcfg, ckpt)
    state.history.write_csv(out / "history.csv", tcfg.L)
    summary = {
        "iterations": state.iteration,
        "lambda": state.lam.tolist(),
        "final_objective": state.history.records[-1].objective if state.history.records else None,
        "constraints_enabled": tcfg.constraints_enabled,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    write_manifest(out, "train", args.config, cfg, [ckpt, out / "history.csv", out / "summary.json"])
    print(f"trained {state.iteration} iterations; checkpoint {ckpt}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.seed)
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(args.out_dir) / "checkpoint.json"
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    state, tcfg = load_checkpoint(ckpt)
    meta, g, _ = load_data_dir(args.data_dir, META_TEST)
    _check_graph_mode(g, meta, tcfg.mode)
    S = shift_for(g, tcfg.mode)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "eval", args.config, cfg)
    kw = {"epsilon": cfg.eval.epsilon, "mu0": tcfg.mu0, "sigma0": tcfg.sigma0}
    rep = evaluate.meta_evaluate(state.theta, meta, S, cfg.seed, **kw)
    written = list(evaluate.emit_report(rep, out / "report"))
    if args.async_grid is not None:
        res = evaluate.async_evaluate(state.theta, meta, S, args.async_grid, cfg.seed, **kw)
        for k, r in zip(res.n_asyn, res.reports):
            written += evaluate.emit_report(r, out / f"report_async_{k}")
        summary = {"n_asyn": res.n_asyn, "accuracy": res.accuracy.tolist(), "loss": res.loss.tolist()}
        (out / "async.json").write_text(json.dumps(summary, indent=2))
        written.append(out / "async.json")
    write_manifest(out, "eval", args.config, cfg, written)
    print(f"final accuracy {rep.mean_acc[-1]:.4f} over {rep.Q} datasets")
    return EXIT_OK


BASELINE_COLUMNS = ["method", "round"] + evaluate.CSV_COLUMNS[1:]


def _baseline_hyper(method: str, bc) -> dict:
    if method == baselines.DGD:
        return {"beta": bc.beta, "batch_count": bc.batch_count}
    if method == baselines.DSGD:
        return {"beta": bc.beta}
    if method == baselines.DFEDAVGM:
        return {"beta": bc.beta, "momentum": bc.momentum, "local_steps": bc.local_steps, "batch_count": bc.batch_count}
    return {"beta": bc.beta, "local_steps": bc.local_steps, "participants_per_round": bc.participants_per_round}


def cmd_baseline(args) -> int:
    cfg = load_config(args.config, args.seed)
    method = args.method
    if method not in baselines.METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {list(baselines.METHODS)}")
    meta, g, _ = load_data_dir(args.data_dir, META_TEST)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "baseline", args.config, cfg)
    bc, T = cfg.baseline, cfg.baseline.T
    hyper = _baseline_hyper(method, bc)
    curves = {"loss": [], "acc": [], "grad_norm": []}
    for q, ds in enumerate(meta):
        w0 = evaluate.eval_w0(ds.n, ds.d, cfg.seed, q, cfg.train.mu0, cfg.train.sigma0)
        run = baselines.run_method(method, ds, g, T, seeding.derive(cfg.seed, seeding.BASELINE, q), w0=w0, **hyper)
        for k, v in baselines.run_metrics(run, ds).items():
            curves[k].append(v)
    loss, acc, gn = (np.mean(curves[k], axis=0) for k in ("loss", "acc", "grad_norm"))
    path = out / f"baseline_{method}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BASELINE_COLUMNS)
        for t in range(1, T + 1):
            w.writerow([method, t, repr(float(loss[t])), repr(float(acc[t])), repr(float(gn[t])), "", repr(float(gn[t] / gn[t - 1]))])
    write_manifest(out, "baseline", args.config, cfg, [path])
    print(f"{method}: {T} rounds, final accuracy {acc[-1]:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", default=None, help="JSON run configuration")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        if data:
            p.add_argument("--data-dir", required=True)

    p = sub.add_parser("gen-data", help="generate meta-train/meta-test feature files and the graph")
    common(p, data=False)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="primal-dual meta-training")
    common(p)
    p.add_argument("--no-constraints", action="store_true", help="train without descending constraints")
    p.add_argument("--resume", action="store_true", help="continue from <out-dir>/checkpoint.json")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the meta-test set")
    common(p)
    p.add_argument("--checkpoint", default=None, help="defaults to <out-dir>/checkpoint.json")
    p.add_argument("--async", dest="async_grid", type=_int_list, default=None, metavar="0,5,10,20")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="run a classical baseline on the meta-test set")
    common(p)
    p.add_argument("--method", required=True, help="dgd, dsgd, dfedavgm or fedavg-star")
    p.set_defaults(func=cmd_baseline)
    return parser


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(f"error code={code} kind={kind} message={json.dumps(str(exc))}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (DataError, FormatError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    except (ParameterError, StructuralError) as exc:
        return _fail(EXIT_CONFIG, "parameter", exc)
    except Exception as exc:  # noqa: BLE001
        return _fail(EXIT_RUNTIME, "runtime", exc)


if __name__ == "__main__":
    sys.exit(main())

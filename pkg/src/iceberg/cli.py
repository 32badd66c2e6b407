"""Command-line entry points: split, propagate, train, sweep, eval.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or input
error. Every run writes a manifest with the resolved configuration and
git-style content hashes of its inputs, so ``train --manifest`` can replay it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from iceberg import __version__
from iceberg.graph import DATASET_FILES, GraphFormatError, load_graph
from iceberg.kernels import BACKEND
from iceberg.metrics import evaluate
from iceberg.nn import load_checkpoint, save_checkpoint
from iceberg.propagation import (
    PropagationConfig,
    StaleCacheError,
    cache_diffusion,
    diffuse_graph,
    graph_digest,
    load_diffusion,
)
from iceberg.selftrain import (
    PLUGINS,
    StaleDiffusionError,
    TrainConfig,
    TrainingDiverged,
    plugin_config,
    predict_confidence,
    train,
)
from iceberg.splits import SplitError, load_split, make_fewshot, make_step_imbalance, save_split

log = logging.getLogger("iceberg")


class UsageError(ValueError):
    pass


INPUT_ERRORS = (UsageError, GraphFormatError, SplitError, StaleCacheError, StaleDiffusionError,
                FileNotFoundError, json.JSONDecodeError, ValueError)


# ---------------------------------------------------------------- hashing

def git_blob_hash(path) -> str:
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def input_hashes(**paths):
    """Blob hashes for files; for a dataset directory, one hash per file plus a tree hash."""
    out = {}
    for name, path in paths.items():
        if path is None:
            continue
        path = Path(path)
        if path.is_dir():
            files = {f: git_blob_hash(path / f) for f in DATASET_FILES if (path / f).exists()}
            tree = "".join(f"{f} {h}\n" for f, h in sorted(files.items())).encode()
            out[name] = {"path": str(path), "tree": hashlib.sha1(tree).hexdigest(), "files": files}
        else:
            out[name] = {"path": str(path), "blob": git_blob_hash(path)}
    return out


def write_manifest(path, command, payload):
    manifest = {"command": command, "version": __version__, "backend": BACKEND, **payload}
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- splits

def split_params(args):
    if args.kind == "step":
        return {"kind": "step", "base": args.base, "ratio": args.ir, "val": args.val, "seed": args.seed}
    return {"kind": "fewshot", "k": args.k, "val": args.val, "seed": args.seed}


def make_split(graph, params):
    if params["kind"] == "step":
        return make_step_imbalance(graph, params["base"], params["ratio"], params["val"], params["seed"])
    if params["kind"] == "fewshot":
        return make_fewshot(graph, params["k"], params["val"], params["seed"])
    raise UsageError(f"unknown split kind {params['kind']!r}")


def add_split_args(p, seed_flag="--seed"):
    p.add_argument("--kind", choices=["step", "fewshot"], default="step")
    p.add_argument("--base", type=int, default=20, help="labels per majority class")
    p.add_argument("--ir", type=float, default=10, help="imbalance ratio")
    p.add_argument("--k", type=int, default=1, help="labels per class for few-shot splits")
    p.add_argument("--val", type=int, default=30, help="validation nodes per class")
    if seed_flag:
        p.add_argument(seed_flag, dest="seed", type=int, default=0)


def cmd_split(args):
    graph = load_graph(args.data)
    masks = make_split(graph, split_params(args))
    out = save_split(masks, args.out)
    write_manifest(out.with_name(out.name + ".manifest.json"), "split", {
        "split": masks.params, "inputs": input_hashes(data=args.data),
    })
    print(json.dumps({"labeled_counts": masks.labeled_counts.tolist(), "train": int(masks.train_idx.size),
                      "val": int(masks.val_idx.size), "test": int(masks.test_idx.size)}))
    return 0


# ---------------------------------------------------------------- propagate

def cmd_propagate(args):
    graph = load_graph(args.data)
    config = PropagationConfig(args.alpha, args.hops)
    diffused = diffuse_graph(graph, config, not args.no_self_loops)
    out = cache_diffusion(diffused, args.out)
    write_manifest(out.with_name(out.name + ".manifest.json"), "propagate", {
        "propagation": {"alpha": config.alpha, "hops": config.hops, "add_self_loops": not args.no_self_loops},
        "source_hash": diffused.source_hash, "inputs": input_hashes(data=args.data),
    })
    print(diffused.source_hash)
    return 0


# ---------------------------------------------------------------- train

def _on_off(value):
    if value is None:
        return None
    return {"on": True, "off": False, "true": True, "false": False, "1": True, "0": False}[value.lower()]


def resolve_config(args) -> TrainConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    config = TrainConfig.from_dict(base)
    if args.plugin:
        config = plugin_config(config, args.plugin)
    overrides = {
        "mode": args.mode, "hops": getattr(args, "config_hops", None), "alpha": args.alpha, "epochs": args.epochs,
        "lam": args.lam, "mu": args.mu, "beta": args.beta, "seed": args.train_seed,
        "lr": args.lr, "weight_decay": args.weight_decay, "dropout": args.dropout,
        "double_balancing": _on_off(args.db), "noise_tolerant": _on_off(args.noise_tolerant),
    }
    if args.hidden is not None:
        overrides["hidden"] = tuple(args.hidden)
    if args.threshold is not None:
        overrides["threshold"] = args.threshold if args.threshold == "dynamic" else float(args.threshold)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **overrides)


def load_or_diffuse(graph, config, cache_path):
    if cache_path is None:
        return diffuse_graph(graph, config.propagation, config.add_self_loops)
    cache_path = Path(cache_path)
    expected = graph_digest(graph, config.propagation, config.add_self_loops)
    if cache_path.exists():
        try:
            return load_diffusion(cache_path, expected)
        except StaleCacheError:
            log.info("diffusion cache %s is stale; recomputing", cache_path)
    diffused = diffuse_graph(graph, config.propagation, config.add_self_loops)
    cache_diffusion(diffused, cache_path)
    return diffused


def cmd_train(args):
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        data = args.data or manifest["inputs"]["data"]["path"]
        recorded = manifest["inputs"]["data"]["tree"]
        if input_hashes(data=data)["data"]["tree"] != recorded:
            raise UsageError(f"dataset at {data} does not match the manifest's content hash")
        config = TrainConfig.from_dict(manifest["config"])
        params = manifest["split"]
        if not params:
            raise UsageError("the manifest does not describe a regenerable split")
    else:
        if not args.data:
            raise UsageError("train needs --data (or --manifest)")
        data = args.data
        config = resolve_config(args)
        params = None
    graph = load_graph(data)
    if params is None and args.split:
        masks = load_split(args.split, graph)
    else:
        masks = make_split(graph, params or split_params(args))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tic = time.perf_counter()
    diffused = load_or_diffuse(graph, config, args.cache)
    prop_seconds = time.perf_counter() - tic
    model, record = train(graph, masks, config, diffused)
    total = time.perf_counter() - tic

    save_split(masks, out / "split.json")
    save_checkpoint(model, out / "model.bin")
    (out / "epochs.jsonl").write_text("".join(line + "\n" for line in record.jsonl_lines()), encoding="utf-8")
    summary = record.summary()
    write_json(out / "summary.json", summary)
    write_json(out / "timing.json", {
        "propagation_seconds": prop_seconds, "total_seconds": total,
        "epoch_seconds": [h.seconds for h in record.history],
    })
    write_manifest(out / "manifest.json", "train", {
        "config": config.to_dict(),
        "split": masks.params if masks.params else None,
        "diffusion_hash": diffused.source_hash,
        "inputs": input_hashes(data=data, split=args.split if not args.manifest else None,
                               config=args.config if not args.manifest else None),
    })
    if summary["test"]:
        t = summary["test"]
        print(f"test bAcc {100 * t['balanced_accuracy']:.2f}  macro-F1 {100 * t['macro_f1']:.2f}  "
              f"acc {100 * t['accuracy']:.2f}  (best epoch {record.best_epoch})")
    return 0


# ---------------------------------------------------------------- eval

def cmd_eval(args):
    run = Path(args.run)
    manifest = json.loads((run / "manifest.json").read_text(encoding="utf-8"))
    config = TrainConfig.from_dict(manifest["config"])
    graph = load_graph(args.data or manifest["inputs"]["data"]["path"])
    masks = load_split(args.split or run / "split.json", graph)
    diffused = load_or_diffuse(graph, config, args.cache)
    if diffused.source_hash != manifest["diffusion_hash"]:
        raise UsageError("dataset or propagation settings differ from the ones the model was trained on")
    model = load_checkpoint(run / "model.bin")
    _, pred = predict_confidence(model, diffused)
    report = {name: evaluate(pred, graph.labels, idx, graph.num_classes).as_dict()
              for name, idx in (("val", masks.val_idx), ("test", masks.test_idx)) if idx.size}
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        write_json(args.out, report)
    return 0


# ---------------------------------------------------------------- sweep

_GRAPHS = {}
_DIFFUSED = {}


def _graph(path):
    if path not in _GRAPHS:
        _GRAPHS[path] = load_graph(path)
    return _GRAPHS[path]


def run_job(job):
    """Train one grid cell; returns metrics and the per-epoch diagnostic curve."""
    graph = _graph(job["data"])
    masks = make_split(graph, job["split"])
    config = TrainConfig.from_dict(job["config"])
    key = (job["data"], config.alpha, config.hops, config.add_self_loops)
    if key not in _DIFFUSED:
        _DIFFUSED[key] = diffuse_graph(graph, config.propagation, config.add_self_loops)
    _, record = train(graph, masks, config, _DIFFUSED[key])
    curve = [(h.epoch, h.utilization, h.pseudo_accuracy, h.threshold, h.val_bacc) for h in record.history]
    return {**{k: job[k] for k in ("dataset", "mode", "plugin", "hops", "threshold", "seed", "table")},
            "test": record.test.as_dict(), "best_epoch": record.best_epoch, "curve": curve}


def worker_count(requested):
    limit = os.environ.get("ICEBERG_THREADS")
    n = requested or os.cpu_count() or 1
    if limit:
        n = min(n, max(1, int(limit)))
    return max(1, n)


def build_jobs(spec, base_config):
    if not spec["seeds"]:
        raise UsageError("empty grid: no seeds")
    if not spec["modes"]:
        raise UsageError("empty grid: no balancing modes")
    if not spec["plugins"] and not spec["hops"]:
        raise UsageError("empty grid: no plugins and no hop sweep")
    if not spec["data"]:
        raise UsageError("empty grid: no datasets")
    jobs = []
    for data in spec["data"]:
        name = Path(data).name
        for seed in spec["seeds"]:
            split = {**spec["split"], "seed": seed}
            for mode in spec["modes"]:
                for plugin in spec["plugins"]:
                    for tau in spec["thresholds"] if plugin != "base" else ["dynamic"]:
                        cfg = plugin_config(replace(base_config, mode=mode, seed=seed, threshold=tau), plugin)
                        jobs.append({"table": "main", "data": data, "dataset": name, "mode": mode,
                                     "plugin": plugin, "hops": cfg.hops, "threshold": tau, "seed": seed,
                                     "split": split, "config": cfg.to_dict()})
                for hops in spec["hops"]:
                    cfg = replace(plugin_config(replace(base_config, mode=mode, seed=seed), "base"), hops=hops)
                    jobs.append({"table": "hops", "data": data, "dataset": name, "mode": mode, "plugin": "base",
                                 "hops": hops, "threshold": "dynamic", "seed": seed, "split": split,
                                 "config": cfg.to_dict()})
    return jobs


def _mean_std(values):
    values = np.asarray(values, dtype=np.float64) * 100
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std


def aggregate(results, table, keys):
    groups = {}
    for r in results:
        if r["table"] == table:
            groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    rows = []
    for key, members in groups.items():
        row = dict(zip(keys, key))
        row["seeds"] = len(members)
        for metric, field in (("bacc", "balanced_accuracy"), ("f1", "macro_f1"), ("acc", "accuracy")):
            row[f"{metric}_mean"], row[f"{metric}_std"] = _mean_std([m["test"][field] for m in members])
        rows.append(row)
    return rows


def write_csv(path, rows):
    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def format_table(header, lines):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *lines)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([fmt.format(*header), rule, *(fmt.format(*map(str, line)) for line in lines)]) + "\n"


def cmd_sweep(args):
    spec = {}
    if args.spec:
        spec = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    for key in ("data", "seeds", "modes", "plugins", "hops", "thresholds"):
        value = getattr(args, key)
        if value is not None:
            spec[key] = value
    spec.setdefault("seeds", [0, 1, 2, 3, 4])
    spec.setdefault("modes", ["erm"])
    spec.setdefault("plugins", list(PLUGINS))
    spec.setdefault("hops", [])
    spec.setdefault("thresholds", ["dynamic"])
    spec["thresholds"] = [t if t == "dynamic" else float(t) for t in spec["thresholds"]]
    spec.setdefault("split", split_params(args))
    spec["split"] = {k: v for k, v in spec["split"].items() if k != "seed"}
    if "data" not in spec:
        raise UsageError("sweep needs --data or a spec file with 'data'")
    for plugin in spec["plugins"]:
        if plugin not in PLUGINS:
            raise UsageError(f"unknown plugin {plugin!r}")
    base_config = resolve_config(args)
    jobs = build_jobs(spec, base_config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = worker_count(args.workers)
    log.info("running %d jobs on %d worker(s)", len(jobs), workers)
    tic = time.perf_counter()
    if workers == 1 or len(jobs) == 1:
        results = [run_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_job, jobs))
    elapsed = time.perf_counter() - tic

    main_rows = aggregate(results, "main", ("dataset", "mode", "plugin", "hops", "threshold"))
    write_csv(out / "results.csv", main_rows)
    if main_rows:
        (out / "results.txt").write_text(format_table(
            ["dataset", "mode", "plugin", "threshold", "seeds", "bAcc", "macro-F1", "acc"],
            [[r["dataset"], r["mode"], r["plugin"], r["threshold"], r["seeds"],
              f"{r['bacc_mean']:.2f} ± {r['bacc_std']:.2f}", f"{r['f1_mean']:.2f} ± {r['f1_std']:.2f}",
              f"{r['acc_mean']:.2f} ± {r['acc_std']:.2f}"] for r in main_rows]), encoding="utf-8")

    hop_rows = aggregate(results, "hops", ("dataset", "mode", "hops"))
    write_csv(out / "hops.csv", hop_rows)
    if hop_rows:
        hops = sorted({r["hops"] for r in hop_rows})
        cells = {(r["dataset"], r["mode"], r["hops"]): r["bacc_mean"] for r in hop_rows}
        lines = [[f"{d} ({m})", *(f"{cells[(d, m, h)]:.2f}" for h in hops)]
                 for d, m in dict.fromkeys((r["dataset"], r["mode"]) for r in hop_rows)]
        (out / "hops.txt").write_text(format_table(["bAcc", *(f"T={h}" for h in hops)], lines), encoding="utf-8")

    with open(out / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "mode", "plugin", "hops", "threshold", "seed", "epoch",
                         "utilization", "pseudo_accuracy", "tau", "val_bacc"])
        for r in results:
            for point in r["curve"]:
                writer.writerow([r["dataset"], r["mode"], r["plugin"], r["hops"], r["threshold"], r["seed"], *point])

    write_json(out / "runs.json", [{k: v for k, v in r.items() if k != "curve"} for r in results])
    write_json(out / "timing.json", {"total_seconds": elapsed, "jobs": len(jobs), "workers": workers})
    write_manifest(out / "manifest.json", "sweep", {
        "spec": spec, "config": base_config.to_dict(),
        "inputs": input_hashes(**{f"data:{Path(d).name}": d for d in spec["data"]}, spec=args.spec,
                               config=args.config),
    })
    if (out / "results.txt").exists():
        sys.stdout.write((out / "results.txt").read_text(encoding="utf-8"))
    if (out / "hops.txt").exists():
        sys.stdout.write((out / "hops.txt").read_text(encoding="utf-8"))
    return 0


# ---------------------------------------------------------------- parser

def add_config_args(p, single_run=True):
    p.add_argument("--config", help="JSON file with TrainConfig keys")
    if single_run:
        p.add_argument("--plugin", choices=PLUGINS)
        p.add_argument("--mode", choices=["erm", "rw", "bs"])
        p.add_argument("--hops", dest="config_hops", type=int)
    p.add_argument("--db", help="double balancing on/off")
    p.add_argument("--noise-tolerant", help="reverse cross-entropy term on/off")
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--hidden", type=int, nargs="+")
    p.add_argument("--threshold", help="'dynamic' or a fixed confidence in (0, 1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="iceberg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="write a train/val/test split")
    p.add_argument("--data", required=True)
    add_split_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("propagate", help="precompute and cache diffused features")
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--hops", type=int, default=10)
    p.add_argument("--no-self-loops", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data")
    p.add_argument("--split", help="split JSON; otherwise generated from the split flags")
    add_split_args(p, seed_flag="--split-seed")
    add_config_args(p)
    p.add_argument("--seed", dest="train_seed", type=int)
    p.add_argument("--cache", help="diffusion cache file (reused when fresh)")
    p.add_argument("--manifest", help="replay the run described by a manifest.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="grid over seeds, modes, plugins and hops")
    p.add_argument("--spec", help="JSON experiment spec; flags override its keys")
    p.add_argument("--data", nargs="*")
    add_split_args(p, seed_flag=None)
    p.add_argument("--seeds", type=int, nargs="*")
    p.add_argument("--modes", nargs="*", choices=["erm", "rw", "bs"])
    p.add_argument("--plugins", nargs="*")
    p.add_argument("--hops", type=int, nargs="*", help="supervised-only hop sweep")
    p.add_argument("--thresholds", nargs="*")
    add_config_args(p, single_run=False)
    p.set_defaults(train_seed=None, plugin=None, mode=None, seed=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="evaluate a trained run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--data")
    p.add_argument("--split")
    p.add_argument("--cache")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

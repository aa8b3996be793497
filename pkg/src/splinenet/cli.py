"""Command-line entry point: impute, train, eval, inspect-kernels, bench, synth, convert.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Every artifact carries a manifest with the resolved configuration and the
package version. CSV artifacts carry it as a leading ``#`` comment line.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from . import bench as B
from . import inspection
from .data import Dataset, NormStats, csv_to_jsonl, load_csv_long, load_jsonl, normalize, save_jsonl, split, synth_shapes
from .errors import DataError, NumericalError
from .model import SplineNetConfig, TrainSettings, evaluate, init_params, load_checkpoint, save_checkpoint, train
from .spline import FIT_KINDS, eval_spline, fit

log = logging.getLogger("splinenet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

MODEL_KEYS = [f.name for f in fields(SplineNetConfig) if f.name not in ("in_channels", "n_classes", "seed")]
TRAIN_KEYS = ["lr", "epochs", "batch_size", "patience", "metric", "weight_decay", "dropout"]
RUN_KEYS = ["seed", "repeats", "threads", "stratified"]
RUN_DEFAULTS = {"seed": 0, "repeats": 1, "threads": 1, "stratified": True}


class UsageError(Exception):
    pass


# --- manifests -------------------------------------------------------------------


def manifest(command: str, config: dict) -> dict:
    return {"tool": "splinenet", "version": __version__, "command": command, "config": config}


def _csv_with_manifest(body: str, man: dict) -> str:
    return "# manifest: " + json.dumps(man, sort_keys=True) + "\n" + body


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _emit(text: str, output: str | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


# --- config resolution -----------------------------------------------------------


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path}: {e}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(doc) - set(MODEL_KEYS) - set(TRAIN_KEYS) - set(RUN_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return doc


def resolve(args: argparse.Namespace) -> dict:
    """Defaults < config file < explicit flags."""
    model_defaults = {f.name: f.default for f in fields(SplineNetConfig) if f.name in MODEL_KEYS}
    train_defaults = {k: v for k, v in asdict(TrainSettings()).items() if k in TRAIN_KEYS}
    cfg = {**model_defaults, **train_defaults, **RUN_DEFAULTS}
    cfg.update(_load_config_file(getattr(args, "config", None)))
    for k in list(cfg):
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _load_dataset(path: str) -> Dataset:
    if not Path(path).exists():
        raise DataError(f"{path} does not exist")
    return load_csv_long(path) if path.endswith(".csv") else load_jsonl(path)


# --- subcommands -----------------------------------------------------------------


def cmd_impute(args) -> int:
    ds = _load_dataset(args.input)
    queries = None
    if args.times:
        try:
            queries = np.asarray([float(x) for x in args.times.split(",")])
        except ValueError:
            raise UsageError("--times must be a comma-separated list of numbers") from None
    man = manifest("impute", {"input": args.input, "fit_kind": args.fit, "times": None if queries is None else queries.tolist()})
    lines = ["series_id,time,channel,value"]
    for (ts, _), sid in zip(ds.samples, ds.ids):
        s = fit(ts, args.fit)
        t = ts.times if queries is None else queries
        vals = eval_spline(s, t)
        for ti, row in zip(t, vals):
            for c, v in enumerate(row):
                lines.append(f"{sid},{float(ti)!r},{c},{float(v)!r}")
    _emit(_csv_with_manifest("\n".join(lines) + "\n", man), args.output)
    return EXIT_OK


def _model_config(cfg: dict, ds: Dataset, seed: int) -> SplineNetConfig:
    return SplineNetConfig(in_channels=ds.d, n_classes=ds.n_classes, seed=seed, **{k: cfg[k] for k in MODEL_KEYS})


def _settings(cfg: dict, seed: int) -> TrainSettings:
    return TrainSettings(seed=seed, threads=cfg["threads"], **{k: cfg[k] for k in TRAIN_KEYS})


def cmd_train(args) -> int:
    cfg = resolve(args)
    if cfg["repeats"] < 1 or cfg["threads"] < 1:
        raise UsageError("--repeats and --threads must be >= 1")
    ds = _load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = manifest("train", {**cfg, "data": args.data})
    per_seed = []
    for r in range(cfg["repeats"]):
        seed = cfg["seed"] + r
        tr, va, te = split(ds, seed=seed, stratified=cfg["stratified"])
        nds = normalize(ds, tr)
        mcfg = _model_config(cfg, ds, seed)
        settings = _settings(cfg, seed)
        progress = (lambda rec: log.info("seed %d %s", seed, rec)) if args.verbose else None
        params, history = train(init_params(mcfg), mcfg, nds.subset(tr), nds.subset(va), settings, progress=progress)
        metric = evaluate(params, mcfg, nds.subset(te), cfg["metric"], threads=cfg["threads"])
        run_dir = out / f"seed{seed}" if cfg["repeats"] > 1 else out
        run_dir.mkdir(parents=True, exist_ok=True)
        extra = {"manifest": man, "split": {"seed": seed, "stratified": cfg["stratified"]}, "normalization": nds.stats.to_dict()}
        save_checkpoint(run_dir / "checkpoint.json", params, mcfg, extra)
        _write_json(run_dir / "history.json", {"manifest": man, "seed": seed, "history": history})
        per_seed.append({"seed": seed, f"test_{cfg['metric']}": metric, "epochs": len(history)})
        print(f"seed {seed}: test {cfg['metric']} {metric:.4f} ({len(history)} epochs)")
    vals = np.asarray([p[f"test_{cfg['metric']}"] for p in per_seed])
    report = {"manifest": man, "runs": per_seed, "mean": float(vals.mean()), "std": float(vals.std())}
    _write_json(out / "report.json", report)
    print(f"test {cfg['metric']}: {vals.mean():.4f} ± {vals.std():.4f} over {len(vals)} run(s)")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, mcfg, extra = load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.data)
    if ds.d != mcfg.in_channels:
        raise DataError(f"dataset has {ds.d} channels, checkpoint expects {mcfg.in_channels}")
    if "normalization" in extra:
        nd = extra["normalization"]
        stats = NormStats(np.asarray(nd["mean"]), np.asarray(nd["std"]), float(nd["time_scale"]))
    else:
        stats = None
    samples = [(stats.apply(ts) if stats else ts, y) for ts, y in ds.samples]
    if args.split == "all":
        subset = samples
    else:
        sp = extra.get("split")
        if sp is None:
            raise UsageError("checkpoint records no split; use --split all")
        tr, va, te = split(ds, seed=sp["seed"], stratified=sp["stratified"])
        subset = [samples[i] for i in {"train": tr, "val": va, "test": te}[args.split]]
    metric = evaluate(params, mcfg, subset, args.metric, threads=args.threads)
    man = manifest("eval", {"checkpoint": args.checkpoint, "data": args.data, "split": args.split, "metric": args.metric, "model": mcfg.to_dict()})
    if args.output:
        _write_json(Path(args.output), {"manifest": man, args.metric: metric, "n": len(subset)})
    print(f"{args.metric} {metric!r}")
    return EXIT_OK


def cmd_inspect_kernels(args) -> int:
    params, mcfg, _ = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = manifest("inspect-kernels", {"checkpoint": args.checkpoint, "data": args.data, "block": args.block, "model": mcfg.to_dict()})
    t, vals = inspection.kernel_curves(params, mcfg, args.block)
    (out / "kernels.csv").write_text(_csv_with_manifest(inspection.curves_csv(t, vals), man), encoding="utf-8")
    for j in range(vals.shape[0]):
        svg = inspection.curve_svg(t, vals[j], f"block {args.block} kernel {j}")
        svg = svg.replace("<title>", f"<desc>{escape(json.dumps(man, sort_keys=True))}</desc>\n<title>", 1)
        (out / f"kernel_{j}.svg").write_text(svg, encoding="utf-8")
    if args.data:
        ds = _load_dataset(args.data)
        _, _, extra = load_checkpoint(args.checkpoint)
        nd = extra.get("normalization")
        series = [ts for ts, _ in ds.samples]
        if nd:
            stats = NormStats(np.asarray(nd["mean"]), np.asarray(nd["std"]), float(nd["time_scale"]))
            series = [stats.apply(ts) for ts in series]
        dist = inspection.kernel_distances(params, mcfg, series, args.block)
        rows = inspection.rank_kernels(dist, ds.labels, ds.n_classes)
        (out / "ranking.csv").write_text(_csv_with_manifest(inspection.ranking_csv(rows), man), encoding="utf-8")
        for c in range(ds.n_classes):
            top = [r for r in rows if r["class"] == c][:3]
            print(f"class {c}: closest kernels " + ", ".join(f"{r['kernel']} ({r['mean_distance']:.4g})" for r in top))
    print(f"wrote {vals.shape[0]} kernel plot(s) to {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    degrees = B.DEFAULT_DEGREES
    if args.degrees:
        try:
            degrees = tuple(int(x) for x in args.degrees.split(","))
        except ValueError:
            raise UsageError("--degrees must be comma-separated integers") from None
    if args.reps < 30:
        raise UsageError("--reps must be at least 30")
    rows = B.run_bench(degrees, args.reps, args.seed)
    cross = B.crossover(rows)
    man = manifest("bench", {"degrees": list(degrees), "reps": args.reps, "seed": args.seed})
    body = B.to_csv(rows) + f"# crossover_degree,{cross if cross is not None else 'none'}\n"
    _emit(_csv_with_manifest(body, man), args.output)
    worst = max(r.rel_error for r in rows if r.algorithm.startswith("mul"))
    print(f"mul_fft beats mul_naive from degree {cross}; worst product disagreement {worst:.2e}", file=sys.stderr)
    if worst > B.AGREEMENT_TOL:
        raise NumericalError(f"product paths disagree by {worst:.2e} > {B.AGREEMENT_TOL}")
    return EXIT_OK


def cmd_synth(args) -> int:
    ds = synth_shapes(args.n_per_class, d=args.d, noise=args.noise, seed=args.seed, missing=args.missing)
    save_jsonl(ds, args.output)
    print(f"wrote {len(ds)} series to {args.output}")
    return EXIT_OK


def cmd_convert(args) -> int:
    ds = csv_to_jsonl(args.input, args.output)
    print(f"wrote {len(ds)} series to {args.output}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    bool_flag = argparse.BooleanOptionalAction
    g.add_argument("--fit", dest="fit_kind", choices=FIT_KINDS)
    g.add_argument("--hidden", type=int)
    g.add_argument("--blocks", type=int)
    g.add_argument("--integration", action=bool_flag, default=None)
    g.add_argument("--kernels", type=int)
    g.add_argument("--grid", type=int)
    g.add_argument("--kernel-order", type=int)
    g.add_argument("--kernel-mode", choices=("multiply", "distance"))
    g.add_argument("--distance-integral", action=bool_flag, default=None)
    g.add_argument("--area-norm", action=bool_flag, default=None)
    g.add_argument("--segments", type=int)
    g.add_argument("--learnable-offsets", action=bool_flag, default=None)
    g.add_argument("--aggregator", choices=("last", "mean", "gru"))
    g.add_argument("--gru-hidden", type=int)
    g.add_argument("--eps", type=float)
    g.add_argument("--momentum", type=float)
    t = p.add_argument_group("training")
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--metric", choices=("accuracy", "auroc"))
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--dropout", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--repeats", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--stratified", action=bool_flag, default=None)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splinenet", description="Spline networks for irregular time series.")
    p.add_argument("--version", action="version", version=f"splinenet {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("impute", help="fit each series and evaluate it at query times")
    s.add_argument("input")
    s.add_argument("--fit", choices=FIT_KINDS, default="natural_cubic")
    s.add_argument("--times", help="comma-separated query times (default: each series' own time stamps)")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_impute)

    s = sub.add_parser("train", help="train and test on a 60/20/20 split")
    s.add_argument("data")
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="JSON object overriding defaults; flags override the file")
    _model_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("data")
    s.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    s.add_argument("--metric", choices=("accuracy", "auroc"), default="accuracy")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect-kernels", help="plot learned kernels and rank them by distance per class")
    s.add_argument("checkpoint")
    s.add_argument("--data")
    s.add_argument("--block", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_inspect_kernels)

    s = sub.add_parser("bench", help="time polynomial products and Taylor shifts")
    s.add_argument("--degrees")
    s.add_argument("--reps", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("synth", help="write the synthetic shape dataset as JSONL")
    s.add_argument("output")
    s.add_argument("--n-per-class", type=int, default=200)
    s.add_argument("--d", type=int, default=1)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--missing", type=float, default=0.3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("convert", help="long-format CSV to JSONL")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"splinenet: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as e:
        print(f"splinenet: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"splinenet: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"splinenet: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

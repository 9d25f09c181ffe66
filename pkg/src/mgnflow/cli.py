"""Command-line entry point: gen-data, train, rollout-eval, compare, export-mesh.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import io, plotting
from .config import RunConfig, load_config, to_dict
from .dataset import generate, split_seeds
from .errors import (DegenerateGeometry, DegenerateStats, FactorizationError, IllPosedProblem,
                     IncompatibleArtifacts, InvalidArgument, InvalidConfig, MeshingError,
                     NumericalBlowup)
from .evaluation import compare, evaluate, summarize
from .graph import edge_width, node_width
from .model import ModelConfig
from .training import train

log = logging.getLogger("mgnflow")

CONFIG_ERRORS = (InvalidConfig, InvalidArgument, IncompatibleArtifacts, DegenerateStats,
                 FileNotFoundError)
NUMERIC_ERRORS = (NumericalBlowup, IllPosedProblem, FactorizationError, MeshingError,
                  DegenerateGeometry)

def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise InvalidConfig(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        if isinstance(value, str):
            # YAML 1.1 reads "1e-4" as a string
            try:
                value = float(value)
            except ValueError:
                pass
        out[key] = value
    return out


def _config(args) -> RunConfig:
    overrides = _parse_set(getattr(args, "set", None))
    for flag, key in (("seed", "seed"), ("features", "features"), ("variant", "model.variant"),
                      ("variable", "variable"), ("epochs", "train.epochs")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def _out(args, cfg: RunConfig) -> Path:
    path = Path(args.out or cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_split(data_dir: Path, split: str, cfg: RunConfig, variable: str):
    reals, meta = io.read_archive(data_dir / f"{split}.mgnl")
    samples = [r.graph(meta["features"], variable, cfg.fluid) for r in reals]
    return samples, meta


# ------------------------------------------------------------------ commands

def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    meta = {"config_hash": io.config_hash(cfg.data_identity()), "features": cfg.features,
            "seed": cfg.seed, "n_E": edge_width(cfg.features), "n_N": node_width(cfg.features),
            "n_T": cfg.schedule.n_steps, "config": cfg.to_dict()}
    manifest = dict(meta, splits={})
    for split, count in (("train", cfg.data.n_train), ("test", cfg.data.n_test)):
        reals, failed = generate(split_seeds(cfg.seed, split, count), cfg.scenario)
        digest = io.write_archive(out / f"{split}.mgnl", reals, dict(meta, split=split))
        manifest["splits"][split] = {
            "file": f"{split}.mgnl", "sha256": digest, "count": len(reals),
            "seeds": [r.seed for r in reals], "failed": {str(k): v for k, v in failed.items()},
            "n_cells": [r.mesh.n_cells for r in reals]}
        log.info("%s: %d realizations (%d failed)", split, len(reals), len(failed))
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {out / 'train.mgnl'}, {out / 'test.mgnl'}, {out / 'manifest.json'}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    data = Path(args.data)
    _, meta = io.read_archive(data / "train.mgnl")
    if args.features is not None and cfg.features != meta["features"]:
        raise IncompatibleArtifacts(f"dataset was generated with features {meta['features']!r}, "
                                    f"not {cfg.features!r}")
    samples, meta = _load_split(data, "train", cfg, cfg.variable)
    out = _out(args, cfg)
    m = cfg.model
    model_cfg = ModelConfig.for_features(meta["features"], latent=m.latent, layers=m.layers,
                                         cheb_order=m.cheb_order, variant=m.variant)
    tcfg = replace(cfg.train, seed=cfg.seed)
    result = train(samples, model_cfg, tcfg, on_epoch=lambda e: log.info(
        "epoch %d lr %.3g train %.6g val %s", e.epoch, e.lr, e.train_loss, e.val_loss))
    name = args.name or m.variant
    ckpt_meta = {"config_hash": meta["config_hash"], "features": meta["features"],
                 "variable": cfg.variable, "variant": m.variant, "train": to_dict(tcfg),
                 "noise_std": result.noise_std, "best_epoch": result.best_epoch,
                 "train_ids": result.train_ids, "val_ids": result.val_ids}
    io.save_checkpoint(out / f"{name}.mgnw", result.params, result.stats, ckpt_meta)
    with open(out / f"{name}_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "val_loss"])
        for h in result.history:
            w.writerow([h.epoch, repr(h.lr), repr(h.train_loss),
                        "" if h.val_loss is None else repr(h.val_loss)])
    plotting.loss_curve(result.history, out / f"{name}_loss.png", title=name)
    _write_json(out / f"{name}_train.json", {k: v for k, v in ckpt_meta.items()})
    if m.variant == "mgn":
        print(f"noise std {result.noise_std:.6g}")
    print(f"wrote {out / (name + '.mgnw')}")
    return 0


def _load_for_eval(ckpt_path, data: Path, cfg: RunConfig, split: str):
    params, stats, ckpt_meta = io.load_checkpoint(ckpt_path)
    _, data_meta = io.read_archive(data / f"{split}.mgnl")
    io.check_compatible(ckpt_meta, data_meta)
    samples, _ = _load_split(data, split, cfg, ckpt_meta["variable"])
    return params, stats, ckpt_meta, samples


def cmd_rollout_eval(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    params, stats, meta, samples = _load_for_eval(args.checkpoint, Path(args.data), cfg, args.split)
    steps = args.steps or max(cfg.eval.horizons)
    horizons = sorted({h for h in cfg.eval.horizons if h <= steps} | {steps})
    scores, results = evaluate(params, stats, samples, horizons, cfg.eval.p_init)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "variable", "n_T", "delta"])
        for s in scores:
            w.writerow([s.sample_id, s.variable, s.horizon, repr(s.delta)])
    rows = summarize(scores, meta["variant"])
    _write_json(out / "summary.json", {"variant": meta["variant"], "variable": meta["variable"],
                                       "summary": rows})
    if cfg.eval.export:
        reals, _ = io.read_archive(Path(args.data) / f"{args.split}.mgnl")
        fields = out / "fields"
        fields.mkdir(exist_ok=True)
        for real, res in zip(reals, results):
            io.write_rollout_csv(fields / f"{res.sample_id}.csv", res)
            for n in range(res.n_T):
                io.write_vtk(fields / f"{res.sample_id}_step{n + 1:02d}.vtk", real.mesh,
                             {"truth": res.truth[n], "prediction": res.predicted[n],
                              "abs_error": res.error[n]}, title=f"{res.sample_id} step {n + 1}")
    plotting.error_boxplot({meta["variant"]: {h: [s.delta for s in scores if s.horizon == h]
                                              for h in horizons}},
                           out / "errors_boxplot.png", ylabel=f"delta {meta['variable']}")
    for r in rows:
        print(f"{r['variant']} horizon {r['horizon']}: median {r['median']:.6g}")
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    data = Path(args.data)
    p1, s1, m1, samples = _load_for_eval(args.lstm, data, cfg, args.split)
    p2, s2, m2, _ = _load_for_eval(args.mgn, data, cfg, args.split)
    if m1["variable"] != m2["variable"]:
        raise IncompatibleArtifacts("checkpoints predict different variables")
    report = compare((p1, s1), (p2, s2), samples, cfg.eval.horizons, cfg.eval.p_init)
    keys = ["variant", "horizon", "min", "q1", "median", "q3", "max"]
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in report["rows"]:
            w.writerow(r)
    _write_json(out / "compare.json", {"rows": report["rows"], "horizon": report["horizon"],
                                       "lstm_not_worse": report["lstm_not_worse"]})
    groups = {name: {h: [s.delta for s in sc if s.horizon == h] for h in cfg.eval.horizons}
              for name, sc in report["scores"].items()}
    plotting.error_boxplot(groups, out / "compare_boxplot.png", ylabel=f"delta {m1['variable']}")
    for r in report["rows"]:
        print(",".join(str(r[k]) for k in keys))
    print(f"median(mgn_lstm) <= median(mgn) at {report['horizon']} steps: "
          f"{report['lstm_not_worse']}")
    return 0


def cmd_export_mesh(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    reals, _ = io.read_archive(Path(args.data) / f"{args.split}.mgnl")
    if not 0 <= args.sample < len(reals):
        raise InvalidConfig(f"sample index {args.sample} outside 0..{len(reals) - 1}")
    r = reals[args.sample]
    stem = out / f"{args.split}_{args.sample}"
    io.write_mesh_text(stem.with_suffix(".mesh"), r.mesh)
    io.write_vtk(stem.with_suffix(".vtk"), r.mesh,
                 {"perm_md": r.geomodel.perm_md, "cell_type": r.geomodel.cell_type.argmax(axis=1)})
    io.write_snapshots_csv(out / f"{args.split}_{args.sample}_snapshots.csv", r.simulation)
    print(f"wrote {stem}.mesh, {stem}.vtk")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgnflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON or YAML run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default: config 'out')")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. train.epochs=50")

    p = sub.add_parser("gen-data", help="simulate train/test realizations")
    common(p)
    p.add_argument("--features", choices=["baseline", "trans", "relperm", "both"])
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a surrogate on a dataset")
    common(p)
    p.add_argument("--data", required=True, help="directory written by gen-data")
    p.add_argument("--variant", choices=["mgn_lstm", "mgn"])
    p.add_argument("--features", choices=["baseline", "trans", "relperm", "both"])
    p.add_argument("--variable", choices=["s_g", "p_g"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--name", help="checkpoint file stem (default: the variant)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout-eval", help="roll a checkpoint out on a split and score it")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_rollout_eval)

    p = sub.add_parser("compare", help="ensemble summaries of MGN-LSTM against MGN")
    common(p)
    p.add_argument("--lstm", required=True, help="MGN-LSTM checkpoint")
    p.add_argument("--mgn", required=True, help="MGN checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export-mesh", help="write one mesh as text, VTK and snapshot CSV")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--sample", type=int, default=0)
    p.set_defaults(func=cmd_export_mesh)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

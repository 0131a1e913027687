"""Command-line surface: gen-data, train, probe, robustness, lipschitz.

Config files are strict JSON documents with sections {data, train, eval,
lipschitz, out_dir}; unknown keys anywhere are an error naming the bad
path.  Flags override file values.  Every command writes the fully
resolved config (defaults filled, sorted keys, no timestamps) next to
its outputs, and is reproducible from that artifact alone.

Exit codes: 0 success, 2 config error, 3 training collapse, 4 numeric
failure.
"""

# CEBMV_THREADS must take effect before numpy first loads its BLAS.
import os

_threads = os.environ.get("CEBMV_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import dataclasses
import json
import pathlib
import sys

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .data import (AugmentConfig, GeneratorConfig, generate_dataset, read_dataset,
                   write_dataset)
from .encoders import StackConfig
from .evaluation import (fit_linear_probe, extract_features, evaluate_probe,
                         label_fraction_indices, linear_probe, robustness_rows,
                         write_robustness_csv)
from .lipschitz import (compare_reports, family_stats, smoothness_records,
                        write_smoothness_outputs)
from .losses import LossConfig
from .training import CollapseError, TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COLLAPSE = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


def _build(dc_type, payload: dict, path: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: expected an object, got {type(payload).__name__}")
    names = {f.name for f in dataclasses.fields(dc_type)}
    unknown = sorted(set(payload) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    try:
        return dc_type(**payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_EVAL_DEFAULTS = {"label_fraction": 1.0, "ridge_grid": [1e-6, 1e-4, 1e-2],
                  "iters": 500, "base_lr": 0.5, "val_fraction": 0.1, "seed": 0,
                  "shift_seed": 0}
_LIPSCHITZ_DEFAULTS = {"kappa": None, "n_pairs": 2000, "magnitude": 0.25, "seed": 0}
_SECTIONS = ("data", "train", "eval", "lipschitz", "out_dir")


def _merge_defaults(section: dict, defaults: dict, path: str) -> dict:
    unknown = sorted(set(section) - set(defaults))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    return {**defaults, **section}


def load_config(path) -> dict:
    try:
        text = pathlib.Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: "
                          f"{exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {unknown}")
    return doc


def resolve(doc: dict, args) -> dict:
    """Apply flag overrides and fill defaults; returns plain dicts."""
    data = dict(doc.get("data", {}))
    train_sec = dict(doc.get("train", {}))
    eval_sec = dict(doc.get("eval", {}))
    lip_sec = dict(doc.get("lipschitz", {}))

    loss = dict(train_sec.pop("loss", {}))
    stack = dict(train_sec.pop("stack", {}))
    augment = dict(train_sec.pop("augment", {}))

    if getattr(args, "variant", None):
        loss["variant"] = args.variant
        stack["variant"] = args.variant
    if getattr(args, "beta", None) is not None:
        loss["beta"] = args.beta
    if getattr(args, "seed", None) is not None:
        # run seed; the dataset keeps a config-pinned seed so paired runs
        # can share data
        data.setdefault("seed", args.seed)
        train_sec["seed"] = args.seed
        eval_sec["seed"] = args.seed
        lip_sec["seed"] = args.seed
    if getattr(args, "label_fraction", None) is not None:
        eval_sec["label_fraction"] = args.label_fraction

    gen_cfg = _build(GeneratorConfig, data, "data")
    variant = loss.get("variant", stack.get("variant", "simclr"))
    loss_cfg = _build(LossConfig,
                      {**dataclasses.asdict(LossConfig.defaults(variant)), **loss},
                      "train.loss")
    stack_cfg = _build(StackConfig, {"variant": variant,
                                     "input_dim": gen_cfg.total_dim, **stack},
                       "train.stack")
    augment_cfg = _build(AugmentConfig, augment, "train.augment")
    train_cfg = _build(TrainConfig, {"loss": loss_cfg, "stack": stack_cfg,
                                     "augment": augment_cfg, **train_sec}, "train")
    eval_cfg = _merge_defaults(eval_sec, _EVAL_DEFAULTS, "eval")
    lip_cfg = _merge_defaults(lip_sec, _LIPSCHITZ_DEFAULTS, "lipschitz")

    out_dir = getattr(args, "out", None) or doc.get("out_dir")
    return {"gen": gen_cfg, "train": train_cfg, "eval": eval_cfg,
            "lipschitz": lip_cfg, "out_dir": out_dir}


def resolved_document(resolved: dict) -> dict:
    train_cfg = resolved["train"]
    doc = dataclasses.asdict(train_cfg)
    return {"data": dataclasses.asdict(resolved["gen"]),
            "train": doc,
            "eval": dict(resolved["eval"]),
            "lipschitz": dict(resolved["lipschitz"]),
            "out_dir": str(resolved["out_dir"]) if resolved["out_dir"] else None}


def _write_resolved(out_dir, resolved: dict) -> None:
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(resolved_document(resolved), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require_out(resolved, cmd):
    if not resolved["out_dir"]:
        raise ConfigError(f"{cmd}: an output directory is required (--out or out_dir)")
    return pathlib.Path(resolved["out_dir"])


def _load_dataset(resolved, args):
    data_dir = getattr(args, "data", None)
    if data_dir:
        return read_dataset(data_dir)
    return generate_dataset(resolved["gen"])


def cmd_gen_data(args) -> int:
    resolved = resolve(load_config(args.config) if args.config else {}, args)
    out_dir = _require_out(resolved, "gen-data")
    dataset = generate_dataset(resolved["gen"])
    write_dataset(dataset, out_dir, force=args.force)
    _write_resolved(out_dir, resolved)
    print(f"wrote {dataset.x_train.shape[0]} train / {dataset.x_test.shape[0]} test "
          f"records to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    resolved = resolve(load_config(args.config) if args.config else {}, args)
    out_dir = _require_out(resolved, "train")
    dataset = _load_dataset(resolved, args)
    _write_resolved(out_dir, resolved)
    meta_doc = {k: v for k, v in resolved_document(resolved).items() if k != "out_dir"}
    result = train(resolved["train"], dataset, out_dir=out_dir,
                   checkpoint_meta={"resolved_config": meta_doc})
    last = result.metrics[-1] if result.metrics else {}
    print(f"trained {resolved['train'].loss.variant} for {resolved['train'].epochs} "
          f"epochs; final loss {last.get('loss', float('nan')):.4f}; "
          f"checkpoint {result.checkpoint_path}")
    return EXIT_OK


def _load_stack(path):
    stack, meta = ckpt.load_stack(path)
    return stack, meta


def cmd_probe(args) -> int:
    resolved = resolve(load_config(args.config) if args.config else {}, args)
    out_dir = _require_out(resolved, "probe")
    stack, _ = _load_stack(args.ckpt)
    dataset = _load_dataset(resolved, args)
    ev = resolved["eval"]
    result, _ = linear_probe(stack, dataset, label_fraction=ev["label_fraction"],
                             seed=ev["seed"], ridge_grid=tuple(ev["ridge_grid"]),
                             iters=ev["iters"], base_lr=ev["base_lr"],
                             val_fraction=ev["val_fraction"])
    _write_resolved(out_dir, resolved)
    payload = {"top1": result.top1, "brier": result.brier, "n_fit": result.n_fit,
               "ridge": result.ridge, "label_fraction": ev["label_fraction"],
               "checkpoint": str(args.ckpt)}
    with open(out_dir / "probe.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"probe top1={result.top1:.4f} brier={result.brier:.4f} "
          f"(fraction {ev['label_fraction']}, n_fit {result.n_fit})")
    return EXIT_OK


def cmd_robustness(args) -> int:
    resolved = resolve(load_config(args.config) if args.config else {}, args)
    out_dir = _require_out(resolved, "robustness")
    stack, _ = _load_stack(args.ckpt)
    dataset = _load_dataset(resolved, args)
    ev = resolved["eval"]
    idx = label_fraction_indices(dataset.y_train, ev["label_fraction"], ev["seed"])
    feats = extract_features(stack, dataset.x_train[idx])
    model = fit_linear_probe(feats, dataset.y_train[idx], dataset.cfg.n_classes,
                             ridge_grid=tuple(ev["ridge_grid"]), iters=ev["iters"],
                             base_lr=ev["base_lr"], val_fraction=ev["val_fraction"],
                             seed=ev["seed"])
    rows = robustness_rows(stack, model, dataset, rng_seed=ev["shift_seed"])
    _write_resolved(out_dir, resolved)
    write_robustness_csv(out_dir / "robustness.csv", rows)
    print(f"robustness: clean top1={rows[0]['top1']:.4f}; "
          f"{len(rows) - 1} shifted cells -> {out_dir / 'robustness.csv'}")
    return EXIT_OK


def cmd_lipschitz(args) -> int:
    resolved = resolve(load_config(args.config) if args.config else {}, args)
    out_dir = _require_out(resolved, "lipschitz")
    dataset = _load_dataset(resolved, args)
    lip = resolved["lipschitz"]
    if len(args.ckpt) > 2:
        raise ConfigError("lipschitz: give one checkpoint, or two for a comparison")
    reports = []
    first_records = None
    for path in args.ckpt:
        stack, _ = _load_stack(path)
        kappa = lip["kappa"] if lip["kappa"] is not None else stack_default_kappa(stack)
        records = smoothness_records(stack, dataset, kappa=kappa,
                                     n_pairs=lip["n_pairs"],
                                     magnitude=lip["magnitude"], seed=lip["seed"])
        if first_records is None:
            first_records = records
        reports.append((str(path), {family: family_stats(recs, lip["n_pairs"])
                                    for family, recs in records.items()}))
    _write_resolved(out_dir, resolved)
    write_smoothness_outputs(out_dir, reports[0][1], records=first_records,
                             meta={"checkpoint": reports[0][0],
                                   **{k: v for k, v in lip.items() if v is not None}})
    payload = {"reports": [{"checkpoint": name, "families": rep}
                           for name, rep in reports]}
    if len(reports) == 2:
        payload["first_smoother_than_second"] = compare_reports(reports[0][1],
                                                                reports[1][1])
        wins = sum(payload["first_smoother_than_second"].values())
        total = len(payload["first_smoother_than_second"])
        print(f"paired comparison: first checkpoint smoother in {wins}/{total} families")
    else:
        print(f"smoothness report for {reports[0][0]} -> {out_dir / 'smoothness.csv'}")
    with open(out_dir / "lipschitz_summary.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def stack_default_kappa(stack) -> float:
    """Concentration used for sensitivity scoring when none is configured."""
    return float(LossConfig.defaults(stack.cfg.variant).kappa_e)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cebmv",
                                     description="compressed multiview SSL pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, ckpt=0, data=True):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int,
                       help="run seed (training/eval/analysis; the data seed only "
                            "when the config does not pin one)")
        if data:
            p.add_argument("--data", help="directory from gen-data (else data is "
                                          "regenerated from the config)")
        if ckpt == 1:
            p.add_argument("--ckpt", required=True, help="checkpoint path")
        elif ckpt == 2:
            p.add_argument("--ckpt", required=True, nargs="+",
                           help="one checkpoint, or two for a paired comparison")

    p = sub.add_parser("gen-data", help="write a dataset directory")
    common(p, data=False)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one encoder stack")
    common(p)
    p.add_argument("--variant", choices=("simclr", "c_simclr", "byol", "c_byol"))
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe", help="linear probe a checkpoint")
    common(p, ckpt=1)
    p.add_argument("--label-fraction", type=float, dest="label_fraction")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("robustness", help="probe accuracy under shift suites")
    common(p, ckpt=1)
    p.add_argument("--label-fraction", type=float, dest="label_fraction")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("lipschitz", help="local-sensitivity report(s)")
    common(p, ckpt=2)
    p.set_defaults(func=cmd_lipschitz)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CollapseError as exc:
        print(f"collapse: {exc.record}", file=sys.stderr)
        return EXIT_COLLAPSE
    except ad.NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RuntimeError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, FileExistsError, IsADirectoryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

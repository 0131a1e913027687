"""Ablation sweeps over the loss/augmentation dials, with paired seeds.

A sweep varies exactly one axis (beta, area_lower_bound, kappa_e, or
kappa_b) and trains every (value, seed) cell on the same dataset with
the same seed list, so comparisons along the axis are paired.

Each cell runs in its own directory with a persisted run_config.json,
checkpoint, metrics, and a row.json holding the probe outcome, so any
row can be reproduced in isolation and cells are safe to run as
independent processes.  Aggregation is a pure reduce over the row files:
it can be re-run after a partial sweep and reflects exactly the rows
that finished.  A collapsed cell is a recorded outcome (empty metrics in
the CSV), not a sweep failure; any other exception propagates, leaving
the completed row files on disk.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import pathlib
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .evaluation import linear_probe
from .training import CollapseError, TrainConfig, train

SWEEP_AXES = ("beta", "area_lower_bound", "kappa_e", "kappa_b")


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    base: TrainConfig
    n_seeds: int = 3
    label_fraction: float = 1.0

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        if not self.values:
            raise ValueError("values must be non-empty")
        if self.n_seeds < 3:
            raise ValueError("trend claims need n_seeds >= 3")

    @property
    def seeds(self) -> tuple:
        return tuple(range(1, self.n_seeds + 1))


def apply_axis(cfg: TrainConfig, axis: str, value) -> TrainConfig:
    """Base config with one swept dial replaced."""
    if axis in ("beta", "kappa_e", "kappa_b"):
        return dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss,
                                                                 **{axis: value}))
    if axis == "area_lower_bound":
        return dataclasses.replace(cfg, augment=dataclasses.replace(
            cfg.augment, area_lower_bound=value))
    raise ValueError(f"unknown axis {axis!r}")


def cell_dir_name(axis: str, value, seed: int) -> str:
    return f"{axis}_{value:g}_seed{seed}"


def run_cell(spec: SweepSpec, value, seed: int, dataset: Dataset, cell_dir) -> dict:
    """Train + probe one (value, seed) cell; persists config and row file."""
    cell_dir = pathlib.Path(cell_dir)
    cell_dir.mkdir(parents=True, exist_ok=True)
    cfg = dataclasses.replace(apply_axis(spec.base, spec.axis, value), seed=seed)
    run_config = {"axis": spec.axis, "axis_value": value, "seed": seed,
                  "label_fraction": spec.label_fraction,
                  "train": dataclasses.asdict(cfg),
                  "generator": dataclasses.asdict(dataset.cfg)}
    (cell_dir / "run_config.json").write_text(
        json.dumps(run_config, indent=2, sort_keys=True) + "\n")
    row = {"axis_value": value, "seed": seed, "top1": None, "brier": None,
           "collapsed": False}
    try:
        result = train(cfg, dataset, out_dir=cell_dir)
        probe, _ = linear_probe(result.stack, dataset,
                                label_fraction=spec.label_fraction, seed=0)
        row["top1"] = probe.top1
        row["brier"] = probe.brier
    except CollapseError:
        row["collapsed"] = True
    (cell_dir / "row.json").write_text(json.dumps(row, sort_keys=True) + "\n")
    return row


def collect_rows(out_dir) -> list[dict]:
    """Pure reduce over persisted row files, in (value, seed) file order."""
    rows = []
    for path in sorted(pathlib.Path(out_dir).glob("*/row.json")):
        rows.append(json.loads(path.read_text()))
    rows.sort(key=lambda r: (r["axis_value"], r["seed"]))
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis_value", "seed", "top1", "brier"])
        for r in rows:
            top1 = "" if r["top1"] is None else f"{r['top1']:.6f}"
            brier = "" if r["brier"] is None else f"{r['brier']:.6f}"
            writer.writerow([f"{r['axis_value']:g}", r["seed"], top1, brier])


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for r in csv.DictReader(fh):
            rows.append({"axis_value": float(r["axis_value"]), "seed": int(r["seed"]),
                         "top1": float(r["top1"]) if r["top1"] else None,
                         "brier": float(r["brier"]) if r["brier"] else None,
                         "collapsed": r["top1"] == ""})
        return rows


def sweep_summary(values, rows: list[dict]) -> list[dict]:
    """Per-value mean/std over finished seeds plus a collapse count."""
    out = []
    for value in values:
        cells = [r for r in rows if r["axis_value"] == value]
        ok = [r for r in cells if not r["collapsed"]]
        top1 = np.array([r["top1"] for r in ok], dtype=np.float64)
        brier = np.array([r["brier"] for r in ok], dtype=np.float64)
        out.append({
            "axis_value": value,
            "n": len(cells),
            "collapsed": sum(r["collapsed"] for r in cells),
            "top1_mean": float(top1.mean()) if ok else float("nan"),
            "top1_std": float(top1.std(ddof=1)) if len(ok) > 1 else 0.0,
            "brier_mean": float(brier.mean()) if ok else float("nan"),
            "brier_std": float(brier.std(ddof=1)) if len(ok) > 1 else 0.0,
        })
    return out


def summary_markdown(axis: str, summary: list[dict], caption: str = "") -> str:
    lines = []
    if caption:
        lines += [f"# {caption}", ""]
    lines += [f"| {axis} | top1 (mean ± std) | brier (mean ± std) | collapsed |",
              "|---|---|---|---|"]
    for s in summary:
        if np.isnan(s["top1_mean"]):
            top1, brier = "collapse", "-"
        else:
            top1 = f"{s['top1_mean']:.4f} ± {s['top1_std']:.4f}"
            brier = f"{s['brier_mean']:.4f} ± {s['brier_std']:.4f}"
        lines.append(f"| {s['axis_value']:g} | {top1} | {brier} "
                     f"| {s['collapsed']}/{s['n']} |")
    return "\n".join(lines) + "\n"


def aggregate(spec: SweepSpec, out_dir) -> list[dict]:
    """Reduce row files under out_dir into sweep.csv + summary.md."""
    out_dir = pathlib.Path(out_dir)
    rows = collect_rows(out_dir)
    write_sweep_csv(rows, out_dir / "sweep.csv")
    caption = (f"Sweep over {spec.axis} ({spec.base.loss.variant}, "
               f"seeds {list(spec.seeds)}, label fraction {spec.label_fraction})")
    summary = sweep_summary(spec.values, rows)
    (out_dir / "summary.md").write_text(summary_markdown(spec.axis, summary, caption))
    return rows


def run_sweep(spec: SweepSpec, dataset: Dataset, out_dir) -> list[dict]:
    """Run every (value, seed) cell, re-aggregating after each one."""
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep_spec.json").write_text(json.dumps(
        {"axis": spec.axis, "values": list(spec.values), "n_seeds": spec.n_seeds,
         "label_fraction": spec.label_fraction,
         "base": dataclasses.asdict(spec.base)}, indent=2, sort_keys=True) + "\n")
    for value in spec.values:
        for seed in spec.seeds:
            run_cell(spec, value, seed, dataset,
                     out_dir / cell_dir_name(spec.axis, value, seed))
            aggregate(spec, out_dir)
    return collect_rows(out_dir)


def paired_mean_gap(rows: list[dict], value_a, value_b) -> float:
    """Mean over seeds of top1(a) − top1(b), using seeds where both finished."""
    by = {(r["axis_value"], r["seed"]): r for r in rows}
    gaps = []
    for (value, seed), row in by.items():
        if value != value_a:
            continue
        other = by.get((value_b, seed))
        if other is None or row["collapsed"] or other["collapsed"]:
            continue
        gaps.append(row["top1"] - other["top1"])
    if not gaps:
        raise ValueError(f"no complete seed pairs for {value_a} vs {value_b}")
    return float(np.mean(gaps))

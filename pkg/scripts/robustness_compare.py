"""Compressed-vs-plain robustness comparison across the shift suites.

Trains the plain and compressed flavor of a family (simclr/c_simclr or
byol/c_byol) on the same data over paired seeds, evaluates the linear
probe under every shift family x severity, and reports per-family means
at the chosen severity plus per-seed win counts for the compressed side.
"""

import argparse
import dataclasses
import json
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from cebmv.data import SHIFT_FAMILIES, GeneratorConfig, generate_dataset
from cebmv.evaluation import linear_probe, robustness_rows, write_robustness_csv
from cebmv.training import train
from sweep_common import desk_train_config

PAIRS = {"simclr": ("simclr", "c_simclr"), "byol": ("byol", "c_byol")}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--pair", default="simclr", choices=sorted(PAIRS))
    ap.add_argument("--beta", type=float, default=1.0)
    ap.add_argument("--n-seeds", type=int, default=5)
    ap.add_argument("--severity", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--n-train", type=int, default=None)
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen = GeneratorConfig() if args.n_train is None else \
        GeneratorConfig(n_train=args.n_train)
    dataset = generate_dataset(gen)
    plain, compressed = PAIRS[args.pair]
    seeds = list(range(1, args.n_seeds + 1))

    cells = {}  # (variant, seed) -> {family: top1 at chosen severity}
    for variant in (plain, compressed):
        for seed in seeds:
            cfg = desk_train_config(variant, seed=seed)
            if args.epochs is not None:
                cfg = dataclasses.replace(cfg, epochs=args.epochs)
            if variant == compressed:
                cfg = dataclasses.replace(
                    cfg, loss=dataclasses.replace(cfg.loss, beta=args.beta))
            result = train(cfg, dataset, out_dir=out / f"{variant}_seed{seed}")
            _, model = linear_probe(result.stack, dataset)
            rows = robustness_rows(result.stack, model, dataset)
            write_robustness_csv(rows, out / f"{variant}_seed{seed}" / "robustness.csv")
            cells[variant, seed] = {r["family"]: r["top1"] for r in rows
                                    if r["severity"] == args.severity}

    comparison = {}
    for family in SHIFT_FAMILIES:
        plain_vals = [cells[plain, s][family] for s in seeds]
        comp_vals = [cells[compressed, s][family] for s in seeds]
        comparison[family] = {
            "plain_mean": float(np.mean(plain_vals)),
            "compressed_mean": float(np.mean(comp_vals)),
            "compressed_wins": int(sum(c >= p for c, p in zip(comp_vals, plain_vals))),
            "n_seeds": len(seeds),
        }
    (out / "comparison.json").write_text(json.dumps(
        {"pair": args.pair, "beta": args.beta, "severity": args.severity,
         "families": comparison}, indent=2, sort_keys=True) + "\n")

    lines = [f"| family | {plain} | {compressed} (beta={args.beta:g}) | wins |",
             "|---|---|---|---|"]
    n_better = 0
    for family, c in comparison.items():
        better = c["compressed_mean"] >= c["plain_mean"]
        n_better += better
        lines.append(f"| {family} | {c['plain_mean']:.4f} | "
                     f"{c['compressed_mean']:.4f} | {c['compressed_wins']}/{c['n_seeds']} |")
    lines.append("")
    lines.append(f"compressed mean >= plain on {n_better}/{len(comparison)} families "
                 f"at severity {args.severity}")
    (out / "comparison.md").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


if __name__ == "__main__":
    main()

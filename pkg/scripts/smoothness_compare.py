"""Local-smoothness comparison between two encoder checkpoints.

Shares the identical perturbation pairs across both checkpoints and
reports, per perturbation family, the mean local sensitivity
estimate, plus the fraction of families where the first checkpoint is
smoother (lower bound) than the second.
"""

import argparse
import json
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from cebmv import checkpoint as ckpt
from cebmv.data import GeneratorConfig, generate_dataset
from cebmv.lipschitz import (PERTURBATION_FAMILIES, compare_reports,
                             family_stats, smoothness_records,
                             write_smoothness_outputs)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--ckpt", nargs=2, required=True, metavar=("FIRST", "SECOND"))
    ap.add_argument("--kappa", type=float, default=10.0)
    ap.add_argument("--n-pairs", type=int, default=2000)
    ap.add_argument("--magnitude", type=float, default=0.25)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-test", type=int, default=None)
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen = GeneratorConfig() if args.n_test is None else \
        GeneratorConfig(n_test=args.n_test)
    dataset = generate_dataset(gen)

    reports = []
    for tag, path in zip(("first", "second"), args.ckpt):
        stack, _ = ckpt.load_stack(path)
        records = smoothness_records(stack, dataset, kappa=args.kappa,
                                     n_pairs=args.n_pairs,
                                     magnitude=args.magnitude, seed=args.seed)
        report = {family: family_stats(recs, args.n_pairs)
                  for family, recs in records.items()}
        write_smoothness_outputs(out / tag, report, records=records,
                                 meta={"checkpoint": str(path), "kappa": args.kappa})
        reports.append(report)

    wins = compare_reports(reports[0], reports[1])
    summary = {"first": args.ckpt[0], "second": args.ckpt[1],
               "first_smoother_per_family": wins,
               "fraction_first_smoother": sum(wins.values()) / len(wins)}
    (out / "comparison.json").write_text(json.dumps(summary, indent=2,
                                                    sort_keys=True) + "\n")
    for family in PERTURBATION_FAMILIES:
        a = reports[0][family]["mean"]
        b = reports[1][family]["mean"]
        print(f"{family:18s} first={a:10.4f} second={b:10.4f} "
              f"{'first smoother' if wins[family] else ''}")
    print(f"first smoother on {sum(wins.values())}/{len(wins)} families")


if __name__ == "__main__":
    main()

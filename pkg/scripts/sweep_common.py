"""Shared plumbing for the sweep scripts: default desk task + arg parsing."""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from cebmv.data import GeneratorConfig, generate_dataset  # noqa: E402
from cebmv.encoders import StackConfig  # noqa: E402
from cebmv.experiments import SweepSpec, run_sweep  # noqa: E402
from cebmv.losses import LossConfig  # noqa: E402
from cebmv.training import TrainConfig  # noqa: E402


def desk_train_config(variant: str, **overrides) -> TrainConfig:
    """Default training recipe on the default synthetic task."""
    gen = GeneratorConfig()
    return TrainConfig(loss=LossConfig.defaults(variant),
                       stack=StackConfig(variant=variant, input_dim=gen.total_dim),
                       **overrides)


def sweep_parser(axis: str, default_values: list[float]) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=f"Paired-seed sweep over {axis}.")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--values", type=float, nargs="+", default=default_values)
    ap.add_argument("--n-seeds", type=int, default=3)
    ap.add_argument("--variant", default="c_simclr",
                    choices=["simclr", "c_simclr", "byol", "c_byol"])
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--n-train", type=int, default=None,
                    help="override training-split size (smaller = faster)")
    ap.add_argument("--label-fraction", type=float, default=1.0)
    return ap


def run_axis_sweep(axis: str, default_values: list[float]) -> None:
    args = sweep_parser(axis, default_values).parse_args()
    gen = GeneratorConfig() if args.n_train is None else \
        GeneratorConfig(n_train=args.n_train)
    dataset = generate_dataset(gen)
    overrides = {} if args.epochs is None else {"epochs": args.epochs}
    spec = SweepSpec(axis=axis, values=tuple(args.values),
                     base=desk_train_config(args.variant, **overrides),
                     n_seeds=args.n_seeds, label_fraction=args.label_fraction)
    run_sweep(spec, dataset, args.out)
    print((pathlib.Path(args.out) / "summary.md").read_text())

"""Screen a candidate synthetic-task config for the ablation trends.

Trains simclr + c_simclr at beta in {0, 1, 2} over paired seeds, probes
at full and 10% labels, and prints per-beta means so candidate task
configs can be compared quickly before committing to defaults.
"""

import argparse
import json
import time
from dataclasses import replace

import numpy as np

from cebmv.data import AugmentConfig, GeneratorConfig, generate_dataset
from cebmv.encoders import StackConfig
from cebmv.losses import LossConfig
from cebmv.training import CollapseError, TrainConfig, train
from cebmv.evaluation import linear_probe


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--gen", type=json.loads, default={})
    ap.add_argument("--aug", type=json.loads, default={})
    ap.add_argument("--train", type=json.loads, default={})
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--betas", type=float, nargs="+", default=[0.0, 1.0, 2.0])
    ap.add_argument("--label", default="candidate")
    ap.add_argument("--pair", default="contrastive",
                    choices=["contrastive", "bootstrap"])
    args = ap.parse_args()

    gen = GeneratorConfig(**{"n_train": 8192, "n_test": 2048, **args.gen})
    aug = AugmentConfig(**args.aug)
    ds = generate_dataset(gen)
    train_kw = {"epochs": 30, "batch_size": 256, "base_lr": 0.1,
                "warmup_epochs": 3, **args.train}
    stack_kw = train_kw.pop("stack", {})
    if "trunk_hidden" in stack_kw:
        stack_kw["trunk_hidden"] = tuple(stack_kw["trunk_hidden"])
    loss_kw = train_kw.pop("loss", {})

    def one(variant, beta, seed):
        loss = replace(LossConfig.defaults(variant), **loss_kw)
        if beta is not None:
            loss = replace(loss, beta=beta)
        cfg = TrainConfig(loss=loss, augment=aug,
                          stack=StackConfig(variant=variant, input_dim=gen.total_dim,
                                            **stack_kw),
                          seed=seed, **train_kw)
        try:
            res = train(cfg, ds)
        except CollapseError:
            return None
        probe_kw = dict(ridge_grid=(1e-4,), iters=300)
        full, _ = linear_probe(res.stack, ds, seed=0, **probe_kw)
        few, _ = linear_probe(res.stack, ds, label_fraction=0.1, seed=0, **probe_kw)
        return dict(full=full.top1, few=few.top1, brier=full.brier,
                    spread=res.metrics[-1]["spread"],
                    i_yz=res.metrics[-1].get("i_yz_mean", float("nan")))


    plain, comp = (("simclr", "c_simclr") if args.pair == "contrastive"
                   else ("byol", "c_byol"))
    t0 = time.time()
    rows = {}
    for seed in args.seeds:
        rows[(plain, None, seed)] = one(plain, None, seed)
        for beta in args.betas:
            rows[(comp, beta, seed)] = one(comp, beta, seed)

    def agg(variant, beta):
        cells = [rows[(variant, beta, s)] for s in args.seeds]
        n_collapse = sum(c is None for c in cells)
        ok = [c for c in cells if c is not None]
        if not ok:
            return f"collapse {n_collapse}/{len(cells)}"
        m = {k: float(np.mean([c[k] for c in ok])) for k in ok[0]}
        return (f"full={m['full']:.4f} few={m['few']:.4f} brier={m['brier']:.4f} "
                f"spread={m['spread']:.4f} i_yz={m['i_yz']:.3f} "
                f"collapse={n_collapse}/{len(cells)}")

    print(f"== {args.label} gen={args.gen} aug={args.aug} train={args.train} "
          f"seeds={args.seeds} ({time.time()-t0:.0f}s)")
    print(f"  {plain:11s} : {agg(plain, None)}")
    for beta in args.betas:
        print(f"  {comp} b={beta:<3g}: {agg(comp, beta)}")
    for (variant, beta, seed), cell in rows.items():
        print(f"    {variant} b={beta} s={seed}: "
              + ("COLLAPSE" if cell is None else
                 f"full={cell['full']:.4f} few={cell['few']:.4f} spread={cell['spread']:.4f}"))


if __name__ == "__main__":
    main()

"""Two-view training loop over the synthetic records.

One step: draw a batch by epoch permutation, build two augmented views
from per-(epoch, step, view) streams, assemble the variant's objective,
backpropagate, and update with SGD momentum.  Weight decay is decoupled
(parameters shrink by lr * wd before the momentum step) and skips
standardization gains/biases.  Bootstrap variants finish each step with
an EMA target update on the half-cosine schedule.

The learning rate warms up linearly, then follows a half-cosine to zero,
with the peak scaled by batch_size / 256.

Collapse policy: a non-finite loss, or the batch spread of the unit
projections falling below ``collapse_floor``, aborts the run with a
CollapseError carrying a diagnosis record (the spread of unit rows is
1 - |mean row|^2, the trace of their covariance, which is 0 exactly when
every row coincides).  Nothing tries to recover: a collapsed compressed
run is itself a result.

Every random draw comes from named SeedSequence streams of the config
seed, so a rerun with the same resolved config is bit-identical.
"""

from __future__ import annotations

import json
import math
import pathlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import losses as losses_mod
from .data import AugmentConfig, Dataset, augment_batch, view_pair_rng
from .encoders import EmaSchedule, EncoderStack, StackConfig

_BOOTSTRAP = ("byol", "c_byol")


class CollapseError(RuntimeError):
    """Representation collapse or non-finite loss; carries a diagnosis."""

    def __init__(self, record: dict):
        super().__init__(f"training collapsed: {record}")
        self.record = record


@dataclass(frozen=True)
class TrainConfig:
    loss: losses_mod.LossConfig
    stack: StackConfig
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    epochs: int = 30
    batch_size: int = 256
    base_lr: float = 0.2
    warmup_epochs: int = 3
    momentum: float = 0.9
    weight_decay: float = 1e-6
    alpha_base: float = 0.99
    seed: int = 0
    collapse_floor: float = 1e-6

    def __post_init__(self):
        if self.loss.variant != self.stack.variant:
            raise ValueError(f"loss variant {self.loss.variant!r} != stack variant "
                             f"{self.stack.variant!r}")
        if self.epochs < 0 or self.batch_size < 2:
            raise ValueError("need epochs >= 0 and batch_size >= 2")
        if not (0 <= self.warmup_epochs <= self.epochs):
            raise ValueError("warmup_epochs must lie in [0, epochs]")
        for name in ("base_lr", "momentum", "weight_decay"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def effective_lr(self) -> float:
        return self.base_lr * self.batch_size / 256.0


@dataclass
class TrainResult:
    stack: EncoderStack
    metrics: list[dict]
    checkpoint_path: pathlib.Path | None = None
    metrics_path: pathlib.Path | None = None


def cosine_lr(step: int, total_steps: int, warmup_steps: int, peak_lr: float) -> float:
    """Linear 0 -> peak over warmup, half-cosine peak -> 0 afterwards."""
    if total_steps < 1 or not (0 <= warmup_steps < total_steps):
        raise ValueError(f"need 0 <= warmup_steps < total_steps, got "
                         f"{warmup_steps}, {total_steps}")
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps > 0 and step < warmup_steps:
        return peak_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return peak_lr * (math.cos(math.pi * progress) + 1.0) / 2.0


def _unit_row_spread(rows: np.ndarray) -> float:
    center = rows.mean(axis=0)
    return float(1.0 - center @ center)


def _variant_loss(stack: EncoderStack, view_a: np.ndarray, view_b: np.ndarray,
                  cfg: losses_mod.LossConfig, rng: np.random.Generator):
    """Returns (breakdown, spread diagnostic) for one step."""
    xa, xb = ad.constant(view_a), ad.constant(view_b)
    if cfg.variant in ("simclr", "c_simclr"):
        _, r_x = stack.project_unit(xa, training=True)
        _, r_y = stack.project_unit(xb, training=True)
        if cfg.variant == "simclr":
            bd = losses_mod.simclr_loss(r_x, r_y, cfg.temperature)
        else:
            bd = losses_mod.c_simclr_loss(r_x, r_y, cfg, rng)
        return bd, _unit_row_spread(r_x.data)
    if cfg.variant == "byol":
        def direction(x_on, x_tgt):
            pred = stack.predictor_unit(x_on, training=True)
            target = stack.target_unit(x_tgt, training=True)
            return losses_mod.byol_loss(pred, target, cfg.byol_weight), pred
        bd_a, pred_a = direction(xa, xb)
        bd_b, _ = direction(xb, xa)
        return losses_mod.combine_bidirectional(bd_a, bd_b), _unit_row_spread(pred_a.data)
    if cfg.variant == "c_byol":
        def direction(x_on, x_other):
            mu_e = stack.predictor_unit(x_on, training=True)
            y_same = stack.target_unit(x_on, training=True)
            mu_b = stack.backward_mean_unit(y_same, training=True)
            y_other = stack.target_unit(x_other, training=True)
            bd = losses_mod.c_byol_loss(mu_e, y_same, mu_b, y_other, stack.decode, cfg, rng)
            return bd, mu_e
        bd_a, mu_a = direction(xa, xb)
        bd_b, _ = direction(xb, xa)
        return losses_mod.combine_bidirectional(bd_a, bd_b), _unit_row_spread(mu_a.data)
    raise ValueError(f"unknown variant {cfg.variant!r}")


class _SgdMomentum:
    def __init__(self, stack: EncoderStack, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.params = stack.trainable_parameters()
        self.buffers = {name: np.zeros_like(t.data) for name, t, _ in self.params}

    def step(self, lr: float) -> None:
        for name, tensor, decays in self.params:
            grad = tensor.grad
            if grad is None:
                continue
            new = tensor.data
            if decays and self.weight_decay > 0.0:
                new = new * (1.0 - lr * self.weight_decay)
            buf = self.momentum * self.buffers[name] + grad
            self.buffers[name] = buf
            tensor.assign_(new - lr * buf)
            tensor.zero_grad()


def train(cfg: TrainConfig, dataset: Dataset, out_dir=None,
          checkpoint_meta: dict | None = None) -> TrainResult:
    n_train = dataset.x_train.shape[0]
    steps_per_epoch = n_train // cfg.batch_size
    if steps_per_epoch < 1:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds the training split {n_train}")
    total_steps = cfg.epochs * steps_per_epoch  # 0 epochs: checkpoint == init
    warmup_steps = cfg.warmup_epochs * steps_per_epoch

    stack = EncoderStack(cfg.stack, seed=cfg.seed)
    optimizer = _SgdMomentum(stack, cfg.momentum, cfg.weight_decay)
    ema = (EmaSchedule(cfg.alpha_base, total_steps)
           if cfg.stack.variant in _BOOTSTRAP and total_steps > 0 else None)

    out_dir = pathlib.Path(out_dir) if out_dir is not None else None
    metrics: list[dict] = []
    metrics_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.jsonl"
        metrics_path.write_text("")

    def emit(record: dict) -> None:
        metrics.append(record)
        if metrics_path is not None:
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    step_idx = 0
    try:
        for epoch in range(cfg.epochs):
            perm = np.random.default_rng([cfg.seed, 8, epoch]).permutation(n_train)
            sums: dict[str, float] = {}
            last_lr = 0.0
            last_alpha = None
            for s in range(steps_per_epoch):
                batch = dataset.x_train[perm[s * cfg.batch_size:(s + 1) * cfg.batch_size]]
                view_a = augment_batch(batch, dataset.cfg, cfg.augment,
                                       view_pair_rng(cfg.seed, epoch, s, 0))
                view_b = augment_batch(batch, dataset.cfg, cfg.augment,
                                       view_pair_rng(cfg.seed, epoch, s, 1))
                loss_rng = np.random.default_rng([cfg.seed, 9, epoch, s])
                try:
                    breakdown, spread = _variant_loss(stack, view_a, view_b, cfg.loss, loss_rng)
                    loss_val = breakdown.total.item()
                except ad.NonFiniteError as exc:
                    raise CollapseError({"event": "collapse", "reason": "non_finite_loss",
                                         "detail": str(exc), "epoch": epoch,
                                         "step": step_idx}) from exc
                if not math.isfinite(loss_val):
                    raise CollapseError({"event": "collapse", "reason": "non_finite_loss",
                                         "epoch": epoch, "step": step_idx})
                if spread < cfg.collapse_floor:
                    raise CollapseError({"event": "collapse", "reason": "zero_batch_variance",
                                         "spread": spread, "epoch": epoch, "step": step_idx,
                                         "loss": loss_val})

                ad.backward(breakdown.total)
                last_lr = cosine_lr(step_idx, total_steps, warmup_steps, cfg.effective_lr)
                optimizer.step(last_lr)
                if ema is not None:
                    last_alpha = ema.alpha(step_idx)
                    stack.ema_update(last_alpha)

                for key, val in breakdown.scalars().items():
                    sums[key] = sums.get(key, 0.0) + val
                sums["spread"] = sums.get("spread", 0.0) + spread
                step_idx += 1

            record = {key: val / steps_per_epoch for key, val in sums.items()}
            record.update({"epoch": epoch, "lr": last_lr})
            if last_alpha is not None:
                record["alpha"] = last_alpha
            emit(record)
    except CollapseError as exc:
        emit(exc.record)
        raise

    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = out_dir / "stack.ckpt"
        meta = dict(checkpoint_meta or {})
        meta.setdefault("train_config", _config_digest(cfg))
        ckpt.save_checkpoint(checkpoint_path, stack, meta=meta)
    return TrainResult(stack=stack, metrics=metrics, checkpoint_path=checkpoint_path,
                       metrics_path=metrics_path)


def _config_digest(cfg: TrainConfig) -> dict:
    out = asdict(cfg)
    out["effective_lr"] = cfg.effective_lr
    return out

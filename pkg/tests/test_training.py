"""Training loop: schedule endpoints, optimizer semantics, determinism,
collapse policy, and short end-to-end runs for every variant."""

import json
import math

import numpy as np
import pytest

from cebmv import autodiff as ad
from cebmv import checkpoint as ckpt
from cebmv import losses as losses_mod
from cebmv.data import AugmentConfig, GeneratorConfig, generate_dataset
from cebmv.encoders import EncoderStack, StackConfig
from cebmv.training import (CollapseError, TrainConfig, _SgdMomentum, cosine_lr,
                            train)

TINY_GEN = GeneratorConfig(n_classes=4, content_dim=4, nuisance_dim=6, spurious_dim=4,
                           n_train=256, n_test=64, seed=3)
TINY_STACK = dict(input_dim=TINY_GEN.total_dim, trunk_hidden=(12,), repr_dim=8,
                  proj_hidden=12, proj_dim=8)


def tiny_config(variant, *, epochs=2, batch_size=64, seed=1, **overrides):
    loss = losses_mod.LossConfig.defaults(variant)
    stack = StackConfig(variant=variant, **TINY_STACK)
    base = dict(epochs=epochs, batch_size=batch_size, base_lr=0.1, warmup_epochs=1,
                seed=seed)
    base.update(overrides)
    return TrainConfig(loss=loss, stack=stack, **base)


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(TINY_GEN)


# ---------------------------------------------------------------- schedule

def test_cosine_lr_endpoints_exact():
    assert cosine_lr(0, 100, 10, 0.3) == 0.0
    assert cosine_lr(10, 100, 10, 0.3) == 0.3
    assert cosine_lr(100, 100, 10, 0.3) == pytest.approx(0.0, abs=1e-18)
    # no warmup: starts at the peak
    assert cosine_lr(0, 100, 0, 0.3) == 0.3


def test_cosine_lr_midpoint_and_monotone_decay():
    # halfway through the cosine phase the rate is half the peak
    assert cosine_lr(55, 100, 10, 0.4) == pytest.approx(0.2, abs=1e-15)
    values = [cosine_lr(s, 50, 5, 1.0) for s in range(5, 51)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_cosine_lr_rejects_bad_arguments():
    with pytest.raises(ValueError):
        cosine_lr(0, 10, 10, 0.1)
    with pytest.raises(ValueError):
        cosine_lr(11, 10, 0, 0.1)
    with pytest.raises(ValueError):
        cosine_lr(-1, 10, 0, 0.1)


# ---------------------------------------------------------------- config

def test_config_variant_mismatch_rejected():
    with pytest.raises(ValueError, match="variant"):
        TrainConfig(loss=losses_mod.LossConfig.defaults("simclr"),
                    stack=StackConfig(variant="byol", **TINY_STACK))


def test_effective_lr_scales_with_batch():
    cfg = tiny_config("simclr", batch_size=64, base_lr=0.2)
    assert cfg.effective_lr == pytest.approx(0.05)
    cfg = tiny_config("simclr", batch_size=256, base_lr=0.2)
    assert cfg.effective_lr == pytest.approx(0.2)


# ---------------------------------------------------------------- optimizer

def test_sgd_momentum_matches_manual_update():
    stack = EncoderStack(StackConfig(variant="simclr", **TINY_STACK), seed=0)
    opt = _SgdMomentum(stack, momentum=0.9, weight_decay=0.01)
    name, tensor, decays = next(p for p in opt.params if p[2])

    p0 = tensor.data.copy()
    ad.backward(ad.sum_all(ad.square(tensor)))
    g1 = tensor.grad.copy()
    np.testing.assert_allclose(g1, 2.0 * p0, atol=1e-15)
    opt.step(lr=0.1)
    expect = p0 * (1.0 - 0.1 * 0.01) - 0.1 * g1
    np.testing.assert_array_equal(tensor.data, expect)
    assert tensor.grad is None  # cleared by the step

    # second step folds the momentum buffer in
    p1 = tensor.data.copy()
    ad.backward(ad.sum_all(ad.square(tensor)))
    g2 = tensor.grad.copy()
    opt.step(lr=0.1)
    expect = p1 * (1.0 - 0.1 * 0.01) - 0.1 * (0.9 * g1 + g2)
    np.testing.assert_array_equal(tensor.data, expect)


def test_weight_decay_skips_flagged_parameters():
    stack = EncoderStack(StackConfig(variant="simclr", **TINY_STACK), seed=0)
    opt = _SgdMomentum(stack, momentum=0.0, weight_decay=0.5)
    no_decay = [(n, t) for n, t, d in opt.params if not d]
    assert no_decay, "expected standardization gains/biases in the stack"
    name, tensor = no_decay[0]
    before = tensor.data.copy()
    ad.backward(ad.sum_all(ad.scalar_multiply(tensor, 1.0)))
    grad = tensor.grad.copy()
    opt.step(lr=0.1)
    # pure gradient step, no shrink toward zero
    np.testing.assert_array_equal(tensor.data, before - 0.1 * grad)


def test_params_without_gradients_stay_put():
    stack = EncoderStack(StackConfig(variant="simclr", **TINY_STACK), seed=0)
    opt = _SgdMomentum(stack, momentum=0.9, weight_decay=0.1)
    before = {n: t.data.copy() for n, t, _ in opt.params}
    opt.step(lr=0.1)
    for n, t, _ in opt.params:
        np.testing.assert_array_equal(t.data, before[n])


# ---------------------------------------------------------------- training runs

@pytest.mark.parametrize("variant", ["simclr", "c_simclr", "byol", "c_byol"])
def test_short_run_every_variant(variant, dataset, tmp_path):
    cfg = tiny_config(variant)
    result = train(cfg, dataset, out_dir=tmp_path / variant)
    assert len(result.metrics) == cfg.epochs
    for rec in result.metrics:
        assert math.isfinite(rec["loss"])
        assert rec["spread"] > 0.0
    if variant in ("byol", "c_byol"):
        assert "alpha" in result.metrics[-1]
        assert "byol_term" in result.metrics[-1]
    else:
        assert "alpha" not in result.metrics[-1]
    if variant in ("c_simclr", "c_byol"):
        assert "i_xzy_mean" in result.metrics[-1]


def test_loss_decreases_on_easy_data(dataset):
    cfg = tiny_config("c_simclr", epochs=6)
    result = train(cfg, dataset)
    assert result.metrics[-1]["loss"] < result.metrics[0]["loss"]


def test_rerun_is_bit_identical(dataset):
    cfg = tiny_config("c_byol")
    a = train(cfg, dataset)
    b = train(cfg, dataset)
    sa, sb = a.stack.state_arrays(), b.stack.state_arrays()
    assert sa.keys() == sb.keys()
    for key in sa:
        np.testing.assert_array_equal(sa[key], sb[key])
    assert a.metrics == b.metrics


def test_seed_changes_the_run(dataset):
    a = train(tiny_config("simclr", seed=1), dataset)
    b = train(tiny_config("simclr", seed=2), dataset)
    assert a.metrics[-1]["loss"] != b.metrics[-1]["loss"]


def test_metrics_file_and_checkpoint_round_trip(dataset, tmp_path):
    cfg = tiny_config("simclr")
    result = train(cfg, dataset, out_dir=tmp_path, checkpoint_meta={"tag": "unit"})
    lines = result.metrics_path.read_text().splitlines()
    assert [json.loads(l)["epoch"] for l in lines] == list(range(cfg.epochs))

    loaded, meta = ckpt.load_stack(result.checkpoint_path)
    assert meta["tag"] == "unit"
    assert meta["train_config"]["seed"] == cfg.seed
    ours = result.stack.state_arrays()
    for key, arr in loaded.state_arrays().items():
        np.testing.assert_array_equal(arr, ours[key])


def test_target_network_moves_but_lags(dataset):
    cfg = tiny_config("byol")
    init = EncoderStack(cfg.stack, seed=cfg.seed)
    result = train(cfg, dataset)
    state0 = init.state_arrays()
    state1 = result.stack.state_arrays()
    target_keys = [k for k in state1 if k.startswith("target_")]
    assert target_keys
    moved = sum(not np.array_equal(state0[k], state1[k]) for k in target_keys)
    assert moved > 0
    # the EMA copy trails its online twin rather than mirroring it
    diverged = sum(not np.array_equal(state1[k], state1[k.replace("target_", "", 1)])
                   for k in target_keys)
    assert diverged > 0


def test_collapse_floor_aborts_and_records(dataset, tmp_path):
    # spread of unit rows is at most 1, so a floor above 1 must trip on step 0
    cfg = tiny_config("simclr", collapse_floor=1.5)
    with pytest.raises(CollapseError) as info:
        train(cfg, dataset, out_dir=tmp_path)
    assert info.value.record["reason"] == "zero_batch_variance"
    last = json.loads((tmp_path / "metrics.jsonl").read_text().splitlines()[-1])
    assert last["event"] == "collapse"
    assert last["step"] == 0


def test_batch_larger_than_split_rejected(dataset):
    with pytest.raises(ValueError, match="batch_size"):
        train(tiny_config("simclr", batch_size=512), dataset)


def test_zero_epochs_returns_initialization(dataset):
    cfg = tiny_config("byol", epochs=0, warmup_epochs=0)
    result = train(cfg, dataset)
    assert result.metrics == []
    init = EncoderStack(cfg.stack, seed=cfg.seed).state_arrays()
    got = result.stack.state_arrays()
    assert init.keys() == got.keys()
    for key in init:
        np.testing.assert_array_equal(got[key], init[key])
